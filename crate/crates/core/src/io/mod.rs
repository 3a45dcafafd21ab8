//! Binary checkpoint and trajectory formats plus snapshot export.

pub mod checkpoint;
pub mod export;
pub mod trajectory;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_manifest, checkpoint_to_bytes, load_checkpoint, save_checkpoint, Checkpoint,
};
pub use export::{export_panel, export_snapshot};
pub use trajectory::{read_trajectory, trajectory_from_bytes, trajectory_to_bytes, write_trajectory};
