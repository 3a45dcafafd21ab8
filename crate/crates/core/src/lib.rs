//! Residual U-Net surrogate for time-dependent PDEs: tensor kernels, reverse-mode
//! autodiff, the network and its adapters, numerical solvers that synthesize
//! training data, the autoregressive training harness, rollout evaluation and
//! on-disk formats.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod optim;
pub mod pde;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
