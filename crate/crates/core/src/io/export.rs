//! Snapshot export as 8-bit portable graymaps or CSV grids.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pde::Trajectory;

/// Min-max scales to 0..=255; a constant field maps to mid-gray.
fn to_gray(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values.iter().map(|v| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

fn range(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn pgm(pixels: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Binary PGM of one `h × w` field, min-max scaled.
pub fn field_to_pgm(values: &[f64], h: usize, w: usize) -> Vec<u8> {
    let (lo, hi) = range(values);
    pgm(&to_gray(values, lo, hi), h, w)
}

/// One line per row, comma-separated.
pub fn field_to_csv(values: &[f64], h: usize, w: usize) -> String {
    let mut s = String::new();
    for r in 0..h {
        let row: Vec<String> = values[r * w..(r + 1) * w].iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

pub fn difference(pred: &[f64], truth: &[f64]) -> Vec<f64> {
    pred.iter().zip(truth).map(|(p, t)| p - t).collect()
}

/// Prediction, ground truth and difference side by side, separated by one
/// white column. Prediction and truth share a gray scale.
pub fn panel_pgm(pred: &[f64], truth: &[f64], h: usize, w: usize) -> Vec<u8> {
    let (a, b) = (range(pred), range(truth));
    let (lo, hi) = (a.0.min(b.0), a.1.max(b.1));
    let diff = difference(pred, truth);
    let (dlo, dhi) = range(&diff);
    let panels = [to_gray(pred, lo, hi), to_gray(truth, lo, hi), to_gray(&diff, dlo, dhi)];
    let width = 3 * w + 2;
    let mut px = Vec::with_capacity(width * h);
    for r in 0..h {
        for (i, p) in panels.iter().enumerate() {
            if i > 0 {
                px.push(255);
            }
            px.extend_from_slice(&p[r * w..(r + 1) * w]);
        }
    }
    pgm(&px, h, width)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Pgm,
    Csv,
}

impl ExportFormat {
    /// Chooses by file extension; anything but `.csv` is a graymap.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ExportFormat::Csv,
            _ => ExportFormat::Pgm,
        }
    }
}

fn plane(traj: &Trajectory, t: usize, field: usize) -> Result<&[f64]> {
    if t >= traj.len() || field >= traj.field_count() {
        return Err(Error::Contract(format!(
            "snapshot ({t}, field {field}) out of range: {} snapshots of {} fields",
            traj.len(),
            traj.field_count()
        )));
    }
    let n = traj.height * traj.width;
    Ok(&traj.frame(t)[field * n..(field + 1) * n])
}

pub fn export_snapshot(traj: &Trajectory, t: usize, field: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let v = plane(traj, t, field)?;
    let (h, w) = (traj.height, traj.width);
    match ExportFormat::from_path(path) {
        ExportFormat::Pgm => std::fs::write(path, field_to_pgm(v, h, w))?,
        ExportFormat::Csv => std::fs::write(path, field_to_csv(v, h, w))?,
    }
    Ok(())
}

/// Writes a prediction/truth/difference panel; CSV output holds the difference grid.
pub fn export_panel(
    pred: &Trajectory,
    truth: &Trajectory,
    t: usize,
    field: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let (p, g) = (plane(pred, t, field)?, plane(truth, t, field)?);
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(Error::Shape("prediction and ground truth grids differ".into()));
    }
    let (h, w) = (truth.height, truth.width);
    match ExportFormat::from_path(path) {
        ExportFormat::Pgm => std::fs::write(path, panel_pgm(p, g, h, w))?,
        ExportFormat::Csv => std::fs::write(path, field_to_csv(&difference(p, g), h, w))?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_is_mid_gray() {
        let img = field_to_pgm(&[3.0; 6], 2, 3);
        assert!(img.starts_with(b"P5\n3 2\n255\n"));
        assert!(img[img.len() - 6..].iter().all(|&p| p == 128));
    }

    #[test]
    fn scaling_spans_full_range() {
        let img = field_to_pgm(&[-1.0, 0.0, 1.0, 3.0], 2, 2);
        assert_eq!(&img[img.len() - 4..], &[0, 64, 128, 255]);
    }

    #[test]
    fn csv_shape() {
        let s = field_to_csv(&[1.0, 2.5, -3.0, 4.0], 2, 2);
        assert_eq!(s, "1,2.5\n-3,4\n");
    }

    #[test]
    fn identical_fields_have_zero_difference() {
        let a = [0.3, -0.2, 1.0, 7.0];
        assert!(difference(&a, &a).iter().all(|&d| d == 0.0));
        let img = panel_pgm(&a, &a, 2, 2);
        assert!(img.starts_with(b"P5\n8 2\n255\n"));
    }
}
