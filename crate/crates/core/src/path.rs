//! Discretely sampled paths: a common carrier for occupancy paths, scaled
//! fluctuation paths, fluid solutions, SDE paths and Skorohod inputs.

use crate::{Error, Result};
use serde::Serialize;
use std::io::Write;

/// A time grid with one row of values per coordinate.
///
/// The grid is strictly increasing and starts at `0`; every value is finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledPath {
    pub times: Vec<f64>,
    /// `values[c][j]` is coordinate `c` at `times[j]`.
    pub values: Vec<Vec<f64>>,
}

impl SampledPath {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidParams("path grid is empty".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidParams(format!(
                "path grid must start at 0, got {}",
                times[0]
            )));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidParams(format!(
                    "path grid must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        for row in &values {
            if row.len() != times.len() {
                return Err(Error::InvalidParams(format!(
                    "row length {} does not match grid length {}",
                    row.len(),
                    times.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParams("non-finite path value".into()));
            }
        }
        Ok(SampledPath { times, values })
    }

    /// Single-coordinate path.
    pub fn scalar(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(times, vec![values])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_coords(&self) -> usize {
        self.values.len()
    }

    pub fn coord(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    /// Value of coordinate `c` at the grid point closest-from-below to `t`
    /// (the grid carries cadlag samples, so this is the state at `t`).
    pub fn value_at(&self, c: usize, t: f64) -> f64 {
        let j = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(j) => j,
            Err(0) => 0,
            Err(j) => j - 1,
        };
        self.values[c][j]
    }
}

/// Uniform grid `0, dt, 2dt, ...` staying within `[0, t_end]` (a hair of
/// slack absorbs the division roundoff when `dt` divides `t_end`). Grids
/// from equal `(t_end, dt)` are identical.
pub fn uniform_grid(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t_end > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParams(format!(
            "grid needs t_end > 0 and dt > 0, got t_end={t_end}, dt={dt}"
        )));
    }
    let steps = (t_end / dt + 1e-9).floor().max(1.0) as usize;
    Ok((0..=steps).map(|k| (k as f64 * dt).min(t_end)).collect())
}

/// Formats with `sig` significant digits (scientific notation).
pub fn fmt_sig(v: f64, sig: usize) -> String {
    format!("{:.*e}", sig.saturating_sub(1), v)
}

/// Writes one replicate of a path in the long CSV layout
/// `replicate,time,coord,value`, rows ordered by (time, coord), values with
/// 12 significant digits. `coord_base` is the index given to row 0 (the
/// reflected-SDE simulator emits its pushing process as coordinate 0).
pub fn write_csv_rows<W: Write>(
    w: &mut W,
    replicate: u64,
    path: &SampledPath,
    coord_base: usize,
) -> Result<()> {
    for (j, t) in path.times.iter().enumerate() {
        for (c, row) in path.values.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                replicate,
                fmt_sig(*t, 12),
                coord_base + c,
                fmt_sig(row[j], 12)
            )?;
        }
    }
    Ok(())
}

pub const CSV_HEADER: &str = "replicate,time,coord,value";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(SampledPath::scalar(vec![0.0, 1.0], vec![1.0, 2.0]).is_ok());
        assert!(SampledPath::scalar(vec![0.5, 1.0], vec![1.0, 2.0]).is_err());
        assert!(SampledPath::scalar(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(SampledPath::scalar(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(SampledPath::scalar(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn cadlag_lookup() {
        let p = SampledPath::scalar(vec![0.0, 1.0, 2.0], vec![5.0, 6.0, 7.0]).unwrap();
        assert_eq!(p.value_at(0, 0.0), 5.0);
        assert_eq!(p.value_at(0, 0.99), 5.0);
        assert_eq!(p.value_at(0, 1.0), 6.0);
        assert_eq!(p.value_at(0, 1.5), 6.0);
        assert_eq!(p.value_at(0, 10.0), 7.0);
    }

    #[test]
    fn grid_and_formatting() {
        let g = uniform_grid(1.0, 0.25).unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(fmt_sig(1.0 / 6.0, 12), "1.66666666667e-1");
        assert_eq!(fmt_sig(0.0, 12), "0.00000000000e0");
    }

    #[test]
    fn csv_layout() {
        let p = SampledPath::new(vec![0.0, 1.0], vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut buf = Vec::new();
        write_csv_rows(&mut buf, 7, &p, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("7,0.00000000000e0,1,"));
        assert!(lines[1].starts_with("7,0.00000000000e0,2,"));
        assert!(lines[2].starts_with("7,1.00000000000e0,1,"));
    }
}
