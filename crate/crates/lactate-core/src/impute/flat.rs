//! Flattened (stay, bin) row space used by the matrix-shaped imputers: each
//! row is one stay-bin feature vector.

use nalgebra::DMatrix;

use crate::data::{AlignedGrid, MISSING};
use crate::error::{Error, Result};

pub(crate) struct FlatView {
    /// `[n_rows, n_features]`; unobserved entries hold the sentinel.
    pub values: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    /// Row provenance: (stay index, bin).
    pub rows: Vec<(usize, usize)>,
}

pub(crate) fn flatten(grid: &AlignedGrid) -> FlatView {
    let d = grid.n_features();
    let n: usize = grid.stays.iter().map(|s| s.n_bins()).sum();
    let mut values = DMatrix::from_element(n, d, MISSING);
    let mut mask = DMatrix::from_element(n, d, false);
    let mut rows = Vec::with_capacity(n);
    let mut r = 0;
    for (si, stay) in grid.stays.iter().enumerate() {
        for b in 0..stay.n_bins() {
            for f in 0..d {
                values[(r, f)] = stay.values[(f, b)];
                mask[(r, f)] = stay.mask[(f, b)];
            }
            rows.push((si, b));
            r += 1;
        }
    }
    FlatView { values, mask, rows }
}

/// Rebuilds a complete grid from `filled`, keeping observed entries
/// bit-identical to the input grid and taking `filled` only where the
/// original mask was false. The result's mask is all-true.
pub(crate) fn write_back(
    grid: &AlignedGrid,
    flat: &FlatView,
    filled: &DMatrix<f64>,
) -> Result<AlignedGrid> {
    let mut out = grid.clone();
    for (r, &(si, b)) in flat.rows.iter().enumerate() {
        for f in 0..grid.n_features() {
            if !grid.stays[si].mask[(f, b)] {
                let v = filled[(r, f)];
                if !v.is_finite() {
                    return Err(Error::data(format!(
                        "imputer produced non-finite value for feature {} of stay {} bin {}",
                        grid.features[f].name, grid.stays[si].descriptor.stay_id, b
                    )));
                }
                out.stays[si].values[(f, b)] = v;
            }
            out.stays[si].mask[(f, b)] = true;
        }
    }
    Ok(out)
}

/// Per-feature means over observed training entries. Features with zero
/// observed entries fall back to 0.0 and are reported in `warnings`.
pub(crate) fn observed_means(flat: &FlatView, names: &[String]) -> (Vec<f64>, Vec<String>) {
    let d = flat.values.ncols();
    let mut means = vec![0.0; d];
    let mut warnings = Vec::new();
    for f in 0..d {
        let (mut sum, mut n) = (0.0, 0usize);
        for r in 0..flat.values.nrows() {
            if flat.mask[(r, f)] {
                sum += flat.values[(r, f)];
                n += 1;
            }
        }
        if n == 0 {
            means[f] = 0.0;
            warnings.push(format!(
                "feature '{}' has no observed training entries; falling back to 0.0",
                names[f]
            ));
        } else {
            means[f] = sum / n as f64;
        }
    }
    (means, warnings)
}
