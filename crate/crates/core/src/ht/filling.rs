use super::model::build_histogram;
use super::transform::AffineTransform;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Grid resolution per axis of the filling-rate diagnostic.
pub const FILLING_GRID: usize = 40;

/// Fraction of non-zero cells of a fixed `40 x 40` grid over the bounding
/// box of the 2-D points `x`.
///
/// With no transforms this is the plain histogram of `x` on the grid.
/// Otherwise a grid cell counts as filled when the averaged transformed
/// histogram is non-zero at the cell centre, i.e. when the centre lands in
/// an occupied lattice cell of at least one transform.
pub fn filling_rate(x: &FeatureMatrix, transforms: &[AffineTransform]) -> Result<f64> {
    if x.cols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: x.cols(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("no points for the filling rate".into()));
    }
    let (lo, hi) = bounds(x);
    let width = [hi[0] - lo[0], hi[1] - lo[1]];
    if !(width[0] > 0.0 && width[1] > 0.0) {
        return Err(Error::DegenerateData(
            "bounding box has zero width along an axis".into(),
        ));
    }
    let g = FILLING_GRID;
    let total = (g * g) as f64;

    if transforms.is_empty() {
        let mut filled = vec![false; g * g];
        let bin = |v: f64, a: usize| (((v - lo[a]) / width[a] * g as f64) as usize).min(g - 1);
        for r in x.iter_rows() {
            filled[bin(r[0], 0) * g + bin(r[1], 1)] = true;
        }
        return Ok(filled.iter().filter(|&&f| f).count() as f64 / total);
    }

    let histograms = transforms
        .iter()
        .map(|t| {
            if t.dim() != 2 {
                return Err(Error::DimensionMismatch {
                    expected: 2,
                    got: t.dim(),
                });
            }
            build_histogram(t, x)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut filled = 0usize;
    let mut cell = [0i64; 2];
    for i in 0..g {
        for j in 0..g {
            let c = [
                lo[0] + (i as f64 + 0.5) * width[0] / g as f64,
                lo[1] + (j as f64 + 0.5) * width[1] / g as f64,
            ];
            let hit = transforms
                .iter()
                .zip(&histograms)
                .any(|(t, h)| t.cell_into(&c, &mut cell) && h.count(&cell) > 0);
            filled += usize::from(hit);
        }
    }
    Ok(filled as f64 / total)
}

fn bounds(x: &FeatureMatrix) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for r in x.iter_rows() {
        for a in 0..2 {
            lo[a] = lo[a].min(r[a]);
            hi[a] = hi[a].max(r[a]);
        }
    }
    (lo, hi)
}
