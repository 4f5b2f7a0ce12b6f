//! Weighted SMACOF (stress majorisation) with the mask as weights.

use nalgebra::DMatrix;

use super::{MaskedEdm, RecoveryMethod, TrajectoryEstimate};
use crate::error::{Error, Result};
use crate::geometry::Location;

/// `Σ_{i<j} m_ij (√D_ij − ‖xᵢ − xⱼ‖)²`.
pub fn weighted_stress(masked: &MaskedEdm, points: &[Location]) -> f64 {
    let n = masked.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in masked.mask.neighbours(i).filter(|&j| j > i) {
            let r = masked.distances.get(i, j).max(0.0).sqrt() - points[i].dist(&points[j]);
            s += r * r;
        }
    }
    s
}

/// Refines `init` by Guttman transforms until the relative stress decrease
/// drops below `tol` or `max_iters` is reached. An iterate that would raise
/// the stress (possible only through rounding) is discarded and ends the
/// run, so the recorded trace never increases.
pub fn smacof(
    masked: &MaskedEdm,
    init: &[Location],
    max_iters: usize,
    tol: f64,
) -> Result<TrajectoryEstimate> {
    let n = masked.len();
    if init.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: init.len(),
        });
    }
    if let Some(i) = (0..n).find(|&i| masked.mask.neighbours(i).next().is_none()) {
        return Err(Error::invalid(format!(
            "point {i} has no masked-in distance"
        )));
    }
    masked.ensure_connected()?;

    // V + 𝟙𝟙ᵀ/n is positive definite for a connected mask graph
    let inv_n = 1.0 / n as f64;
    let mut v = DMatrix::from_element(n, n, inv_n);
    for i in 0..n {
        for j in masked.mask.neighbours(i) {
            v[(i, j)] -= 1.0;
            v[(i, i)] += 1.0;
        }
    }
    let chol = v
        .cholesky()
        .ok_or_else(|| Error::Degenerate("SMACOF weight matrix is not positive definite".into()))?;
    let delta = DMatrix::from_fn(n, n, |i, j| {
        if i != j && masked.mask.get(i, j) {
            masked.distances.get(i, j).max(0.0).sqrt()
        } else {
            0.0
        }
    });

    let mut x = DMatrix::from_fn(n, 2, |i, c| if c == 0 { init[i].x } else { init[i].y });
    let to_points = |x: &DMatrix<f64>| -> Vec<Location> {
        (0..x.nrows())
            .map(|i| Location::new(x[(i, 0)], x[(i, 1)]))
            .collect()
    };
    let mut stress = weighted_stress(masked, &to_points(&x));
    let mut trace = vec![stress];
    for _ in 0..max_iters {
        if stress == 0.0 {
            break;
        }
        // B(X) X
        let mut bx = DMatrix::zeros(n, 2);
        for i in 0..n {
            for j in masked.mask.neighbours(i) {
                let dx = x[(i, 0)] - x[(j, 0)];
                let dy = x[(i, 1)] - x[(j, 1)];
                let d = (dx * dx + dy * dy).sqrt();
                if d > 0.0 {
                    let w = delta[(i, j)] / d;
                    bx[(i, 0)] += w * dx;
                    bx[(i, 1)] += w * dy;
                }
            }
        }
        let next = chol.solve(&bx);
        let next_stress = weighted_stress(masked, &to_points(&next));
        if next_stress > stress {
            break;
        }
        let decrease = (stress - next_stress) / stress;
        x = next;
        stress = next_stress;
        trace.push(stress);
        if decrease < tol {
            break;
        }
    }
    Ok(TrajectoryEstimate {
        points: to_points(&x),
        method: RecoveryMethod::Smacof,
        aligned_rmse: None,
        stress_trace: trace,
    })
}
