use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::geometry::Location;

/// Which similarity transform [`procrustes_align`] may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignOptions {
    pub scale: bool,
    pub allow_reflection: bool,
}

impl AlignOptions {
    /// Uniform scale, rotation, reflection and translation.
    pub fn similarity() -> Self {
        Self {
            scale: true,
            allow_reflection: true,
        }
    }

    /// Rotation, reflection and translation.
    pub fn rigid() -> Self {
        Self {
            scale: false,
            allow_reflection: true,
        }
    }
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self::similarity()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub aligned: Vec<Location>,
    pub rmse: f64,
    pub scale: f64,
    pub rotation: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

/// Least-squares alignment of `estimate` onto `truth` (Umeyama). The RMSE is
/// `sqrt(mean ‖aligned_i − truth_i‖²)` in the units of `truth`.
pub fn procrustes_align(
    estimate: &[Location],
    truth: &[Location],
    options: AlignOptions,
) -> Result<Alignment> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    if truth.len() < 2 {
        return Err(Error::invalid(
            "alignment needs at least two correspondences",
        ));
    }
    let n = truth.len() as f64;
    let v = |p: &Location| Vector2::new(p.x, p.y);
    let mu_e = estimate.iter().map(v).sum::<Vector2<f64>>() / n;
    let mu_t = truth.iter().map(v).sum::<Vector2<f64>>() / n;
    let var_t = truth
        .iter()
        .map(|p| (v(p) - mu_t).norm_squared())
        .sum::<f64>()
        / n;
    if var_t <= 0.0 {
        return Err(Error::Degenerate("all ground-truth points coincide".into()));
    }
    let var_e = estimate
        .iter()
        .map(|p| (v(p) - mu_e).norm_squared())
        .sum::<f64>()
        / n;

    let mut cov = Matrix2::zeros();
    for (e, t) in estimate.iter().zip(truth) {
        cov += (v(t) - mu_t) * (v(e) - mu_e).transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix2::identity();
    if !options.allow_reflection && (u * vt).determinant() < 0.0 {
        s[(1, 1)] = -1.0;
    }
    let rotation = u * s * vt;
    let scale = if options.scale {
        if var_e > 0.0 {
            (Matrix2::from_diagonal(&svd.singular_values) * s).trace() / var_e
        } else {
            0.0
        }
    } else {
        1.0
    };
    let translation = mu_t - rotation * mu_e * scale;
    let aligned: Vec<Location> = estimate
        .iter()
        .map(|p| {
            let q = rotation * v(p) * scale + translation;
            Location::new(q.x, q.y)
        })
        .collect();
    let mse = aligned
        .iter()
        .zip(truth)
        .map(|(a, t)| a.sq_dist(t))
        .sum::<f64>()
        / n;
    Ok(Alignment {
        aligned,
        rmse: mse.sqrt(),
        scale,
        rotation,
        translation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cloud(n: usize, seed: u64) -> Vec<Location> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Location::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
            .collect()
    }

    #[test]
    fn identity_alignment() {
        let pts = cloud(20, 1);
        let a = procrustes_align(&pts, &pts, AlignOptions::similarity()).unwrap();
        assert!(a.rmse < 1e-12);
        assert!((a.scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_and_shifted_is_recovered() {
        let pts = cloud(20, 2);
        let moved: Vec<Location> = pts
            .iter()
            .map(|p| Location::new(-p.y + 4.0, p.x - 7.5))
            .collect();
        for opts in [AlignOptions::rigid(), AlignOptions::similarity()] {
            let a = procrustes_align(&moved, &pts, opts).unwrap();
            assert!(a.rmse < 1e-10, "{opts:?}: {}", a.rmse);
        }
        // mirrored and scaled estimate needs reflection and scale
        let mirrored: Vec<Location> = pts
            .iter()
            .map(|p| Location::new(-2.0 * p.x, 2.0 * p.y))
            .collect();
        assert!(
            procrustes_align(&mirrored, &pts, AlignOptions::similarity())
                .unwrap()
                .rmse
                < 1e-10
        );
        let no_reflect = AlignOptions {
            scale: true,
            allow_reflection: false,
        };
        assert!(procrustes_align(&mirrored, &pts, no_reflect).unwrap().rmse > 1.0);
    }

    #[test]
    fn degenerate_truth_and_bad_shapes() {
        let same = vec![Location::new(1.0, 1.0); 5];
        let pts = cloud(5, 3);
        assert!(matches!(
            procrustes_align(&pts, &same, AlignOptions::default()),
            Err(Error::Degenerate(_))
        ));
        assert!(procrustes_align(&pts[..3], &pts, AlignOptions::default()).is_err());
        assert!(procrustes_align(&pts[..1], &pts[..1], AlignOptions::default()).is_err());
    }

    #[test]
    fn noise_magnitude_is_reported() {
        // per-coordinate noise σ gives an expected RMSE near σ·√2
        let sigma = 0.3;
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut total = 0.0;
        let seeds = 20;
        for seed in 0..seeds {
            let truth = cloud(200, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let est: Vec<Location> = truth
                .iter()
                .map(|p| {
                    Location::new(p.x + normal.sample(&mut rng), p.y + normal.sample(&mut rng))
                })
                .collect();
            total += procrustes_align(&est, &truth, AlignOptions::similarity())
                .unwrap()
                .rmse;
        }
        let mean = total / seeds as f64;
        let expected = sigma * 2f64.sqrt();
        assert!(
            (mean - expected).abs() < 0.2 * expected,
            "mean rmse {mean} vs {expected}"
        );
    }
}
