//! Training losses over feature vectors with analytic gradients.
//!
//! Feature distances are squared Euclidean, as are geometric distances. The
//! visual-geometric term ties the two together over positive pairs; the
//! negative visual term is a hinge family (triplet, quadruplet and their lazy
//! forms) keeping negatives a margin farther than positives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sq_dist, Location};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VgVariant {
    Squared,
    #[default]
    Huber,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NvVariant {
    #[default]
    Triplet,
    LazyTriplet,
    Quadruplet,
    LazyQuadruplet,
}

impl NvVariant {
    pub fn is_quadruplet(self) -> bool {
        matches!(self, NvVariant::Quadruplet | NvVariant::LazyQuadruplet)
    }

    pub fn is_lazy(self) -> bool {
        matches!(self, NvVariant::LazyTriplet | NvVariant::LazyQuadruplet)
    }
}

/// Fully resolved loss hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Proportionality between squared geometric and squared feature distance.
    pub lambda: f64,
    /// Margin between positive and negative squared feature distances.
    pub alpha: f64,
    /// Weight of the visual-geometric term.
    pub gamma: f64,
    pub huber_delta: f64,
    /// Margin of the second quadruplet hinge.
    pub beta: f64,
    pub vg_variant: VgVariant,
    pub nv_variant: NvVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha: 0.1,
            gamma: 0.5,
            huber_delta: 1.0,
            beta: 0.05,
            vg_variant: VgVariant::Huber,
            nv_variant: NvVariant::Triplet,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.lambda > 0.0, "lambda must be > 0"),
            (self.alpha > 0.0, "alpha must be > 0"),
            (self.gamma >= 0.0, "gamma must be >= 0"),
            (self.huber_delta > 0.0, "huber_delta must be > 0"),
            (self.beta > 0.0, "beta must be > 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::invalid(msg));
            }
        }
        let all = [
            self.lambda,
            self.alpha,
            self.gamma,
            self.huber_delta,
            self.beta,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("loss parameters must be finite"));
        }
        Ok(())
    }
}

/// A scalar loss together with its gradient with respect to every feature
/// vector that entered it, in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub feature_grads: Vec<Vec<f64>>,
}

impl LossValue {
    fn zeros(count: usize, dim: usize) -> Self {
        Self {
            value: 0.0,
            feature_grads: vec![vec![0.0; dim]; count],
        }
    }

    /// `self + weight * other`, elementwise on the gradients.
    pub fn add_scaled(&mut self, other: &LossValue, weight: f64) {
        assert_eq!(self.feature_grads.len(), other.feature_grads.len());
        self.value += weight * other.value;
        for (a, b) in self.feature_grads.iter_mut().zip(&other.feature_grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += weight * y;
            }
        }
    }
}

/// Huber penalty: quadratic inside `[-δ, δ]`, linear outside.
pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`].
pub fn huber_grad(residual: f64, delta: f64) -> f64 {
    if residual.abs() <= delta {
        residual
    } else {
        delta * residual.signum()
    }
}

/// `max{0, d_pos − d_neg + α}`.
pub fn hinge(d_pos: f64, d_neg: f64, alpha: f64) -> f64 {
    (d_pos - d_neg + alpha).max(0.0)
}

fn check_dims<F: AsRef<[f64]>>(features: &[F]) -> Result<usize> {
    let dim = features.first().map(|f| f.as_ref().len()).unwrap_or(0);
    for f in features {
        if f.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: f.as_ref().len(),
            });
        }
    }
    Ok(dim)
}

/// Adds `scale * ∂‖u − v‖²/∂(u, v)` to the gradients of `u` and `v`.
fn accumulate_sq_dist_grad(
    grads: &mut [Vec<f64>],
    feats: &[&[f64]],
    u: usize,
    v: usize,
    scale: f64,
) {
    if scale == 0.0 || u == v {
        return;
    }
    for k in 0..feats[u].len() {
        let d = 2.0 * scale * (feats[u][k] - feats[v][k]);
        grads[u][k] += d;
        grads[v][k] -= d;
    }
}

/// Visual-geometric loss over the given positive pairs:
/// `Σ ρ(‖xᵢ − xⱼ‖² − λ‖fᵢ − fⱼ‖²)` with ρ the Huber penalty or the square.
pub fn vg_loss<F: AsRef<[f64]>>(
    features: &[F],
    locations: &[Location],
    positives: &[(usize, usize)],
    config: &LossConfig,
) -> Result<LossValue> {
    let dim = check_dims(features)?;
    if locations.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: locations.len(),
        });
    }
    let feats: Vec<&[f64]> = features.iter().map(AsRef::as_ref).collect();
    let mut out = LossValue::zeros(feats.len(), dim);
    for &(i, j) in positives {
        if i >= feats.len() || j >= feats.len() {
            return Err(Error::invalid(format!("pair ({i},{j}) out of range")));
        }
        let geo = locations[i].sq_dist(&locations[j]);
        let r = geo - config.lambda * sq_dist(feats[i], feats[j]);
        let (v, dv) = match config.vg_variant {
            VgVariant::Squared => (r * r, 2.0 * r),
            VgVariant::Huber => (
                huber(r, config.huber_delta),
                huber_grad(r, config.huber_delta),
            ),
        };
        out.value += v;
        // ∂r/∂‖fᵢ − fⱼ‖² = −λ
        accumulate_sq_dist_grad(&mut out.feature_grads, &feats, i, j, -config.lambda * dv);
    }
    Ok(out)
}

/// Negative visual loss of one anchor against its positives and negatives.
///
/// Gradients are returned in the order `[anchor, positives.., negatives..]`.
/// The quadruplet variants use the last negative as the auxiliary negative:
/// the triplet part runs over the remaining negatives, and the second hinge
/// `max{0, d(a,p) − d(nₖ, n_aux) + β}` pairs each of them with it. The lazy
/// variants keep only the largest hinge per positive.
pub fn nv_loss<F: AsRef<[f64]>>(
    anchor: &[f64],
    positives: &[F],
    negatives: &[F],
    config: &LossConfig,
) -> Result<LossValue> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid(
            "nv_loss needs at least one positive and one negative",
        ));
    }
    let quad = config.nv_variant.is_quadruplet();
    if quad && negatives.len() < 2 {
        return Err(Error::invalid(
            "quadruplet losses need at least two negatives",
        ));
    }
    let mut feats: Vec<&[f64]> = Vec::with_capacity(1 + positives.len() + negatives.len());
    feats.push(anchor);
    feats.extend(positives.iter().map(AsRef::as_ref));
    feats.extend(negatives.iter().map(AsRef::as_ref));
    let dim = check_dims(&feats)?;

    let n_pos = positives.len();
    let pos_idx = |p: usize| 1 + p;
    let neg_idx = |k: usize| 1 + n_pos + k;
    let (primary, aux) = if quad {
        (negatives.len() - 1, Some(neg_idx(negatives.len() - 1)))
    } else {
        (negatives.len(), None)
    };

    let d_neg: Vec<f64> = (0..primary)
        .map(|k| sq_dist(anchor, feats[neg_idx(k)]))
        .collect();
    let d_aux: Vec<f64> = match aux {
        Some(a) => (0..primary)
            .map(|k| sq_dist(feats[neg_idx(k)], feats[a]))
            .collect(),
        None => Vec::new(),
    };

    let mut out = LossValue::zeros(feats.len(), dim);
    let lazy = config.nv_variant.is_lazy();
    for p in 0..n_pos {
        let d_pos = sq_dist(anchor, feats[pos_idx(p)]);
        // (hinge value, index of the second point of the subtracted distance pair)
        let mut terms: Vec<(f64, usize, usize)> = Vec::new();
        let first: Vec<(f64, usize, usize)> = d_neg
            .iter()
            .enumerate()
            .map(|(k, &dn)| (hinge(d_pos, dn, config.alpha), 0, neg_idx(k)))
            .collect();
        let second: Vec<(f64, usize, usize)> = match aux {
            Some(a) => d_aux
                .iter()
                .enumerate()
                .map(|(k, &dn)| (hinge(d_pos, dn, config.beta), neg_idx(k), a))
                .collect(),
            None => Vec::new(),
        };
        for group in [first, second] {
            if group.is_empty() {
                continue;
            }
            if lazy {
                let best = group
                    .iter()
                    .copied()
                    .fold(None, |acc: Option<(f64, usize, usize)>, t| match acc {
                        Some(b) if b.0 >= t.0 => Some(b),
                        _ => Some(t),
                    })
                    .unwrap();
                terms.push(best);
            } else {
                terms.extend(group);
            }
        }
        for (value, u, v) in terms {
            if value <= 0.0 {
                continue;
            }
            out.value += value;
            accumulate_sq_dist_grad(&mut out.feature_grads, &feats, 0, pos_idx(p), 1.0);
            accumulate_sq_dist_grad(&mut out.feature_grads, &feats, u, v, -1.0);
        }
    }
    Ok(out)
}

/// Loss of a single training tuple split into its two components.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedLoss {
    /// `nv + γ·vg`, gradients ordered `[anchor, positives.., negatives..]`.
    pub total: LossValue,
    pub nv: f64,
    pub vg: f64,
}

/// Locations of the anchor and its positives, used by the geometric term.
#[derive(Clone, Copy, Debug)]
pub struct TupleGeometry<'a> {
    pub anchor: Location,
    pub positives: &'a [Location],
}

/// `L = L_NV + γ·L_VG` for one anchor tuple. The geometric term runs over the
/// anchor–positive pairs.
pub fn combined_loss<F: AsRef<[f64]>>(
    anchor: &[f64],
    positives: &[F],
    negatives: &[F],
    geometry: TupleGeometry<'_>,
    config: &LossConfig,
) -> Result<CombinedLoss> {
    if geometry.positives.len() != positives.len() {
        return Err(Error::DimensionMismatch {
            expected: positives.len(),
            found: geometry.positives.len(),
        });
    }
    let nv = nv_loss(anchor, positives, negatives, config)?;
    let mut total = nv.clone();
    let mut vg_value = 0.0;
    if config.gamma > 0.0 {
        let mut feats: Vec<&[f64]> = Vec::with_capacity(1 + positives.len());
        feats.push(anchor);
        feats.extend(positives.iter().map(AsRef::as_ref));
        let mut locs = Vec::with_capacity(feats.len());
        locs.push(geometry.anchor);
        locs.extend_from_slice(geometry.positives);
        let pairs: Vec<(usize, usize)> = (1..feats.len()).map(|p| (0, p)).collect();
        let mut vg = vg_loss(&feats, &locs, &pairs, config)?;
        vg.feature_grads
            .resize(total.feature_grads.len(), vec![0.0; anchor.len()]);
        vg_value = vg.value;
        total.add_scaled(&vg, config.gamma);
    }
    Ok(CombinedLoss {
        nv: nv.value,
        vg: vg_value,
        total,
    })
}
