//! Central finite-difference oracles for loss and model gradients.
//!
//! Shared by the gradient tests and the acceptance suite. Instances whose
//! inputs sit close to a hinge kink, a Huber transition, a lazy-max tie or a
//! ReLU kink are resampled and counted as skipped.

#![allow(dead_code)]

use mappable::geometry::{sq_dist, Location};
use mappable::losses::{
    combined_loss, nv_loss, vg_loss, LossConfig, NvVariant, TupleGeometry, VgVariant,
};
use mappable::trainer::{Activation, EmbeddingModel, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Minimum distance of every kink argument from its kink.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default)]
pub struct GradStats {
    pub instances: usize,
    pub skipped: usize,
    /// Instances with a nonzero analytic gradient.
    pub active: usize,
    pub max_rel_err: f64,
}

impl GradStats {
    pub fn passed(&self, required: usize) -> bool {
        self.instances >= required && self.max_rel_err < TOLERANCE
    }

    fn record(&mut self, analytic: &[f64], err: f64) {
        self.instances += 1;
        if analytic.iter().any(|g| *g != 0.0) {
            self.active += 1;
        }
        self.max_rel_err = self.max_rel_err.max(err);
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + STEP;
            let up = f(&probe);
            probe[k] = x[k] - STEP;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn split(flat: &[f64], dim: usize) -> Vec<Vec<f64>> {
    flat.chunks(dim).map(<[f64]>::to_vec).collect()
}

/// Which loss a tuple instance exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Vg(VgVariant),
    Nv(NvVariant),
    Combined(VgVariant, NvVariant),
}

impl LossKind {
    pub fn all() -> Vec<LossKind> {
        let nv = [
            NvVariant::Triplet,
            NvVariant::LazyTriplet,
            NvVariant::Quadruplet,
            NvVariant::LazyQuadruplet,
        ];
        let mut kinds = vec![
            LossKind::Vg(VgVariant::Huber),
            LossKind::Vg(VgVariant::Squared),
        ];
        kinds.extend(nv.iter().map(|&v| LossKind::Nv(v)));
        for vg in [VgVariant::Huber, VgVariant::Squared] {
            kinds.extend(nv.iter().map(|&v| LossKind::Combined(vg, v)));
        }
        kinds
    }

    pub fn name(&self) -> String {
        match self {
            LossKind::Vg(v) => format!("vg/{v:?}").to_lowercase(),
            LossKind::Nv(v) => format!("nv/{v:?}").to_lowercase(),
            LossKind::Combined(g, v) => format!("combined/{g:?}+{v:?}").to_lowercase(),
        }
    }
}

struct Tuple {
    dim: usize,
    anchor: Vec<f64>,
    positives: Vec<Vec<f64>>,
    negatives: Vec<Vec<f64>>,
    anchor_loc: Location,
    positive_locs: Vec<Location>,
    config: LossConfig,
}

impl Tuple {
    fn random(rng: &mut ChaCha8Rng, kind: LossKind) -> Self {
        let dim = rng.random_range(2..8);
        let n_pos = rng.random_range(1..4);
        let n_neg = rng.random_range(2..5);
        let wide = Normal::new(0.0, 0.6).unwrap();
        let near = Normal::new(0.0, 0.3).unwrap();
        let anchor: Vec<f64> = (0..dim).map(|_| wide.sample(rng)).collect();
        let around = |rng: &mut ChaCha8Rng, spread: &Normal<f64>| -> Vec<f64> {
            anchor.iter().map(|a| a + spread.sample(rng)).collect()
        };
        let positives: Vec<Vec<f64>> = (0..n_pos).map(|_| around(rng, &near)).collect();
        let negatives: Vec<Vec<f64>> = (0..n_neg).map(|_| around(rng, &wide)).collect();
        let anchor_loc = Location::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let positive_locs = (0..n_pos)
            .map(|_| {
                Location::new(
                    anchor_loc.x + rng.random_range(-0.7..0.7),
                    anchor_loc.y + rng.random_range(-0.7..0.7),
                )
            })
            .collect();
        let alpha = rng.random_range(0.1..1.0);
        let (vg_variant, nv_variant) = match kind {
            LossKind::Vg(g) => (g, NvVariant::Triplet),
            LossKind::Nv(v) => (VgVariant::Huber, v),
            LossKind::Combined(g, v) => (g, v),
        };
        let config = LossConfig {
            lambda: rng.random_range(0.5..4.0),
            alpha,
            gamma: rng.random_range(0.1..2.0),
            huber_delta: rng.random_range(0.05..1.0),
            beta: alpha / 2.0,
            vg_variant,
            nv_variant,
        };
        Self {
            dim,
            anchor,
            positives,
            negatives,
            anchor_loc,
            positive_locs,
            config,
        }
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = self.anchor.clone();
        v.extend(self.positives.iter().flatten());
        v.extend(self.negatives.iter().flatten());
        v
    }

    fn n_pos(&self) -> usize {
        self.positives.len()
    }

    /// Hinge arguments per positive, grouped as the lazy variants group them.
    fn hinge_groups(&self) -> Vec<Vec<f64>> {
        let c = &self.config;
        let quad = c.nv_variant.is_quadruplet();
        let primary = if quad {
            self.negatives.len() - 1
        } else {
            self.negatives.len()
        };
        let mut groups = Vec::new();
        for p in &self.positives {
            let dp = sq_dist(&self.anchor, p);
            groups.push(
                self.negatives[..primary]
                    .iter()
                    .map(|n| dp - sq_dist(&self.anchor, n) + c.alpha)
                    .collect(),
            );
            if quad {
                let aux = self.negatives.last().unwrap();
                groups.push(
                    self.negatives[..primary]
                        .iter()
                        .map(|n| dp - sq_dist(n, aux) + c.beta)
                        .collect(),
                );
            }
        }
        groups
    }

    fn vg_residuals(&self) -> Vec<f64> {
        self.positives
            .iter()
            .zip(&self.positive_locs)
            .map(|(p, l)| {
                self.anchor_loc.sq_dist(l) - self.config.lambda * sq_dist(&self.anchor, p)
            })
            .collect()
    }

    fn near_kink(&self, kind: LossKind) -> bool {
        let uses_nv = !matches!(kind, LossKind::Vg(_));
        let uses_vg = !matches!(kind, LossKind::Nv(_));
        if uses_nv {
            for g in self.hinge_groups() {
                if g.iter().any(|a| a.abs() < KINK_MARGIN) {
                    return true;
                }
                if self.config.nv_variant.is_lazy() {
                    let mut v: Vec<f64> = g.iter().map(|a| a.max(0.0)).collect();
                    v.sort_by(|a, b| b.total_cmp(a));
                    if v.len() > 1 && v[0] > 0.0 && v[0] - v[1] < KINK_MARGIN {
                        return true;
                    }
                }
            }
        }
        if uses_vg && self.config.vg_variant == VgVariant::Huber {
            let d = self.config.huber_delta;
            if self
                .vg_residuals()
                .iter()
                .any(|r| (r.abs() - d).abs() < KINK_MARGIN)
            {
                return true;
            }
        }
        false
    }

    /// Loss value and analytic gradient at a flat feature vector.
    fn evaluate(&self, kind: LossKind, flat: &[f64]) -> (f64, Vec<f64>) {
        let feats = split(flat, self.dim);
        let anchor = &feats[0];
        let positives = &feats[1..1 + self.n_pos()];
        let negatives = &feats[1 + self.n_pos()..];
        let grads = |v: Vec<Vec<f64>>| v.into_iter().flatten().collect::<Vec<f64>>();
        match kind {
            LossKind::Vg(_) => {
                let mut locs = vec![self.anchor_loc];
                locs.extend_from_slice(&self.positive_locs);
                let pairs: Vec<(usize, usize)> = (1..=self.n_pos()).map(|p| (0, p)).collect();
                // negatives are inert for the geometric term
                let r = vg_loss(&feats[..=self.n_pos()], &locs, &pairs, &self.config).unwrap();
                let mut g = grads(r.feature_grads);
                g.resize(flat.len(), 0.0);
                (r.value, g)
            }
            LossKind::Nv(_) => {
                let r = nv_loss(anchor, positives, negatives, &self.config).unwrap();
                (r.value, grads(r.feature_grads))
            }
            LossKind::Combined(..) => {
                let geometry = TupleGeometry {
                    anchor: self.anchor_loc,
                    positives: &self.positive_locs,
                };
                let r =
                    combined_loss(anchor, positives, negatives, geometry, &self.config).unwrap();
                (r.total.value, grads(r.total.feature_grads))
            }
        }
    }
}

/// Checks `instances` random tuples of one loss kind.
pub fn check_loss(kind: LossKind, instances: usize, seed: u64) -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = GradStats::default();
    while stats.instances < instances {
        let t = Tuple::random(&mut rng, kind);
        if t.near_kink(kind) {
            stats.skipped += 1;
            continue;
        }
        let x = t.flat();
        let (_, analytic) = t.evaluate(kind, &x);
        let numeric = central_diff(&|y| t.evaluate(kind, y).0, &x);
        stats.record(&analytic, rel_err(&analytic, &numeric));
    }
    stats
}

/// Checks `instances` random models: the gradient of `Σᵢ ⟨wᵢ, model(oᵢ)⟩`
/// with respect to the parameters against `backward(o, w)`.
pub fn check_model_backward(instances: usize, seed: u64) -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = GradStats::default();
    let normal = Normal::new(0.0, 1.0).unwrap();
    while stats.instances < instances {
        let activation =
            [Activation::Tanh, Activation::Relu, Activation::Identity][rng.random_range(0..3)];
        let depth = rng.random_range(0..3);
        let config = ModelConfig {
            hidden: (0..depth).map(|_| rng.random_range(2..7)).collect(),
            feature_dim: rng.random_range(1..5),
            activation,
            normalize: rng.random_bool(0.5),
        };
        let input_dim = rng.random_range(1..6);
        let model = EmbeddingModel::new(input_dim, &config, &mut rng).unwrap();
        let batch = rng.random_range(1..4);
        let obs: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..input_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let weights: Vec<Vec<f64>> = (0..batch)
            .map(|_| {
                (0..config.feature_dim)
                    .map(|_| normal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let objective = |params: &[f64]| -> f64 {
            let mut m = model.clone();
            m.params_mut().copy_from_slice(params);
            obs.iter()
                .zip(&weights)
                .map(|(o, w)| {
                    m.forward(o)
                        .unwrap()
                        .iter()
                        .zip(w)
                        .map(|(f, w)| f * w)
                        .sum::<f64>()
                })
                .sum()
        };
        let x = model.params().to_vec();
        // a ReLU kink within reach of the step shows up as a first-order
        // jump in the second difference
        let f0 = objective(&x);
        let mut probe = x.clone();
        let kinked = (0..x.len()).any(|k| {
            probe[k] = x[k] + STEP;
            let up = objective(&probe);
            probe[k] = x[k] - STEP;
            let down = objective(&probe);
            probe[k] = x[k];
            (up - 2.0 * f0 + down).abs() > 1e-7 * (1.0 + f0.abs())
        });
        if kinked {
            stats.skipped += 1;
            continue;
        }
        let analytic = model.backward(&obs, &weights).unwrap();
        let numeric = central_diff(&objective, &x);
        stats.record(&analytic, rel_err(&analytic, &numeric));
    }
    stats
}
