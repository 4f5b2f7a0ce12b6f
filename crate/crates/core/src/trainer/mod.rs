//! Embedding model, tuple mining and the training loop.

mod mining;
mod model;

pub use mining::{mine_tuple, MiningCounts, PairIndex, TrainingTuple};
pub use model::{Activation, Checkpoint, EmbeddingModel, ModelConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sq_dist, Location, PairRule};
use crate::io::CsvWriter;
use crate::losses::{combined_loss, CombinedLoss, LossConfig, NvVariant, TupleGeometry, VgVariant};

/// Loss settings as they appear in a run configuration. Unset values are
/// derived from the training radii: `lambda` from the untrained model,
/// `huber_delta` as `r1²` and `beta` as `alpha / 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    pub lambda: Option<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub huber_delta: Option<f64>,
    pub beta: Option<f64>,
    pub vg_variant: VgVariant,
    pub nv_variant: NvVariant,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            lambda: None,
            alpha: 0.1,
            gamma: 0.5,
            huber_delta: None,
            beta: None,
            vg_variant: VgVariant::Huber,
            nv_variant: NvVariant::Triplet,
        }
    }
}

impl LossSettings {
    pub fn resolve(&self, r1: f64, lambda: f64) -> Result<LossConfig> {
        let config = LossConfig {
            lambda: self.lambda.unwrap_or(lambda),
            alpha: self.alpha,
            gamma: self.gamma,
            huber_delta: self.huber_delta.unwrap_or(r1 * r1),
            beta: self.beta.unwrap_or(self.alpha / 2.0),
            vg_variant: self.vg_variant,
            nv_variant: self.nv_variant,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Positive radius in meters.
    pub r1: f64,
    /// Negative radius in meters.
    pub r2: f64,
    /// Optional yaw filter for positives, in degrees.
    pub max_heading_deg: Option<f64>,
    pub positives_per_anchor: usize,
    pub negatives_per_anchor: usize,
    pub hard_fraction: f64,
    /// Anchor visits between feature cache refreshes.
    pub cache_refresh_iters: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Tuples accumulated per parameter update.
    pub batch_anchors: usize,
    pub seed: u64,
    pub loss: LossSettings,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            r1: 1.0,
            r2: 4.0,
            max_heading_deg: None,
            positives_per_anchor: 6,
            negatives_per_anchor: 6,
            hard_fraction: 0.5,
            cache_refresh_iters: 400,
            learning_rate: 0.05,
            momentum: 0.0,
            epochs: 30,
            batch_anchors: 2,
            seed: 0,
            loss: LossSettings::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        PairRule::new(self.r1, self.r2, None)?;
        if self.r1 <= 0.0 {
            return Err(Error::invalid("r1 must be > 0"));
        }
        let counts = [
            (self.positives_per_anchor, "positives_per_anchor"),
            (self.negatives_per_anchor, "negatives_per_anchor"),
            (self.cache_refresh_iters, "cache_refresh_iters"),
            (self.epochs, "epochs"),
            (self.batch_anchors, "batch_anchors"),
            (self.model.feature_dim, "model.feature_dim"),
        ];
        for (v, name) in counts {
            if v < 1 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(Error::invalid("hard_fraction must lie in [0, 1]"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.loss.nv_variant.is_quadruplet() && self.negatives_per_anchor < 1 {
            return Err(Error::invalid("quadruplet losses need negatives"));
        }
        // resolve with a placeholder lambda only to validate the rest
        self.loss.resolve(self.r1, 1.0)?;
        Ok(())
    }

    pub fn pair_rule(&self) -> Result<PairRule> {
        PairRule::new(self.r1, self.r2, self.max_heading_deg.map(f64::to_radians))
    }

    fn counts(&self) -> MiningCounts {
        MiningCounts {
            positives: self.positives_per_anchor,
            negatives: self.negatives_per_anchor,
            hard_fraction: self.hard_fraction,
            other_negative: self.loss.nv_variant.is_quadruplet(),
        }
    }
}

/// Observations with their ground-truth poses.
#[derive(Clone, Debug)]
pub struct TrainingSet<'a> {
    pub observations: Vec<&'a [f64]>,
    pub locations: Vec<Location>,
    pub headings: Vec<f64>,
}

impl<'a> TrainingSet<'a> {
    pub fn from_scene(scene: &'a crate::scene::Scene, indices: &[usize]) -> Self {
        Self {
            observations: indices
                .iter()
                .map(|&i| scene.images[i].observation.as_slice())
                .collect(),
            locations: indices.iter().map(|&i| scene.images[i].location).collect(),
            headings: indices.iter().map(|&i| scene.images[i].heading).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Loss of one anchor visit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub nv: f64,
    pub vg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
    /// Anchors that produced a tuple.
    pub anchor_visits: usize,
    pub skipped: usize,
    pub cache_refreshes: usize,
    pub updates: usize,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> CsvWriter {
        let mut w = CsvWriter::new(&["iteration", "loss", "nv_component", "vg_component"]);
        for r in &self.log {
            w.row(&[
                r.iteration.to_string(),
                r.loss.to_string(),
                r.nv.to_string(),
                r.vg.to_string(),
            ]);
        }
        w
    }
}

/// `r1² / max positive squared feature distance` under `features`.
pub fn calibrate_lambda<F: AsRef<[f64]>>(
    features: &[F],
    index: &PairIndex,
    r1: f64,
) -> Result<f64> {
    let max = index
        .positive_pairs()
        .map(|(i, j)| sq_dist(features[i].as_ref(), features[j].as_ref()))
        .fold(0.0, f64::max);
    if max <= 0.0 || !max.is_finite() {
        return Err(Error::Degenerate(
            "cannot calibrate lambda: no positive pair has a nonzero feature distance".into(),
        ));
    }
    Ok(r1 * r1 / max)
}

/// Loss and parameter gradient of a single tuple under the current model.
pub fn tuple_gradient(
    model: &EmbeddingModel,
    data: &TrainingSet<'_>,
    tuple: &TrainingTuple,
    loss: &LossConfig,
) -> Result<(CombinedLoss, Vec<f64>)> {
    let mut members = Vec::with_capacity(2 + tuple.positives.len() + tuple.negatives.len());
    members.push(tuple.anchor);
    members.extend(&tuple.positives);
    members.extend(&tuple.negatives);
    members.extend(tuple.other_negative);
    let obs: Vec<&[f64]> = members.iter().map(|&i| data.observations[i]).collect();
    let feats = model.embed(&obs)?;
    let n_pos = tuple.positives.len();
    let pos_locs: Vec<Location> = tuple.positives.iter().map(|&i| data.locations[i]).collect();
    let geometry = TupleGeometry {
        anchor: data.locations[tuple.anchor],
        positives: &pos_locs,
    };
    let value = combined_loss(
        &feats[0],
        &feats[1..1 + n_pos],
        &feats[1 + n_pos..],
        geometry,
        loss,
    )?;
    let grads = model.backward(&obs, &value.total.feature_grads)?;
    Ok((value, grads))
}

/// Trains an embedding model with SGD over mined tuples.
///
/// Anchors are visited in a seeded random order each epoch. The feature cache
/// used for hard negative mining is recomputed every `cache_refresh_iters`
/// anchor visits (skipped anchors included); parameter updates average the
/// gradients of `batch_anchors` consecutive tuples.
pub fn train(data: &TrainingSet<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::NoTuples("empty training set".into()));
    }
    let input_dim = data.observations[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = EmbeddingModel::new(input_dim, &config.model, &mut rng)?;
    let rule = config.pair_rule()?;
    let headings = config.max_heading_deg.map(|_| data.headings.as_slice());
    let index = PairIndex::new(&data.locations, headings, rule);

    let counts = config.counts();
    let needed_neg = counts.negatives + usize::from(counts.other_negative);
    if !(0..index.len()).any(|i| {
        index.positives_of(i).len() >= counts.positives && index.negatives_of(i).len() >= needed_neg
    }) {
        return Err(Error::NoTuples(format!(
            "no anchor has {} positives within {} m and {} negatives beyond {} m",
            counts.positives, config.r1, needed_neg, config.r2
        )));
    }

    let mut cache = model.embed(&data.observations)?;
    let lambda = match config.loss.lambda {
        Some(l) => l,
        None => calibrate_lambda(&cache, &index, config.r1)?,
    };
    let loss = config.loss.resolve(config.r1, lambda)?;
    log::debug!("training with lambda {lambda}, {} images", data.len());

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut velocity = vec![0.0; model.params().len()];
    let mut pending = vec![0.0; model.params().len()];
    let mut pending_count = 0usize;
    let mut out = TrainOutcome {
        checkpoint: Checkpoint {
            model: model.clone(),
            lambda,
        },
        log: Vec::new(),
        anchor_visits: 0,
        skipped: 0,
        cache_refreshes: 0,
        updates: 0,
    };

    let mut apply = |model: &mut EmbeddingModel,
                     pending: &mut Vec<f64>,
                     count: &mut usize,
                     updates: &mut usize| {
        if *count == 0 {
            return;
        }
        let scale = 1.0 / *count as f64;
        for ((p, g), v) in model
            .params_mut()
            .iter_mut()
            .zip(pending.iter_mut())
            .zip(&mut velocity)
        {
            *v = config.momentum * *v - config.learning_rate * scale * *g;
            *p += *v;
            *g = 0.0;
        }
        *count = 0;
        *updates += 1;
    };

    let mut iteration = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &anchor in &order {
            iteration += 1;
            match mine_tuple(anchor, &index, &cache, counts, &mut rng) {
                Some(tuple) => {
                    let (value, grads) = tuple_gradient(&model, data, &tuple, &loss)?;
                    for (p, g) in pending.iter_mut().zip(&grads) {
                        *p += g;
                    }
                    pending_count += 1;
                    out.anchor_visits += 1;
                    out.log.push(LossRecord {
                        iteration,
                        loss: value.total.value,
                        nv: value.nv,
                        vg: value.vg,
                    });
                    if pending_count == config.batch_anchors {
                        apply(
                            &mut model,
                            &mut pending,
                            &mut pending_count,
                            &mut out.updates,
                        );
                    }
                }
                None => out.skipped += 1,
            }
            if iteration.is_multiple_of(config.cache_refresh_iters) {
                cache = model.embed(&data.observations)?;
                out.cache_refreshes += 1;
            }
        }
        apply(
            &mut model,
            &mut pending,
            &mut pending_count,
            &mut out.updates,
        );
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Degenerate(
            "training diverged to non-finite parameters".into(),
        ));
    }
    out.checkpoint.model = model;
    Ok(out)
}
