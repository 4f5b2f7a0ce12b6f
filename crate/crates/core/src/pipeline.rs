//! End-to-end experiment: scene, training, landmark selection, retrieval
//! evaluation and trajectory recovery on a held-out query condition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{accuracy_curve, top1_retrieve, AccuracyCurve, DistanceScatter};
use crate::geometry::Location;
use crate::landmarks::{greedy_sample, threshold_sample};
use crate::recovery::{
    build_masked_edm, classical_mds, complete_gram, procrustes_align, smacof, AlignOptions,
    GramCompletion, MaskedEdm, RecoveryMethod, TrajectoryEstimate,
};
use crate::scene::{generate_scene, path_length, Scene, SceneConfig};
use crate::trainer::{train, EmbeddingModel, TrainConfig, TrainOutcome, TrainingSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkMethod {
    #[default]
    Greedy,
    Threshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandmarkConfig {
    pub method: LandmarkMethod,
    /// Number of landmarks for greedy sampling.
    pub count: usize,
    /// Minimum spacing in meters for threshold sampling.
    pub r_lm: f64,
    pub seed: u64,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            method: LandmarkMethod::Greedy,
            count: 20,
            r_lm: 1.0,
            seed: 0,
        }
    }
}

impl LandmarkConfig {
    pub fn validate(&self) -> Result<()> {
        match self.method {
            LandmarkMethod::Greedy if self.count == 0 => {
                Err(Error::invalid("landmarks.count must be >= 1"))
            }
            LandmarkMethod::Threshold if !(self.r_lm > 0.0) => {
                Err(Error::invalid("landmarks.r_lm must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Condition held out of training and used as queries; defaults to the
    /// last condition of the scene.
    pub query_condition: Option<String>,
    /// Distance tolerances in meters for the accuracy curve.
    pub tolerances: Vec<f64>,
    /// Radius for the local Pearson diagnostic; defaults to `r2`.
    pub pearson_radius: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            query_condition: None,
            tolerances: (0..=40).map(|k| k as f64 * 0.25).collect(),
            pearson_radius: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    #[default]
    Similarity,
    Rigid,
}

impl AlignMode {
    pub fn options(self) -> AlignOptions {
        match self {
            AlignMode::Similarity => AlignOptions::similarity(),
            AlignMode::Rigid => AlignOptions::rigid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub smacof_iters: usize,
    pub smacof_tol: f64,
    pub align: AlignMode,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            tol: 1e-12,
            smacof_iters: 2_000,
            smacof_tol: 1e-10,
            align: AlignMode::Similarity,
        }
    }
}

/// Every setting of one experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub landmarks: LandmarkConfig,
    pub evaluate: EvalConfig,
    pub recover: RecoverConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.train.validate()?;
        self.landmarks.validate()?;
        if self.evaluate.tolerances.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::invalid("evaluate.tolerances must be >= 0"));
        }
        if self.recover.tol < 0.0 || self.recover.smacof_tol < 0.0 {
            return Err(Error::invalid("recover tolerances must be >= 0"));
        }
        Ok(())
    }

    /// Uses `seed` for scene, training and landmark sampling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scene.seed = seed;
        self.train.seed = seed;
        self.landmarks.seed = seed;
        self
    }
}

/// Training and query image indices of a scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub query_condition: String,
    pub train: Vec<usize>,
    pub query: Vec<usize>,
}

/// Holds out one condition as the query set and trains on the others. With a
/// single condition, even poses train and odd poses query.
pub fn split_scene(scene: &Scene, query_condition: Option<&str>) -> Result<Split> {
    let tag = match query_condition {
        Some(t) => t.to_owned(),
        None => scene
            .conditions
            .last()
            .cloned()
            .ok_or_else(|| Error::invalid("scene has no conditions"))?,
    };
    if !scene.conditions.contains(&tag) {
        return Err(Error::invalid(format!("unknown query condition `{tag}`")));
    }
    let (train, query): (Vec<usize>, Vec<usize>) = if scene.conditions.len() == 1 {
        (0..scene.len()).partition(|i| i % 2 == 0)
    } else {
        (0..scene.len()).partition(|&i| scene.images[i].condition != tag)
    };
    if train.is_empty() || query.len() < 2 {
        return Err(Error::invalid(
            "split leaves too few training or query images",
        ));
    }
    Ok(Split {
        query_condition: tag,
        train,
        query,
    })
}

/// Landmark image indices (into the scene) chosen among the training images.
pub fn select_landmarks(
    scene: &Scene,
    split: &Split,
    config: &LandmarkConfig,
) -> Result<Vec<usize>> {
    config.validate()?;
    let locs: Vec<Location> = split
        .train
        .iter()
        .map(|&i| scene.images[i].location)
        .collect();
    let local = match config.method {
        LandmarkMethod::Greedy => greedy_sample(&locs, config.count, config.seed)?,
        LandmarkMethod::Threshold => threshold_sample(&locs, config.r_lm)?,
    };
    Ok(local.into_iter().map(|k| split.train[k]).collect())
}

pub fn train_on_split(scene: &Scene, split: &Split, config: &TrainConfig) -> Result<TrainOutcome> {
    train(&TrainingSet::from_scene(scene, &split.train), config)
}

/// Features of every scene image.
pub fn embed_scene(model: &EmbeddingModel, scene: &Scene) -> Result<Vec<Vec<f64>>> {
    model.embed(&scene.observations())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub curve: AccuracyCurve,
    pub accuracy_r1: f64,
    pub accuracy_r2: f64,
    pub upper_bound_r1: f64,
    pub pearson_all: f64,
    pub pearson_local: f64,
    pub pearson_radius: f64,
    pub scatter: DistanceScatter,
    pub retrieved: Vec<usize>,
}

/// Retrieval accuracy of the query images against `landmarks`, and the
/// feature/geometry correlation over query pairs.
pub fn evaluate(
    scene: &Scene,
    features: &[Vec<f64>],
    split: &Split,
    landmarks: &[usize],
    train: &TrainConfig,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if landmarks.is_empty() {
        return Err(Error::invalid("no landmarks"));
    }
    if features.len() != scene.len() {
        return Err(Error::DimensionMismatch {
            expected: scene.len(),
            found: features.len(),
        });
    }
    let q_feats: Vec<&[f64]> = split
        .query
        .iter()
        .map(|&i| features[i].as_slice())
        .collect();
    let q_locs: Vec<Location> = split
        .query
        .iter()
        .map(|&i| scene.images[i].location)
        .collect();
    let l_feats: Vec<&[f64]> = landmarks.iter().map(|&i| features[i].as_slice()).collect();
    let l_locs: Vec<Location> = landmarks
        .iter()
        .map(|&i| scene.images[i].location)
        .collect();

    let retrieved = top1_retrieve(&q_feats, &l_feats)?;
    let curve = accuracy_curve(&retrieved, &q_locs, &l_locs, &config.tolerances)?;
    let at = accuracy_curve(&retrieved, &q_locs, &l_locs, &[train.r1, train.r2])?;
    let scatter = DistanceScatter::new(&q_locs, &q_feats)?;
    let radius = config.pearson_radius.unwrap_or(train.r2);
    Ok(EvalReport {
        accuracy_r1: at.accuracy[0],
        accuracy_r2: at.accuracy[1],
        upper_bound_r1: at.upper_bound[0],
        pearson_all: scatter.pearson(None)?,
        pearson_local: scatter.pearson(Some(radius))?,
        pearson_radius: radius,
        curve,
        scatter,
        retrieved,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryReport {
    pub masked: MaskedEdm,
    pub completion: GramCompletion,
    pub mds: TrajectoryEstimate,
    pub smacof: TrajectoryEstimate,
    pub truth: Vec<Location>,
    pub trajectory_length: f64,
    /// Aligned RMSE of the MDS estimate under similarity and rigid alignment.
    pub mds_errors: AlignmentErrors,
    pub smacof_errors: AlignmentErrors,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentErrors {
    pub similarity: f64,
    pub rigid: f64,
}

impl AlignmentErrors {
    pub fn of(points: &[Location], truth: &[Location]) -> Result<Self> {
        Ok(Self {
            similarity: procrustes_align(points, truth, AlignOptions::similarity())?.rmse,
            rigid: procrustes_align(points, truth, AlignOptions::rigid())?.rmse,
        })
    }
}

impl RecoveryReport {
    pub fn mds_rmse(&self) -> f64 {
        self.mds.aligned_rmse.unwrap_or(f64::NAN)
    }

    pub fn smacof_rmse(&self) -> f64 {
        self.smacof.aligned_rmse.unwrap_or(f64::NAN)
    }
}

/// Recovers the planar layout of a query sequence from its features alone and
/// scores it against the true locations.
pub fn recover_sequence(
    features: &[&[f64]],
    truth: &[Location],
    lambda: f64,
    r1: f64,
    config: &RecoverConfig,
) -> Result<RecoveryReport> {
    let masked = build_masked_edm(features, lambda, r1)?;
    let completion = complete_gram(&masked, config.max_iters, config.tol)?;
    let mut mds = TrajectoryEstimate::from_points(
        classical_mds(&completion.gram)?,
        RecoveryMethod::ClassicalMds,
    );
    let mut refined = smacof(&masked, &mds.points, config.smacof_iters, config.smacof_tol)?;
    let mds_errors = AlignmentErrors::of(&mds.points, truth)?;
    let smacof_errors = AlignmentErrors::of(&refined.points, truth)?;
    mds.align_to(truth, config.align.options())?;
    refined.align_to(truth, config.align.options())?;
    Ok(RecoveryReport {
        mds_errors,
        smacof_errors,
        masked,
        completion,
        mds,
        smacof: refined,
        truth: truth.to_vec(),
        trajectory_length: path_length(truth),
    })
}

/// Results of a full in-memory run.
#[derive(Debug)]
pub struct ExperimentReport {
    pub scene: Scene,
    pub split: Split,
    pub training: TrainOutcome,
    pub features: Vec<Vec<f64>>,
    pub landmarks: Vec<usize>,
    pub eval: EvalReport,
    pub recovery: Result<RecoveryReport>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let scene = generate_scene(&config.scene)?;
    let split = split_scene(&scene, config.evaluate.query_condition.as_deref())?;
    let training = train_on_split(&scene, &split, &config.train)?;
    let features = embed_scene(&training.checkpoint.model, &scene)?;
    let landmarks = select_landmarks(&scene, &split, &config.landmarks)?;
    let eval = evaluate(
        &scene,
        &features,
        &split,
        &landmarks,
        &config.train,
        &config.evaluate,
    )?;
    let q_feats: Vec<&[f64]> = split
        .query
        .iter()
        .map(|&i| features[i].as_slice())
        .collect();
    let q_locs: Vec<Location> = split
        .query
        .iter()
        .map(|&i| scene.images[i].location)
        .collect();
    let recovery = recover_sequence(
        &q_feats,
        &q_locs,
        training.checkpoint.lambda,
        config.train.r1,
        &config.recover,
    );
    Ok(ExperimentReport {
        scene,
        split,
        training,
        features,
        landmarks,
        eval,
        recovery,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_holds_out_last_condition() {
        let scene = generate_scene(&SceneConfig {
            n_poses: 10,
            conditions: 3,
            ..Default::default()
        })
        .unwrap();
        let s = split_scene(&scene, None).unwrap();
        assert_eq!(s.query_condition, "c2");
        assert_eq!(s.train.len(), 20);
        assert_eq!(s.query, (20..30).collect::<Vec<_>>());
        assert!(split_scene(&scene, Some("c9")).is_err());

        let single = generate_scene(&SceneConfig {
            n_poses: 10,
            conditions: 1,
            ..Default::default()
        })
        .unwrap();
        let s = split_scene(&single, None).unwrap();
        assert_eq!(s.train, vec![0, 2, 4, 6, 8]);
        assert_eq!(s.query, vec![1, 3, 5, 7, 9]);
    }

    #[test]
    fn landmarks_come_from_training_images() {
        let scene = generate_scene(&SceneConfig {
            n_poses: 40,
            ..Default::default()
        })
        .unwrap();
        let s = split_scene(&scene, None).unwrap();
        let lm = select_landmarks(&scene, &s, &LandmarkConfig::default()).unwrap();
        assert_eq!(lm.len(), 20);
        assert!(lm.iter().all(|i| s.train.contains(i)));
        let bad = LandmarkConfig {
            count: 0,
            ..Default::default()
        };
        assert!(select_landmarks(&scene, &s, &bad).is_err());
    }
}
