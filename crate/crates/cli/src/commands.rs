use std::path::{Path, PathBuf};

use log::{info, warn};
use mappable::geometry::{kappa, Location};
use mappable::io::{read_features, write_features, CsvWriter};
use mappable::landmarks::{read_landmarks, write_landmarks};
use mappable::pipeline::{
    embed_scene, evaluate as evaluate_split, recover_sequence, run_experiment, select_landmarks,
    split_scene, train_on_split, ExperimentConfig, ExperimentReport,
};
use mappable::recovery::{
    procrustes_align, write_matrix_csv, write_stress_csv, TrajectoryEstimate,
};
use mappable::scene::{generate_scene, Scene};
use mappable::trainer::Checkpoint;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::Common;

pub const SCENE_FILE: &str = "scene.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const FEATURES_FILE: &str = "features.csv";
pub const LANDMARKS_FILE: &str = "landmarks.csv";

struct Loaded {
    config: ExperimentConfig,
    toml: String,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<Loaded> {
    let mut config = match path {
        None => ExperimentConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            toml::from_str::<ExperimentConfig>(&text).map_err(|e| {
                let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
                match line {
                    Some(l) => {
                        CliError::config(format!("{}:{l}: {}", p.display(), e.message().trim()))
                    }
                    None => CliError::config(format!("{}: {}", p.display(), e.message().trim())),
                }
            })?
        }
    };
    if let Some(s) = seed {
        config = config.with_seed(s);
    }
    config.validate().map_err(CliError::config)?;
    let toml = toml::to_string(&config).map_err(CliError::runtime)?;
    Ok(Loaded { config, toml })
}

fn begin(common: &Common, command: &str) -> CliResult<(Loaded, Manifest)> {
    let loaded = load_config(common.config.as_deref(), common.seed)?;
    ensure_dir(&common.out)?;
    let mut manifest = Manifest::new(command, common.seed, &common.out);
    manifest.add_config(
        &loaded.toml,
        serde_json::to_value(&loaded.config).map_err(CliError::runtime)?,
    );
    Ok((loaded, manifest))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn input(explicit: Option<PathBuf>, out: &Path, default: &str) -> PathBuf {
    explicit.unwrap_or_else(|| out.join(default))
}

fn load_scene(path: &Path, manifest: &mut Manifest) -> CliResult<Scene> {
    let scene = Scene::load(path)?;
    manifest.add_input(path)?;
    Ok(scene)
}

fn load_features(path: &Path, scene: &Scene, manifest: &mut Manifest) -> CliResult<Vec<Vec<f64>>> {
    let features = read_features(path)?;
    if features.len() != scene.len() {
        return Err(CliError::runtime(format!(
            "{}: {} feature rows for a scene of {} images",
            path.display(),
            features.len(),
            scene.len()
        )));
    }
    manifest.add_input(path)?;
    Ok(features)
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    text.push('\n');
    mappable::io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn report(quiet: bool, line: String) {
    if !quiet {
        println!("{line}");
    }
}

pub fn gen_scene(common: &Common) -> CliResult<()> {
    let (loaded, mut manifest) = begin(common, "gen-scene")?;
    let scene = generate_scene(&loaded.config.scene)?;
    let path = common.out.join(SCENE_FILE);
    scene.save(&path)?;
    manifest.add_output(&path)?;
    manifest.write(&common.out)?;
    report(
        common.quiet,
        format!(
            "scene: {} images, {} conditions, obs_dim {} -> {}",
            scene.len(),
            scene.conditions.len(),
            scene.obs_dim,
            path.display()
        ),
    );
    Ok(())
}

pub fn train(common: &Common, scene: Option<PathBuf>) -> CliResult<()> {
    let (loaded, mut manifest) = begin(common, "train")?;
    let cfg = &loaded.config;
    let scene = load_scene(&input(scene, &common.out, SCENE_FILE), &mut manifest)?;
    let split =
        split_scene(&scene, cfg.evaluate.query_condition.as_deref()).map_err(CliError::config)?;
    info!(
        "training on {} images, holding out condition {}",
        split.train.len(),
        split.query_condition
    );
    let outcome = train_on_split(&scene, &split, &cfg.train)?;
    let ckpt = common.out.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&ckpt)?;
    let log_path = common.out.join("train_log.csv");
    outcome.log_csv().write(&log_path)?;
    manifest.add_output(&ckpt)?;
    manifest.add_output(&log_path)?;
    manifest.write(&common.out)?;
    let last = outcome.log.last().map_or(f64::NAN, |r| r.loss);
    report(
        common.quiet,
        format!(
            "trained: {} anchor visits, {} skipped, {} updates, lambda {}, last loss {last} -> {}",
            outcome.anchor_visits,
            outcome.skipped,
            outcome.updates,
            outcome.checkpoint.lambda,
            ckpt.display()
        ),
    );
    Ok(())
}

pub fn embed(
    common: &Common,
    scene: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
) -> CliResult<()> {
    let (_, mut manifest) = begin(common, "embed")?;
    let scene = load_scene(&input(scene, &common.out, SCENE_FILE), &mut manifest)?;
    let ckpt_path = input(checkpoint, &common.out, CHECKPOINT_FILE);
    let ckpt = Checkpoint::load(&ckpt_path)?;
    manifest.add_input(&ckpt_path)?;
    let features = embed_scene(&ckpt.model, &scene)?;
    let path = common.out.join(FEATURES_FILE);
    write_features(&path, &features)?;
    manifest.add_output(&path)?;
    manifest.write(&common.out)?;
    report(
        common.quiet,
        format!(
            "embedded {} images into {} dimensions -> {}",
            features.len(),
            ckpt.model.feature_dim(),
            path.display()
        ),
    );
    Ok(())
}

pub fn landmarks(common: &Common, scene: Option<PathBuf>) -> CliResult<()> {
    let (loaded, mut manifest) = begin(common, "landmarks")?;
    let cfg = &loaded.config;
    let scene = load_scene(&input(scene, &common.out, SCENE_FILE), &mut manifest)?;
    let split =
        split_scene(&scene, cfg.evaluate.query_condition.as_deref()).map_err(CliError::config)?;
    let selected = select_landmarks(&scene, &split, &cfg.landmarks)?;
    let path = common.out.join(LANDMARKS_FILE);
    write_landmarks(&path, &selected, &scene.locations())?;
    manifest.add_output(&path)?;
    manifest.write(&common.out)?;
    report(
        common.quiet,
        format!(
            "selected {} landmarks -> {}",
            selected.len(),
            path.display()
        ),
    );
    Ok(())
}

pub fn evaluate(
    common: &Common,
    scene: Option<PathBuf>,
    features: Option<PathBuf>,
    landmarks: Option<PathBuf>,
) -> CliResult<()> {
    let (loaded, mut manifest) = begin(common, "evaluate")?;
    let cfg = &loaded.config;
    let lm_path = input(landmarks, &common.out, LANDMARKS_FILE);
    let selected = read_landmarks(&lm_path)?;
    if selected.is_empty() {
        return Err(CliError::config(format!(
            "{}: no landmarks to evaluate against",
            lm_path.display()
        )));
    }
    manifest.add_input(&lm_path)?;
    let scene = load_scene(&input(scene, &common.out, SCENE_FILE), &mut manifest)?;
    if let Some(&bad) = selected.iter().find(|&&i| i >= scene.len()) {
        return Err(CliError::runtime(format!(
            "{}: landmark index {bad} out of range",
            lm_path.display()
        )));
    }
    let feats = load_features(
        &input(features, &common.out, FEATURES_FILE),
        &scene,
        &mut manifest,
    )?;
    let split =
        split_scene(&scene, cfg.evaluate.query_condition.as_deref()).map_err(CliError::config)?;
    let result = evaluate_split(&scene, &feats, &split, &selected, &cfg.train, &cfg.evaluate)?;

    let curve_path = common.out.join("accuracy_curve.csv");
    result.curve.write_csv(&curve_path)?;
    let scatter_path = common.out.join("scatter.csv");
    result.scatter.to_csv().write(&scatter_path)?;
    let retrieval_path = common.out.join("retrieval.csv");
    retrieval_csv(&scene, &split.query, &selected, &result.retrieved).write(&retrieval_path)?;
    let summary_path = common.out.join("evaluation.json");
    write_json(
        &summary_path,
        &json!({
            "query_condition": split.query_condition,
            "queries": split.query.len(),
            "landmarks": selected.len(),
            "r1": cfg.train.r1,
            "r2": cfg.train.r2,
            "accuracy_r1": result.accuracy_r1,
            "accuracy_r2": result.accuracy_r2,
            "upper_bound_r1": result.upper_bound_r1,
            "pearson_all": result.pearson_all,
            "pearson_local": result.pearson_local,
            "pearson_radius": result.pearson_radius,
        }),
    )?;
    for p in [&curve_path, &scatter_path, &retrieval_path, &summary_path] {
        manifest.add_output(p)?;
    }
    manifest.write(&common.out)?;
    report(
        common.quiet,
        format!(
            "accuracy@{} {:.4} (bound {:.4}), accuracy@{} {:.4}, pearson {:.4} (within {} m: {:.4})",
            cfg.train.r1,
            result.accuracy_r1,
            result.upper_bound_r1,
            cfg.train.r2,
            result.accuracy_r2,
            result.pearson_all,
            result.pearson_radius,
            result.pearson_local
        ),
    );
    Ok(())
}

fn retrieval_csv(
    scene: &Scene,
    queries: &[usize],
    landmarks: &[usize],
    retrieved: &[usize],
) -> CsvWriter {
    let mut w = CsvWriter::new(&["query", "landmark", "error"]);
    for (&q, &r) in queries.iter().zip(retrieved) {
        let l = landmarks[r];
        let err = scene.images[q].location.dist(&scene.images[l].location);
        w.row(&[q.to_string(), l.to_string(), err.to_string()]);
    }
    w
}

fn trajectory_csv(aligned: &[Location], truth: &[Location], indices: &[usize]) -> CsvWriter {
    let mut w = CsvWriter::new(&["index", "x", "y", "true_x", "true_y"]);
    for ((a, t), i) in aligned.iter().zip(truth).zip(indices) {
        w.row(&[
            i.to_string(),
            a.x.to_string(),
            a.y.to_string(),
            t.x.to_string(),
            t.y.to_string(),
        ]);
    }
    w
}

pub fn recover(
    common: &Common,
    scene: Option<PathBuf>,
    features: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
) -> CliResult<()> {
    let (loaded, mut manifest) = begin(common, "recover")?;
    let cfg = &loaded.config;
    let scene = load_scene(&input(scene, &common.out, SCENE_FILE), &mut manifest)?;
    let feats = load_features(
        &input(features, &common.out, FEATURES_FILE),
        &scene,
        &mut manifest,
    )?;
    let lambda = match cfg.train.loss.lambda {
        Some(l) => l,
        None => {
            let ckpt_path = input(checkpoint, &common.out, CHECKPOINT_FILE);
            let ckpt = Checkpoint::load(&ckpt_path)?;
            manifest.add_input(&ckpt_path)?;
            ckpt.lambda
        }
    };
    let split =
        split_scene(&scene, cfg.evaluate.query_condition.as_deref()).map_err(CliError::config)?;
    let q_feats: Vec<&[f64]> = split.query.iter().map(|&i| feats[i].as_slice()).collect();
    let truth: Vec<Location> = split
        .query
        .iter()
        .map(|&i| scene.images[i].location)
        .collect();
    let rec = recover_sequence(&q_feats, &truth, lambda, cfg.train.r1, &cfg.recover)?;

    let masked_path = common.out.join("masked_edm.csv");
    write_matrix_csv(&masked_path, &rec.masked.masked_matrix())?;
    let completed_path = common.out.join("completed_edm.csv");
    write_matrix_csv(
        &completed_path,
        kappa(rec.completion.gram.matrix())?.matrix(),
    )?;
    let align = cfg.recover.align.options();
    let write_traj = |est: &TrajectoryEstimate, name: &str| -> CliResult<PathBuf> {
        let a = procrustes_align(&est.points, &truth, align)?;
        let path = common.out.join(name);
        trajectory_csv(&a.aligned, &truth, &split.query).write(&path)?;
        Ok(path)
    };
    let mds_path = write_traj(&rec.mds, "trajectory_mds.csv")?;
    let smacof_path = write_traj(&rec.smacof, "trajectory_smacof.csv")?;
    let stress_path = common.out.join("stress.csv");
    write_stress_csv(&stress_path, &rec.smacof.stress_trace)?;
    let len = rec.trajectory_length;
    let summary_path = common.out.join("recovery.json");
    write_json(
        &summary_path,
        &json!({
            "points": truth.len(),
            "lambda": lambda,
            "mask_density": rec.masked.mask.density(),
            "trajectory_length": len,
            "completion_objective_initial": rec.completion.initial_objective,
            "completion_objective": rec.completion.objective,
            "completion_iterations": rec.completion.iterations,
            "completion_converged": rec.completion.converged,
            "smacof_iterations": rec.smacof.stress_trace.len().saturating_sub(1),
            "alignment": format!("{:?}", cfg.recover.align).to_lowercase(),
            "mds_rmse": rec.mds_rmse(),
            "smacof_rmse": rec.smacof_rmse(),
            "mds_rmse_fraction": rec.mds_rmse() / len,
            "smacof_rmse_fraction": rec.smacof_rmse() / len,
            "mds_rmse_similarity": rec.mds_errors.similarity,
            "mds_rmse_rigid": rec.mds_errors.rigid,
            "smacof_rmse_similarity": rec.smacof_errors.similarity,
            "smacof_rmse_rigid": rec.smacof_errors.rigid,
        }),
    )?;
    for p in [
        &masked_path,
        &completed_path,
        &mds_path,
        &smacof_path,
        &stress_path,
        &summary_path,
    ] {
        manifest.add_output(p)?;
    }
    manifest.write(&common.out)?;
    report(
        common.quiet,
        format!(
            "recovered {} points: rmse mds {:.4} m ({:.2}%), smacof {:.4} m ({:.2}%) of a {:.2} m path",
            truth.len(),
            rec.mds_rmse(),
            100.0 * rec.mds_rmse() / len,
            rec.smacof_rmse(),
            100.0 * rec.smacof_rmse() / len,
            len
        ),
    );
    Ok(())
}

const COMPARE_COLUMNS: [&str; 8] = [
    "config",
    "pearson_all",
    "pearson_local",
    "accuracy_r1",
    "accuracy_r2",
    "upper_bound_r1",
    "mds_rmse_fraction",
    "smacof_rmse_fraction",
];

fn compare_row(label: &str, r: &ExperimentReport) -> Vec<String> {
    let (mds, smacof) = match &r.recovery {
        Ok(rec) => (
            rec.mds_rmse() / rec.trajectory_length,
            rec.smacof_rmse() / rec.trajectory_length,
        ),
        Err(e) => {
            warn!("{label}: recovery failed: {e}");
            (f64::NAN, f64::NAN)
        }
    };
    vec![
        label.to_owned(),
        r.eval.pearson_all.to_string(),
        r.eval.pearson_local.to_string(),
        r.eval.accuracy_r1.to_string(),
        r.eval.accuracy_r2.to_string(),
        r.eval.upper_bound_r1.to_string(),
        mds.to_string(),
        smacof.to_string(),
    ]
}

pub fn compare(configs: &[PathBuf], out: &Path, seed: Option<u64>, quiet: bool) -> CliResult<()> {
    if configs.len() != 2 {
        return Err(CliError::usage(format!(
            "compare needs exactly two --config files, got {}",
            configs.len()
        )));
    }
    let loaded = configs
        .iter()
        .map(|p| load_config(Some(p), seed))
        .collect::<CliResult<Vec<_>>>()?;
    ensure_dir(out)?;
    let mut manifest = Manifest::new("compare", seed, out);
    let mut table = CsvWriter::new(&COMPARE_COLUMNS);
    let mut rows = Vec::new();
    for (path, l) in configs.iter().zip(&loaded) {
        manifest.add_config(
            &l.toml,
            serde_json::to_value(&l.config).map_err(CliError::runtime)?,
        );
        manifest.add_input(path)?;
        let label = path.file_stem().map_or_else(
            || path.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        info!("running {label}");
        let r = run_experiment(&l.config)?;
        let row = compare_row(&label, &r);
        table.row(&row);
        rows.push(row);
    }
    let path = out.join("compare.csv");
    table.write(&path)?;
    manifest.add_output(&path)?;
    manifest.write(out)?;
    if !quiet {
        println!(
            "{:<16} {:>12} {:>14} {:>12} {:>12}",
            "config", "pearson", "pearson_local", "acc@r1", "acc@r2"
        );
        for row in &rows {
            let num = |k: usize| row[k].parse::<f64>().unwrap_or(f64::NAN);
            println!(
                "{:<16} {:>12.4} {:>14.4} {:>12.4} {:>12.4}",
                row[0],
                num(1),
                num(2),
                num(3),
                num(4)
            );
        }
    }
    Ok(())
}
