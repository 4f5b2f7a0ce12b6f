//! Synthetic geo-tagged observations standing in for camera images.
//!
//! Poses are laid out along a trajectory at a fixed spacing. Every pose is
//! observed once per appearance condition; the observation is a smooth random
//! Fourier map of location and heading, shifted by a per-condition offset and
//! perturbed by isotropic Gaussian noise.
//!
//! # File format
//!
//! Scenes are stored as whitespace-separated text:
//!
//! ```text
//! # mappable scene v1
//! obs_dim <D>
//! conditions <tag> <tag> ...
//! images <count>
//! <id> <x> <y> <heading> <condition> <v_0> ... <v_{D-1}>
//! ...
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Location;
use crate::io::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    #[default]
    Loop,
    FigureEight,
    RandomWalk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub trajectory: Trajectory,
    pub n_poses: usize,
    /// Number of appearance conditions; every pose is observed once per condition.
    pub conditions: usize,
    pub obs_dim: usize,
    /// Norm of the additive per-condition offset.
    pub condition_offset_scale: f64,
    /// Standard deviation of the per-coordinate observation noise.
    pub noise_sigma: f64,
    /// Distance in meters between consecutive poses.
    pub pose_spacing: f64,
    /// Spatial length scale of the observation map, in meters.
    pub length_scale: f64,
    /// Relative influence of heading on the observation map.
    pub heading_weight: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            trajectory: Trajectory::Loop,
            n_poses: 200,
            conditions: 2,
            obs_dim: 64,
            condition_offset_scale: 1.0,
            noise_sigma: 0.05,
            pose_spacing: 0.15,
            length_scale: 5.0,
            heading_weight: 0.3,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_poses < 2 {
            return Err(Error::invalid("n_poses must be >= 2"));
        }
        if self.conditions < 1 {
            return Err(Error::invalid("conditions must be >= 1"));
        }
        if self.obs_dim < 4 {
            return Err(Error::invalid("obs_dim must be >= 4"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        if !(self.condition_offset_scale >= 0.0 && self.condition_offset_scale.is_finite()) {
            return Err(Error::invalid(
                "condition_offset_scale must be finite and >= 0",
            ));
        }
        if !(self.pose_spacing > 0.0 && self.pose_spacing.is_finite()) {
            return Err(Error::invalid("pose_spacing must be > 0"));
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::invalid("length_scale must be > 0"));
        }
        if !(self.heading_weight >= 0.0 && self.heading_weight.is_finite()) {
            return Err(Error::invalid("heading_weight must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub id: usize,
    pub location: Location,
    /// Trajectory tangent direction in radians.
    pub heading: f64,
    pub condition: String,
    pub observation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub obs_dim: usize,
    pub conditions: Vec<String>,
    /// Condition-major: all poses of the first condition in trajectory order,
    /// then the next condition.
    pub images: Vec<Image>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn locations(&self) -> Vec<Location> {
        self.images.iter().map(|i| i.location).collect()
    }

    pub fn headings(&self) -> Vec<f64> {
        self.images.iter().map(|i| i.heading).collect()
    }

    pub fn observations(&self) -> Vec<&[f64]> {
        self.images
            .iter()
            .map(|i| i.observation.as_slice())
            .collect()
    }

    /// Indices of the images taken under `condition`, in trajectory order.
    pub fn indices_of(&self, condition: &str) -> Vec<usize> {
        (0..self.images.len())
            .filter(|&i| self.images[i].condition == condition)
            .collect()
    }

    /// Checks the structural invariants of a scene.
    pub fn validate(&self) -> Result<()> {
        if self.images.len() < 2 {
            return Err(Error::invalid(format!(
                "a scene needs at least 2 images, found {}",
                self.images.len()
            )));
        }
        let mut ids: Vec<usize> = self.images.iter().map(|i| i.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate image id {}", w[0])));
        }
        for img in &self.images {
            if img.observation.len() != self.obs_dim {
                return Err(Error::invalid(format!(
                    "image {} has {} observation values, expected {}",
                    img.id,
                    img.observation.len(),
                    self.obs_dim
                )));
            }
            if !img.location.is_finite()
                || !img.heading.is_finite()
                || img.observation.iter().any(|v| !v.is_finite())
            {
                return Err(Error::invalid(format!(
                    "image {} has non-finite values",
                    img.id
                )));
            }
            if !self.conditions.contains(&img.condition) {
                return Err(Error::invalid(format!(
                    "image {} has undeclared condition {}",
                    img.id, img.condition
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# mappable scene v1\n");
        let _ = writeln!(out, "obs_dim {}", self.obs_dim);
        let _ = writeln!(out, "conditions {}", self.conditions.join(" "));
        let _ = writeln!(out, "images {}", self.images.len());
        for img in &self.images {
            let _ = write!(
                out,
                "{} {} {} {} {}",
                img.id, img.location.x, img.location.y, img.heading, img.condition
            );
            for v in &img.observation {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let mut header = |key: &str| -> Result<(usize, Vec<String>)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing `{key}` header")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(err(no, format!("expected `{key}` header")));
            }
            Ok((no, parts.map(str::to_owned).collect()))
        };

        let (no, v) = header("obs_dim")?;
        let obs_dim: usize = v
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(no, "obs_dim must be an integer".into()))?;
        let (_, conditions) = header("conditions")?;
        let (no, v) = header("images")?;
        let count: usize = v
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(no, "images must be an integer".into()))?;

        let mut images = Vec::with_capacity(count);
        for (no, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let id_text = fields.first().copied().unwrap_or("?");
            let id: usize = id_text
                .parse()
                .map_err(|_| err(no, format!("invalid image id `{id_text}`")))?;
            if fields.len() != 5 + obs_dim {
                return Err(err(
                    no,
                    format!(
                        "image {id}: expected {obs_dim} observation values, found {}",
                        fields.len().saturating_sub(5)
                    ),
                ));
            }
            let num = |k: usize| -> Result<f64> {
                fields[k]
                    .parse::<f64>()
                    .map_err(|_| err(no, format!("image {id}: invalid number `{}`", fields[k])))
            };
            let observation = (5..fields.len()).map(num).collect::<Result<Vec<_>>>()?;
            images.push(Image {
                id,
                location: Location::new(num(1)?, num(2)?),
                heading: num(3)?,
                condition: fields[4].to_owned(),
                observation,
            });
        }
        if images.len() != count {
            return Err(err(
                0,
                format!("header declares {count} images, found {}", images.len()),
            ));
        }
        let scene = Scene {
            obs_dim,
            conditions,
            images,
        };
        scene.validate().map_err(|e| err(0, e.to_string()))?;
        Ok(scene)
    }
}

/// Noiseless observation map: random Fourier features of location and
/// heading.
#[derive(Clone, Debug)]
pub struct ObservationModel {
    spatial: Vec<[f64; 2]>,
    angular: Vec<[f64; 2]>,
    phase: Vec<f64>,
}

impl ObservationModel {
    pub fn new(config: &SceneConfig, rng: &mut impl Rng) -> Self {
        let dim = config.obs_dim;
        let mut spatial = Vec::with_capacity(dim);
        let mut angular = Vec::with_capacity(dim);
        let mut phase = Vec::with_capacity(dim);
        for _ in 0..dim {
            let w: [f64; 2] = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
            spatial.push([w[0] / config.length_scale, w[1] / config.length_scale]);
            let u: [f64; 2] = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
            angular.push([u[0] * config.heading_weight, u[1] * config.heading_weight]);
            phase.push(rng.random_range(0.0..TAU));
        }
        Self {
            spatial,
            angular,
            phase,
        }
    }

    pub fn dim(&self) -> usize {
        self.phase.len()
    }

    pub fn observe(&self, at: Location, heading: f64) -> Vec<f64> {
        let (s, c) = heading.sin_cos();
        (0..self.dim())
            .map(|k| {
                let w = self.spatial[k];
                let u = self.angular[k];
                (w[0] * at.x + w[1] * at.y + u[0] * c + u[1] * s + self.phase[k]).cos()
            })
            .collect()
    }
}

/// Poses (location and tangent heading) along the configured trajectory.
pub fn trajectory_poses(config: &SceneConfig, rng: &mut impl Rng) -> Vec<(Location, f64)> {
    let n = config.n_poses;
    let step = config.pose_spacing;
    match config.trajectory {
        Trajectory::Loop => resample_closed(|t| [(TAU * t).cos(), (TAU * t).sin()], n, step),
        // lemniscate of Gerono, traversed once
        Trajectory::FigureEight => resample_closed(
            |t| {
                let a = TAU * t;
                [a.sin(), a.sin() * a.cos()]
            },
            n,
            step,
        ),
        Trajectory::RandomWalk => {
            let mut heading: f64 = rng.random_range(-PI..PI);
            let mut at = Location::new(0.0, 0.0);
            let mut poses = Vec::with_capacity(n);
            for _ in 0..n {
                poses.push((at, heading));
                let turn: f64 = StandardNormal.sample(rng);
                heading = wrap_angle(heading + 0.25 * turn);
                at = Location::new(at.x + step * heading.cos(), at.y + step * heading.sin());
            }
            poses
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Samples `n` points at equal arc length along a closed unit-parameter curve
/// scaled so that consecutive points are `step` apart along the curve.
fn resample_closed(curve: impl Fn(f64) -> [f64; 2], n: usize, step: f64) -> Vec<(Location, f64)> {
    const DENSE: usize = 20_000;
    let dense: Vec<[f64; 2]> = (0..=DENSE)
        .map(|k| curve(k as f64 / DENSE as f64))
        .collect();
    let mut cumulative = Vec::with_capacity(dense.len());
    cumulative.push(0.0);
    for k in 1..dense.len() {
        let d = ((dense[k][0] - dense[k - 1][0]).powi(2) + (dense[k][1] - dense[k - 1][1]).powi(2))
            .sqrt();
        cumulative.push(cumulative[k - 1] + d);
    }
    let total = cumulative[DENSE];
    let scale = step * n as f64 / total;

    let param_at = |s: f64| -> f64 {
        let k = cumulative.partition_point(|&c| c < s).clamp(1, DENSE);
        let (c0, c1) = (cumulative[k - 1], cumulative[k]);
        let frac = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
        ((k - 1) as f64 + frac) / DENSE as f64
    };
    (0..n)
        .map(|i| {
            let t = param_at(total * i as f64 / n as f64);
            let p = curve(t);
            let h = 1e-6;
            let (a, b) = (curve(t - h), curve(t + h));
            let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
            (Location::new(scale * p[0], scale * p[1]), heading)
        })
        .collect()
}

/// Generates a scene deterministically from its configuration.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = ObservationModel::new(config, &mut rng);
    let offsets: Vec<Vec<f64>> = (0..config.conditions)
        .map(|_| random_direction(config.obs_dim, &mut rng, config.condition_offset_scale))
        .collect();
    let poses = trajectory_poses(config, &mut rng);
    let conditions: Vec<String> = (0..config.conditions).map(|c| format!("c{c}")).collect();

    let mut images = Vec::with_capacity(config.n_poses * config.conditions);
    for (c, tag) in conditions.iter().enumerate() {
        for &(location, heading) in &poses {
            let mut observation = model.observe(location, heading);
            for (v, o) in observation.iter_mut().zip(&offsets[c]) {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += o + config.noise_sigma * e;
            }
            images.push(Image {
                id: images.len(),
                location,
                heading,
                condition: tag.clone(),
                observation,
            });
        }
    }
    Ok(Scene {
        obs_dim: config.obs_dim,
        conditions,
        images,
    })
}

fn random_direction(dim: usize, rng: &mut impl Rng, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-12 {
            return v.into_iter().map(|x| norm * x / len).collect();
        }
    }
}

/// Total length of a polyline through the given points.
pub fn path_length(points: &[Location]) -> f64 {
    points.windows(2).map(|w| w[0].dist(&w[1])).sum()
}
