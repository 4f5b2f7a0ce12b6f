//! Retrieval localization and distance diagnostics.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{sq_dist, Location};
use crate::io::CsvWriter;

/// Index of the nearest landmark feature for every query; ties go to the
/// smallest landmark index.
pub fn top1_retrieve<Q: AsRef<[f64]>, L: AsRef<[f64]>>(
    queries: &[Q],
    landmarks: &[L],
) -> Result<Vec<usize>> {
    if landmarks.is_empty() {
        return Err(Error::invalid("no landmarks to retrieve from"));
    }
    let dim = landmarks[0].as_ref().len();
    for f in landmarks
        .iter()
        .map(AsRef::as_ref)
        .chain(queries.iter().map(AsRef::as_ref))
    {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: f.len(),
            });
        }
    }
    Ok(queries
        .iter()
        .map(|q| {
            let q = q.as_ref();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, l) in landmarks.iter().enumerate() {
                let d = sq_dist(q, l.as_ref());
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect())
}

/// Fraction of correctly localized queries per distance tolerance, together
/// with the best achievable fraction given the landmark layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyCurve {
    pub tolerances: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub upper_bound: Vec<f64>,
}

impl AccuracyCurve {
    /// Accuracy at the first tolerance equal to `t`.
    pub fn accuracy_at(&self, t: f64) -> Option<f64> {
        self.tolerances
            .iter()
            .position(|&x| x == t)
            .map(|k| self.accuracy[k])
    }

    pub fn to_csv(&self) -> CsvWriter {
        let mut w = CsvWriter::new(&["tolerance", "accuracy", "upper_bound"]);
        for k in 0..self.tolerances.len() {
            w.row(&[self.tolerances[k], self.accuracy[k], self.upper_bound[k]]);
        }
        w
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.to_csv().write(path)
    }
}

/// Localization accuracy of `retrieved` landmark indices per tolerance (in
/// meters). Tolerances are evaluated in the given order.
pub fn accuracy_curve(
    retrieved: &[usize],
    query_locations: &[Location],
    landmark_locations: &[Location],
    tolerances: &[f64],
) -> Result<AccuracyCurve> {
    if query_locations.is_empty() {
        return Err(Error::invalid("empty query set"));
    }
    if retrieved.len() != query_locations.len() {
        return Err(Error::DimensionMismatch {
            expected: query_locations.len(),
            found: retrieved.len(),
        });
    }
    if landmark_locations.is_empty() {
        return Err(Error::invalid("no landmarks"));
    }
    if let Some(&bad) = retrieved.iter().find(|&&r| r >= landmark_locations.len()) {
        return Err(Error::invalid(format!(
            "retrieved landmark {bad} out of range"
        )));
    }
    let errors: Vec<f64> = retrieved
        .iter()
        .zip(query_locations)
        .map(|(&r, q)| q.dist(&landmark_locations[r]))
        .collect();
    let best: Vec<f64> = query_locations
        .iter()
        .map(|q| {
            landmark_locations
                .iter()
                .map(|l| q.dist(l))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let n = query_locations.len() as f64;
    let frac = |v: &[f64], t: f64| v.iter().filter(|&&e| e <= t).count() as f64 / n;
    Ok(AccuracyCurve {
        tolerances: tolerances.to_vec(),
        accuracy: tolerances.iter().map(|&t| frac(&errors, t)).collect(),
        upper_bound: tolerances.iter().map(|&t| frac(&best, t)).collect(),
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::invalid("pearson needs at least two samples"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate("zero variance in pearson input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Squared geometric and feature distances of every unordered pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistanceScatter {
    pub geo_sq: Vec<f64>,
    pub feat_sq: Vec<f64>,
}

impl DistanceScatter {
    pub fn new<F: AsRef<[f64]>>(locations: &[Location], features: &[F]) -> Result<Self> {
        if locations.len() != features.len() {
            return Err(Error::DimensionMismatch {
                expected: locations.len(),
                found: features.len(),
            });
        }
        let mut s = Self::default();
        for i in 0..locations.len() {
            for j in (i + 1)..locations.len() {
                s.geo_sq.push(locations[i].sq_dist(&locations[j]));
                s.feat_sq
                    .push(sq_dist(features[i].as_ref(), features[j].as_ref()));
            }
        }
        Ok(s)
    }

    /// Pearson correlation over all pairs, or only pairs whose geometric
    /// distance is at most `radius`.
    pub fn pearson(&self, radius: Option<f64>) -> Result<f64> {
        match radius {
            None => pearson(&self.feat_sq, &self.geo_sq),
            Some(r) => {
                let (f, g): (Vec<f64>, Vec<f64>) = self
                    .feat_sq
                    .iter()
                    .zip(&self.geo_sq)
                    .filter(|(_, &g)| g <= r * r)
                    .map(|(&f, &g)| (f, g))
                    .unzip();
                pearson(&f, &g)
            }
        }
    }

    /// `geo_dist,feat_dist` rows in linear distance units.
    pub fn to_csv(&self) -> CsvWriter {
        let mut w = CsvWriter::new(&["geo_dist", "feat_dist"]);
        for (g, f) in self.geo_sq.iter().zip(&self.feat_sq) {
            w.row(&[g.sqrt(), f.sqrt()]);
        }
        w
    }
}
