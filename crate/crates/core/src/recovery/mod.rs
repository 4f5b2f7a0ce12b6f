//! Trajectory recovery from masked distance matrices.
//!
//! The pipeline is: build a masked EDM from λ-scaled feature distances,
//! complete it through a rank-2 Gram factorisation, extract coordinates with
//! classical MDS, optionally refine them with SMACOF, and finally score the
//! result against ground truth after Procrustes alignment.

mod gram;
mod mds;
mod procrustes;
mod smacof;

pub use gram::{complete_gram, geodesic_completion, masked_objective, GramCompletion};
pub use mds::classical_mds;
pub use procrustes::{procrustes_align, AlignOptions, Alignment};
pub use smacof::{smacof, weighted_stress};

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{pairwise_sq_edm, Location, Mask, SquaredDistanceMatrix};
use crate::io::CsvWriter;

/// Squared distances (meters²) together with the mask of trusted entries.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedEdm {
    pub distances: SquaredDistanceMatrix,
    pub mask: Mask,
}

impl MaskedEdm {
    pub fn new(distances: SquaredDistanceMatrix, mask: Mask) -> Result<Self> {
        if distances.len() != mask.len() {
            return Err(Error::DimensionMismatch {
                expected: distances.len(),
                found: mask.len(),
            });
        }
        Ok(Self { distances, mask })
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// Masks a full distance matrix, keeping entries `≤ r²`.
    pub fn threshold(distances: SquaredDistanceMatrix, r: f64) -> Self {
        let limit = r * r;
        let mask = Mask::from_fn(distances.len(), |i, j| distances.get(i, j) <= limit);
        Self { distances, mask }
    }

    /// `D ⊙ M`, with masked-out entries set to zero.
    pub fn masked_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            if self.mask.get(i, j) {
                self.distances.get(i, j)
            } else {
                0.0
            }
        })
    }

    /// Connected components of the mask graph, each sorted, ordered by their
    /// smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut uf = UnionFind::new(n);
        for i in 0..n {
            for j in self.mask.neighbours(i) {
                uf.union(i, j);
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in 0..n {
            groups.entry(uf.find(i)).or_default().push(i);
        }
        let mut comps: Vec<Vec<usize>> = groups.into_values().collect();
        comps.sort_by_key(|c| c[0]);
        comps
    }

    /// Fails with [`Error::Disconnected`] unless the mask graph is connected.
    pub fn ensure_connected(&self) -> Result<()> {
        let comps = self.components();
        if comps.len() > 1 {
            return Err(Error::Disconnected { components: comps });
        }
        Ok(())
    }
}

/// `D = λ·‖fᵢ − fⱼ‖²`, masked in where `D ≤ r1²`.
pub fn build_masked_edm<F: AsRef<[f64]>>(
    features: &[F],
    lambda: f64,
    r1: f64,
) -> Result<MaskedEdm> {
    if !(lambda > 0.0) || !(r1 > 0.0) {
        return Err(Error::invalid("lambda and r1 must be > 0"));
    }
    let d = pairwise_sq_edm(features)?.into_inner() * lambda;
    Ok(MaskedEdm::threshold(SquaredDistanceMatrix::from_raw(d), r1))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecoveryMethod {
    ClassicalMds,
    Smacof,
}

impl RecoveryMethod {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryMethod::ClassicalMds => "classical_mds",
            RecoveryMethod::Smacof => "smacof",
        }
    }
}

/// Recovered planar configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEstimate {
    pub points: Vec<Location>,
    pub method: RecoveryMethod,
    /// RMSE after alignment to ground truth, once computed.
    pub aligned_rmse: Option<f64>,
    /// Stress after every SMACOF iteration, starting with the initial one.
    pub stress_trace: Vec<f64>,
}

impl TrajectoryEstimate {
    pub fn from_points(points: Vec<Location>, method: RecoveryMethod) -> Self {
        Self {
            points,
            method,
            aligned_rmse: None,
            stress_trace: Vec::new(),
        }
    }

    /// Aligns to `truth`, stores the RMSE and returns the alignment.
    pub fn align_to(&mut self, truth: &[Location], options: AlignOptions) -> Result<Alignment> {
        let a = procrustes_align(&self.points, truth, options)?;
        self.aligned_rmse = Some(a.rmse);
        Ok(a)
    }
}

pub fn write_points_csv(path: &Path, points: &[Location]) -> Result<()> {
    let mut w = CsvWriter::new(&["index", "x", "y"]);
    for (i, p) in points.iter().enumerate() {
        w.row(&[i.to_string(), p.x.to_string(), p.y.to_string()]);
    }
    w.write(path)
}

/// Dense matrix as headerless CSV.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    crate::io::write_atomic(path, out.as_bytes())
}

pub fn write_stress_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = CsvWriter::new(&["iteration", "stress"]);
    for (k, s) in trace.iter().enumerate() {
        w.row(&[k.to_string(), s.to_string()]);
    }
    w.write(path)
}
