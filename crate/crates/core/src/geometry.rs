//! Distance-matrix primitives shared by the rest of the crate.
//!
//! All distances are squared Euclidean. Radii are given in linear meters and
//! squared internally before comparison.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar position in meters.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sq_dist(&self, other: &Location) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &Location) -> f64 {
        self.sq_dist(other).sqrt()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Location {
    fn from(p: [f64; 2]) -> Self {
        Self::new(p[0], p[1])
    }
}

/// Squared Euclidean distance between two equally sized slices.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetric, zero-diagonal matrix of squared distances.
#[derive(Clone, Debug, PartialEq)]
pub struct SquaredDistanceMatrix(DMatrix<f64>);

impl SquaredDistanceMatrix {
    /// Wraps a matrix after checking shape, symmetry and sign.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid(format!(
                "distance matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        for i in 0..n {
            if m[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("nonzero diagonal at {i}")));
            }
            for j in (i + 1)..n {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if !(a >= 0.0 && a.is_finite()) || a != b {
                    return Err(Error::invalid(format!(
                        "entry ({i},{j}) is negative, non-finite or asymmetric"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    pub(crate) fn from_raw(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Binary, symmetric selection of trusted matrix entries. The diagonal is
/// always set.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(DMatrix<bool>);

impl Mask {
    pub fn new(m: DMatrix<bool>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid("mask must be square"));
        }
        let n = m.nrows();
        for i in 0..n {
            if !m[(i, i)] {
                return Err(Error::invalid(format!("mask diagonal unset at {i}")));
            }
            for j in (i + 1)..n {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::invalid(format!("mask asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn full(n: usize) -> Self {
        Self(DMatrix::from_element(n, n, true))
    }

    /// Builds a mask from a symmetric predicate on off-diagonal pairs.
    pub fn from_fn(n: usize, mut keep: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = DMatrix::from_element(n, n, false);
        for i in 0..n {
            m[(i, i)] = true;
            for j in (i + 1)..n {
                let k = keep(i, j);
                m[(i, j)] = k;
                m[(j, i)] = k;
            }
        }
        Self(m)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<bool> {
        &self.0
    }

    /// Off-diagonal neighbours of `i`.
    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&j| j != i && self.0[(i, j)])
    }

    /// Fraction of off-diagonal entries that are set.
    pub fn density(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 1.0;
        }
        let set = self.0.iter().filter(|&&b| b).count() - n;
        set as f64 / (n * (n - 1)) as f64
    }
}

/// Gram matrix of a configuration, `G = XᵀX`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix(DMatrix<f64>);

impl GramMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid(format!(
                "gram matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self(m))
    }

    /// `G = YᵀY` for coordinates stored one point per column.
    pub fn from_coords(coords: &DMatrix<f64>) -> Self {
        Self(coords.transpose() * coords)
    }

    /// Centered Gram matrix of planar points.
    pub fn from_locations(points: &[Location]) -> Self {
        let n = points.len();
        let (mx, my) = mean_xy(points);
        let y = DMatrix::from_fn(2, n, |r, c| {
            if r == 0 {
                points[c].x - mx
            } else {
                points[c].y - my
            }
        });
        Self::from_coords(&y)
    }

    /// Double-centred Gram matrix `-½ J D J` of a squared distance matrix.
    pub fn from_edm(d: &SquaredDistanceMatrix) -> Self {
        Self(double_center(d.matrix()))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Largest absolute row sum, zero for a perfectly centred Gram matrix.
    pub fn max_row_sum(&self) -> f64 {
        self.0.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max)
    }
}

pub(crate) fn mean_xy(points: &[Location]) -> (f64, f64) {
    let n = points.len().max(1) as f64;
    let sx: f64 = points.iter().map(|p| p.x).sum();
    let sy: f64 = points.iter().map(|p| p.y).sum();
    (sx / n, sy / n)
}

/// `-½ J D J` with `J = I - 𝟙𝟙ᵀ/n`.
pub(crate) fn double_center(d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| d.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| d.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (d[(i, j)] - row_means[i] - col_means[j] + grand)
    })
}

/// Pairwise squared Euclidean distances of equally sized vectors.
pub fn pairwise_sq_edm<P: AsRef<[f64]>>(points: &[P]) -> Result<SquaredDistanceMatrix> {
    let n = points.len();
    if n == 0 {
        return Err(Error::invalid("at least one point is required"));
    }
    let dim = points[0].as_ref().len();
    for p in points {
        if p.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.as_ref().len(),
            });
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(points[i].as_ref(), points[j].as_ref());
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    Ok(SquaredDistanceMatrix(m))
}

/// Squared distance matrix of planar locations.
pub fn location_sq_edm(points: &[Location]) -> Result<SquaredDistanceMatrix> {
    let arrays: Vec<[f64; 2]> = points.iter().map(|p| p.to_array()).collect();
    pairwise_sq_edm(&arrays)
}

/// `κ(G) = diag(G)𝟙ᵀ − 2G + 𝟙diag(G)ᵀ`.
///
/// Each entry is evaluated in an order-independent way so the result is
/// exactly symmetric, and rounding below zero is clamped. For a positive
/// semidefinite `G` the clamp only removes round-off.
pub fn kappa(g: &DMatrix<f64>) -> Result<SquaredDistanceMatrix> {
    if !g.is_square() {
        return Err(Error::invalid(format!(
            "kappa needs a square matrix, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    let n = g.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            ((g[(i, i)] + g[(j, j)]) - (g[(i, j)] + g[(j, i)])).max(0.0)
        }
    });
    Ok(SquaredDistanceMatrix(m))
}

/// Absolute heading difference wrapped into `[0, π]`.
pub fn heading_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        2.0 * PI - d
    } else {
        d
    }
}

/// Positive (`≤ r1`) and negative (`≥ r2`) index pairs, `i < j`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairSets {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

/// Thresholds that decide whether two images form a positive or a negative
/// pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairRule {
    pub r1: f64,
    pub r2: f64,
    pub max_heading: Option<f64>,
}

impl PairRule {
    pub fn new(r1: f64, r2: f64, max_heading: Option<f64>) -> Result<Self> {
        if !(r1 >= 0.0 && r1 < r2) || !r2.is_finite() {
            return Err(Error::invalid(format!(
                "radii must satisfy 0 <= r1 < r2, got r1={r1}, r2={r2}"
            )));
        }
        Ok(Self {
            r1,
            r2,
            max_heading,
        })
    }

    pub fn is_positive(
        &self,
        a: &Location,
        b: &Location,
        ha: Option<f64>,
        hb: Option<f64>,
    ) -> bool {
        if a.sq_dist(b) > self.r1 * self.r1 {
            return false;
        }
        match (self.max_heading, ha, hb) {
            (Some(max), Some(ha), Some(hb)) => heading_difference(ha, hb) <= max,
            _ => true,
        }
    }

    pub fn is_negative(&self, a: &Location, b: &Location) -> bool {
        a.sq_dist(b) >= self.r2 * self.r2
    }
}

/// Splits all unordered pairs into positives and negatives. Pairs strictly
/// between `r1` and `r2` are left out of both sets.
pub fn classify_pairs(
    locations: &[Location],
    headings: Option<&[f64]>,
    r1: f64,
    r2: f64,
    max_heading: Option<f64>,
) -> Result<PairSets> {
    if locations.is_empty() {
        return Err(Error::invalid("no locations"));
    }
    if let Some(h) = headings {
        if h.len() != locations.len() {
            return Err(Error::DimensionMismatch {
                expected: locations.len(),
                found: h.len(),
            });
        }
    }
    let rule = PairRule::new(r1, r2, max_heading)?;
    let heading = |i: usize| headings.map(|h| h[i]);
    let mut sets = PairSets::default();
    for i in 0..locations.len() {
        for j in (i + 1)..locations.len() {
            let (a, b) = (&locations[i], &locations[j]);
            if rule.is_positive(a, b, heading(i), heading(j)) {
                sets.positives.push((i, j));
            } else if rule.is_negative(a, b) {
                sets.negatives.push((i, j));
            }
        }
    }
    Ok(sets)
}
