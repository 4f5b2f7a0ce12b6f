//! Masked EDM completion through a rank-2 Gram factorisation.
//!
//! The Gram matrix is parameterised as `G = YᵀY` with `Y ∈ ℝ²ˣⁿ` and centred
//! columns, so rank, semi-definiteness and `G𝟙 = 0` hold by construction.
//! The masked misfit `‖M ⊙ (D − κ(G))‖²_F` is minimised over `Y` with L-BFGS,
//! starting from classical MDS of the geodesically completed matrix.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use nalgebra::DMatrix;

use super::{classical_mds, MaskedEdm};
use crate::error::{Error, Result};
use crate::geometry::{GramMatrix, SquaredDistanceMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct GramCompletion {
    pub gram: GramMatrix,
    /// Coordinates, one point per column.
    pub coords: DMatrix<f64>,
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out before the tolerance was met.
    pub converged: bool,
}

#[derive(Copy, Clone, PartialEq)]
struct Candidate {
    dist: f64,
    node: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Fills masked-out entries with squared shortest-path lengths over the mask
/// graph, whose edges weigh the square root of the masked-in distances.
pub fn geodesic_completion(masked: &MaskedEdm) -> Result<SquaredDistanceMatrix> {
    masked.ensure_connected()?;
    let n = masked.len();
    let adjacency: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            masked
                .mask
                .neighbours(i)
                .map(|j| (j, masked.distances.get(i, j).max(0.0).sqrt()))
                .collect()
        })
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for s in 0..n {
        let mut dist = vec![f64::INFINITY; n];
        dist[s] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Candidate { dist: 0.0, node: s });
        while let Some(Candidate { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &(next, w) in &adjacency[node] {
                let nd = d + w;
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(Candidate {
                        dist: nd,
                        node: next,
                    });
                }
            }
        }
        for t in 0..n {
            out[(s, t)] = if masked.mask.get(s, t) {
                masked.distances.get(s, t)
            } else {
                dist[t] * dist[t]
            };
        }
    }
    // symmetrise away last-bit asymmetries of the two directions
    let sym = (&out + out.transpose()) * 0.5;
    Ok(SquaredDistanceMatrix::from_raw(sym))
}

/// `‖M ⊙ (D − κ(YᵀY))‖²_F` for coordinates `y` (2×n).
pub fn masked_objective(masked: &MaskedEdm, y: &DMatrix<f64>) -> f64 {
    objective_and_gradient(masked, y, false).0
}

fn objective_and_gradient(
    masked: &MaskedEdm,
    y: &DMatrix<f64>,
    want_grad: bool,
) -> (f64, DMatrix<f64>) {
    let n = masked.len();
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(y.nrows(), if want_grad { n } else { 0 });
    for i in 0..n {
        for j in masked.mask.neighbours(i).filter(|&j| j > i) {
            let dx = y[(0, i)] - y[(0, j)];
            let dy = y[(1, i)] - y[(1, j)];
            let e = masked.distances.get(i, j) - (dx * dx + dy * dy);
            // both (i,j) and (j,i) enter the Frobenius norm
            value += 2.0 * e * e;
            if want_grad {
                let s = -8.0 * e;
                grad[(0, i)] += s * dx;
                grad[(1, i)] += s * dy;
                grad[(0, j)] -= s * dx;
                grad[(1, j)] -= s * dy;
            }
        }
    }
    (value, grad)
}

fn center_columns(y: &mut DMatrix<f64>) {
    let n = y.ncols() as f64;
    for r in 0..y.nrows() {
        let mean = y.row(r).sum() / n;
        for c in 0..y.ncols() {
            y[(r, c)] -= mean;
        }
    }
}

fn dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Completes a masked EDM into a rank-2, centred Gram matrix.
///
/// Requires a connected mask graph and at least three points. Stops when the
/// relative objective decrease of an iteration falls below `tol`; running out
/// of iterations returns the current iterate with `converged == false`.
pub fn complete_gram(masked: &MaskedEdm, max_iters: usize, tol: f64) -> Result<GramCompletion> {
    let n = masked.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "gram completion needs at least 3 points, got {n}"
        )));
    }
    masked.ensure_connected()?;
    let filled = geodesic_completion(masked)?;
    let init = classical_mds(&GramMatrix::from_edm(&filled))?;
    let mut y = DMatrix::from_fn(2, n, |r, c| if r == 0 { init[c].x } else { init[c].y });
    center_columns(&mut y);
    let (x, iterations, converged) = lbfgs(masked, y, max_iters, tol);
    let initial_objective = masked_objective(
        masked,
        &DMatrix::from_fn(2, n, |r, c| if r == 0 { init[c].x } else { init[c].y }),
    );
    let objective = masked_objective(masked, &x);
    if !converged {
        log::warn!(
            "gram completion stopped after {iterations} iterations at objective {objective}"
        );
    }
    Ok(GramCompletion {
        gram: GramMatrix::from_coords(&x),
        coords: x,
        initial_objective,
        objective,
        iterations,
        converged,
    })
}

/// Limited-memory BFGS with a backtracking Armijo line search. Iterates stay
/// column-centred because every gradient has zero column sum.
fn lbfgs(
    masked: &MaskedEdm,
    mut x: DMatrix<f64>,
    max_iters: usize,
    tol: f64,
) -> (DMatrix<f64>, usize, bool) {
    const MEMORY: usize = 10;
    let (mut f, mut g) = objective_and_gradient(masked, &x, true);
    let scale = masked
        .distances
        .matrix()
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
        .max(1.0);
    let mut history: VecDeque<(DMatrix<f64>, DMatrix<f64>, f64)> = VecDeque::new();
    for it in 0..max_iters {
        if f <= 1e-28 * scale * scale || g.norm() == 0.0 {
            return (x, it, true);
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, yv, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q -= yv * a;
            alphas.push(a);
        }
        let gamma = history
            .back()
            .map(|(s, yv, _)| dot(s, yv) / dot(yv, yv))
            .unwrap_or_else(|| 1.0 / g.norm().max(1e-12));
        let mut dir = q * gamma;
        for ((s, yv, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &dir);
            dir += s * (a - b);
        }
        dir = -dir;
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = -g.clone() / g.norm().max(1e-12);
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &x + &dir * step;
            let (fc, gc) = objective_and_gradient(masked, &candidate, true);
            if fc <= f + 1e-4 * step * slope {
                accepted = Some((candidate, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((mut xn, fn_, gn)) = accepted else {
            // no descent possible at working precision
            return (x, it, true);
        };
        center_columns(&mut xn);
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = dot(&s, &yv);
        if sy > 1e-300 {
            history.push_back((s, yv, 1.0 / sy));
            if history.len() > MEMORY {
                history.pop_front();
            }
        }
        let decrease = (f - fn_) / f.max(1e-300);
        x = xn;
        f = fn_;
        g = gn;
        if decrease < tol {
            return (x, it + 1, true);
        }
    }
    (x, max_iters, false)
}
