use crate::error::{Error, Result};
use crate::geometry::{GramMatrix, Location};

/// Classical MDS: planar coordinates from the two largest eigenpairs of a
/// Gram matrix, `X̃ = Λ̃^{1/2} Uᵀ`. Negative eigenvalues are clamped to zero.
pub fn classical_mds(gram: &GramMatrix) -> Result<Vec<Location>> {
    let g = gram.matrix();
    let n = g.nrows();
    if n == 0 {
        return Err(Error::invalid("empty gram matrix"));
    }
    let sym = (g + g.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]];
    if !(top > 0.0) {
        return Err(Error::Degenerate(
            "gram matrix has no positive eigenvalue".into(),
        ));
    }
    let scale = |k: usize| -> f64 {
        match order.get(k) {
            Some(&idx) => eig.eigenvalues[idx].max(0.0).sqrt(),
            None => 0.0,
        }
    };
    let (s0, s1) = (scale(0), scale(1));
    let u0 = eig.eigenvectors.column(order[0]);
    let u1 = order.get(1).map(|&i| eig.eigenvectors.column(i));
    Ok((0..n)
        .map(|i| Location::new(s0 * u0[i], u1.map_or(0.0, |u| s1 * u[i])))
        .collect())
}
