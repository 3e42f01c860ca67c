//! Small dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{PanelError, Result};

/// Relative eigenvalue floor below which a Gram matrix is treated as singular.
pub(crate) const SINGULAR_RTOL: f64 = 1e-12;

/// Gram matrix `G[k,l] = <X_k, X_l>_F`.
pub(crate) fn gram(x: &[DMatrix<f64>]) -> DMatrix<f64> {
    let k = x.len();
    let mut g = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = x[a].dot(&x[b]);
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

/// `r[k] = <X_k, m>_F`.
pub(crate) fn cross(x: &[DMatrix<f64>], m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().map(|xk| xk.dot(m)))
}

/// Inverse of a symmetric positive-definite Gram matrix, or
/// `SingularDesign` when its smallest eigenvalue is negligible.
pub(crate) fn spd_inverse(g: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(g.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if !(max > 0.0) || min <= SINGULAR_RTOL * max {
        return Err(PanelError::SingularDesign(format!(
            "{what}: Gram matrix is rank-deficient (eigenvalues in [{min:.3e}, {max:.3e}])"
        )));
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose())
}

/// `SingularDesign` when a projection removes essentially all variation of
/// some regressor, which the eigenvalue test misses for a single regressor.
pub(crate) fn check_projection_loss(raw: &[DMatrix<f64>], projected: &[DMatrix<f64>], what: &str) -> Result<()> {
    for (k, (r, p)) in raw.iter().zip(projected).enumerate() {
        let before = r.norm_squared();
        if p.norm_squared() <= SINGULAR_RTOL * before || before == 0.0 {
            return Err(PanelError::SingularDesign(format!("{what}: regressor {} is absorbed by the fixed effects", k + 1)));
        }
    }
    Ok(())
}

/// Eigenpairs of a symmetric matrix sorted by non-increasing eigenvalue.
pub(crate) fn sorted_eigen(c: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    // stable on ties, so the decomposition is reproducible
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = eig.eigenvectors.select_columns(order.iter());
    (vals, vecs)
}

/// Orthonormal completion: returns `cols` with any zero columns replaced by
/// unit vectors orthogonal to every other column.
pub(crate) fn complete_orthonormal(mut q: DMatrix<f64>, degenerate: &[bool]) -> DMatrix<f64> {
    let n = q.nrows();
    let mut candidate = 0usize;
    for j in 0..q.ncols() {
        if !degenerate[j] {
            continue;
        }
        loop {
            assert!(candidate < n, "cannot complete more than n orthonormal columns");
            let mut v = DVector::zeros(n);
            v[candidate] = 1.0;
            candidate += 1;
            for l in 0..q.ncols() {
                if l == j || (degenerate[l] && l > j) {
                    continue;
                }
                let col = q.column(l).clone_owned();
                let proj = col.dot(&v);
                v -= col * proj;
            }
            let norm = v.norm();
            if norm > 1e-6 {
                q.set_column(j, &(v / norm));
                break;
            }
        }
    }
    q
}
