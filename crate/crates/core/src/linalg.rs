//! Dense linear algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Orthonormal basis for the column space of `z` (columns with relative
/// singular value below 1e-12 are discarded).
pub fn orthonormal_basis(z: &DMatrix<f64>) -> DMatrix<f64> {
    if z.ncols() == 0 {
        return DMatrix::zeros(z.nrows(), 0);
    }
    let svd = z.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&j| svd.singular_values[j] > 1e-12 * smax.max(f64::MIN_POSITIVE))
        .collect();
    DMatrix::from_fn(z.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

/// Rows of `m` (p × n) projected onto the orthogonal complement of `im(z)`, i.e. `m P⊥_z`.
pub fn residualize_rows(m: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let q = orthonormal_basis(z);
    m - (m * &q) * q.transpose()
}

/// Columns of `c` (n × k) projected onto the orthogonal complement of `im(x)`, i.e. `P⊥_x c`.
pub fn project_out(c: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let q = orthonormal_basis(x);
    c - &q * (q.transpose() * c)
}

/// Top-`k` singular triplets of `m`: returns (singular values, right singular vectors n × k),
/// ordered by nonincreasing singular value.
pub fn top_right_singular(m: &DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let (p, n) = m.shape();
    if p >= n {
        let gram = m.transpose() * m;
        let (vals, vecs) = sorted_eigen(gram);
        let s: Vec<f64> = vals.iter().take(k).map(|v| v.max(0.0).sqrt()).collect();
        let v = vecs.columns(0, k).into_owned();
        (s, v)
    } else {
        let gram = m * m.transpose();
        let (vals, vecs) = sorted_eigen(gram);
        let s: Vec<f64> = vals.iter().take(k).map(|v| v.max(0.0).sqrt()).collect();
        let u = vecs.columns(0, k).into_owned();
        let mut v = m.transpose() * u;
        for j in 0..k {
            let nrm = v.column(j).norm();
            if nrm > 0.0 {
                v.column_mut(j).scale_mut(1.0 / nrm);
            }
        }
        (s, v)
    }
}

/// All singular values of `m`, nonincreasing.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let (p, n) = m.shape();
    let gram = if p >= n {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let mut vals: Vec<f64> = gram.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals.into_iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// Symmetric eigendecomposition sorted by nonincreasing eigenvalue.
pub fn sorted_eigen(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// `a^{-1/2}` for a symmetric positive definite matrix.
pub fn sym_inv_sqrt(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    if eig.eigenvalues.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Some(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Ratio of extreme absolute eigenvalues of a symmetric matrix (∞ when singular).
pub fn condition_number_sym(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone());
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    if !max.is_finite() || eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive (semi)definite matrix. When its condition number
/// exceeds `max_cond` a ridge `1e-8 · tr(a)/dim · I` is added first; the returned flag
/// reports whether that happened.
pub fn spd_inverse_with_ridge(a: &DMatrix<f64>, max_cond: f64) -> Option<(DMatrix<f64>, bool)> {
    let dim = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let mut ridged = false;
    let mut m = sym.clone();
    if condition_number_sym(&sym) > max_cond {
        let ridge = 1e-8 * sym.trace() / dim as f64;
        if !(ridge > 0.0) || !ridge.is_finite() {
            return None;
        }
        for i in 0..dim {
            m[(i, i)] += ridge;
        }
        ridged = true;
    }
    let chol = m.cholesky()?;
    Some((chol.inverse(), ridged))
}

/// Flip each column so that its entry of largest magnitude is positive.
pub fn fix_column_signs(c: &mut DMatrix<f64>) {
    for j in 0..c.ncols() {
        let mut best = 0.0f64;
        for i in 0..c.nrows() {
            if c[(i, j)].abs() > best.abs() {
                best = c[(i, j)];
            }
        }
        if best < 0.0 {
            c.column_mut(j).neg_mut();
        }
    }
}

/// Principal angles (radians, nondecreasing) between `im(a)` and `im(b)`.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = orthonormal_basis(a);
    let qb = orthonormal_basis(b);
    let m = qa.transpose() * qb;
    let sv = m.svd(false, false).singular_values;
    let mut angles: Vec<f64> = sv.iter().map(|s| s.clamp(-1.0, 1.0).acos()).collect();
    angles.sort_by(f64::total_cmp);
    angles
}

/// Rescale `c` (n × k, full column rank) so that `n⁻¹ cᵀc = I`, keeping `im(c)`.
/// Returns the new matrix and the k × k map `m` with `c_new = c · m`.
pub fn renormalize_columns(c: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = c.nrows() as f64;
    let svd = c.clone().svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    if svd.singular_values.iter().any(|&s| s <= 0.0) {
        return None;
    }
    // c = U S Vᵀ; c_new = √n U = c V S⁻¹ √n
    let k = c.ncols();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let c_new = DMatrix::from_fn(c.nrows(), k, |r, j| u[(r, idx[j])] * n.sqrt());
    let map = DMatrix::from_fn(k, k, |r, j| vt[(idx[j], r)] * n.sqrt() / svd.singular_values[idx[j]]);
    Some((c_new, map))
}

/// Column-stack `blocks` (all with the same number of rows).
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut off = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.columns_mut(off, b.ncols()).copy_from(*b);
        off += b.ncols();
    }
    out
}

pub fn ones(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, 1, 1.0)
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
