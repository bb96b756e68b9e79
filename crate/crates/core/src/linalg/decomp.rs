//! Dense factorizations: Householder QR, one-sided Jacobi SVD, symmetric
//! tridiagonal QL eigensolver and Cholesky.

use crate::error::{Result, SmfError};
use crate::linalg::matrix::{dot, norm2, Matrix};
use crate::scalar::Scalar;

/// Singular value decomposition `u * diag(s) * vt`.
#[derive(Clone, Debug)]
pub struct Svd<T: Scalar> {
    pub u: Matrix<T>,
    pub singular_values: Vec<T>,
    pub vt: Matrix<T>,
}

impl<T: Scalar> Svd<T> {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        let mut us = self.u.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            for v in us.col_mut(j) {
                *v *= s;
            }
        }
        us.matmul(&self.vt)
    }

    /// Keeps the leading `k` triplets.
    pub fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.rank());
        self.u = self.u.cols_range(0, k);
        self.singular_values.truncate(k);
        self.vt = self.vt.rows_range(0, k);
        self
    }
}

/// Thin Householder QR of an `m x n` matrix with `m >= n`.
/// Returns `q` (`m x n`, orthonormal columns) and upper-triangular `r` (`n x n`).
pub fn qr_thin<T: Scalar>(a: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    let (m, n) = a.shape();
    assert!(m >= n, "qr_thin needs rows >= cols");
    let mut work = a.clone();
    let mut reflectors: Vec<Option<Vec<T>>> = Vec::with_capacity(n);
    for k in 0..n {
        let x = &work.col(k)[k..];
        let alpha = norm2(x);
        if alpha == T::zero() {
            reflectors.push(None);
            continue;
        }
        let mut v = x.to_vec();
        v[0] += if x[0] >= T::zero() { alpha } else { -alpha };
        let vv = dot(&v, &v);
        for j in k..n {
            let c = &mut work.col_mut(j)[k..];
            let s = T::lit(2.0) * dot(&v, c) / vv;
            for (ci, &vi) in c.iter_mut().zip(&v) {
                *ci -= s * vi;
            }
        }
        reflectors.push(Some(v));
    }
    let r = Matrix::from_fn(n, n, |i, j| if i <= j { work[(i, j)] } else { T::zero() });
    let mut q = Matrix::zeros(m, n);
    for i in 0..n {
        q[(i, i)] = T::one();
    }
    for k in (0..n).rev() {
        if let Some(v) = &reflectors[k] {
            let vv = dot(v, v);
            for j in 0..n {
                let c = &mut q.col_mut(j)[k..];
                let s = T::lit(2.0) * dot(v, c) / vv;
                for (ci, &vi) in c.iter_mut().zip(v) {
                    *ci -= s * vi;
                }
            }
        }
    }
    (q, r)
}

/// Orthonormal basis for the column space of `a` (`rows >= cols`), via QR.
pub fn orthonormalize<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    qr_thin(a).0
}

const MAX_SWEEPS: usize = 80;

/// One-sided Jacobi on a square matrix: returns (U, s, V) unsorted.
fn jacobi_square<T: Scalar>(g: &Matrix<T>) -> (Matrix<T>, Vec<T>, Matrix<T>) {
    let n = g.cols();
    let mut g = g.clone();
    let mut v = Matrix::identity(n);
    let eps = T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = dot(g.col(p), g.col(p));
                let beta = dot(g.col(q), g.col(q));
                let gamma = dot(g.col(p), g.col(q));
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let sgn = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sgn / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut g, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let s: Vec<T> = (0..n).map(|j| norm2(g.col(j))).collect();
    (g, s, v)
}

#[inline]
fn rotate_cols<T: Scalar>(m: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let rows = m.rows();
    let data = m.as_mut_slice();
    let (lo, hi) = data.split_at_mut(q * rows);
    let cp = &mut lo[p * rows..(p + 1) * rows];
    let cq = &mut hi[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Full thin SVD (`k = min(m, n)`), singular values sorted nonincreasing.
pub fn svd_thin<T: Scalar>(a: &Matrix<T>) -> Result<Svd<T>> {
    a.ensure_finite("svd input")?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(SmfError::shape("svd of an empty matrix"));
    }
    if m < n {
        let t = svd_thin(&a.transpose())?;
        return Ok(Svd {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        });
    }
    let (q, r) = if m > n {
        let (q, r) = qr_thin(a);
        (Some(q), r)
    } else {
        (None, a.clone())
    };
    let (g, s, v) = jacobi_square(&r);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(std::cmp::Ordering::Equal));
    let smax = order.first().map_or(T::zero(), |&i| s[i]);
    let tiny = smax * T::epsilon() * T::from_usize_lossy(n);

    let mut ur = Matrix::zeros(n, n);
    let mut vs = Matrix::zeros(n, n);
    let mut sv = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let sigma = s[src];
        vs.col_mut(dst).copy_from_slice(v.col(src));
        if sigma > tiny && sigma > T::min_positive_value() {
            for (o, &x) in ur.col_mut(dst).iter_mut().zip(g.col(src)) {
                *o = x / sigma;
            }
            sv.push(sigma);
        } else {
            missing.push(dst);
            sv.push(if sigma > T::zero() { sigma } else { T::zero() });
        }
    }
    complete_basis(&mut ur, &missing);
    let u = match q {
        Some(q) => q.matmul(&ur),
        None => ur,
    };
    Ok(Svd {
        u,
        singular_values: sv,
        vt: vs.transpose(),
    })
}

/// Fills the listed columns of `u` with unit vectors orthogonal to all others.
fn complete_basis<T: Scalar>(u: &mut Matrix<T>, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = u.rows();
    let mut filled: Vec<usize> = (0..u.cols()).filter(|j| !missing.contains(j)).collect();
    let mut candidate = 0;
    for &dst in missing {
        while candidate < m {
            let mut e = vec![T::zero(); m];
            e[candidate] = T::one();
            candidate += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let c = u.col(j);
                    let proj = dot(c, &e);
                    for (ei, &ci) in e.iter_mut().zip(c) {
                        *ei -= proj * ci;
                    }
                }
            }
            let nrm = norm2(&e);
            if nrm > T::lit(0.5) {
                for (o, x) in u.col_mut(dst).iter_mut().zip(e) {
                    *o = x / nrm;
                }
                filled.push(dst);
                break;
            }
        }
    }
}

/// Symmetric eigendecomposition. Returns eigenvalues in ascending order and
/// the matrix whose columns are the matching orthonormal eigenvectors.
pub fn sym_eigen<T: Scalar>(a: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let n = a.rows();
    if n != a.cols() {
        return Err(SmfError::shape("sym_eigen needs a square matrix"));
    }
    a.ensure_finite("sym_eigen input")?;
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    let mut v = Matrix::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)]) * T::lit(0.5));
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = order.iter().map(|&i| d[i]).collect();
    let vecs = v.select_cols(&order);
    Ok((vals, vecs))
}

/// Householder reduction to tridiagonal form (EISPACK tred2).
fn tred2<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    let zero = T::zero();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = zero;
        let mut h = zero;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == zero {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = zero;
                v[(j, i)] = zero;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > zero {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = zero;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in j + 1..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = zero;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let upd = f * e[k] + g * d[k];
                    v[(k, j)] -= upd;
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = zero;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = T::one();
        let h = d[i + 1];
        if h != zero {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = zero;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    let upd = g * d[k];
                    v[(k, j)] -= upd;
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = zero;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = zero;
    }
    v[(n - 1, n - 1)] = T::one();
    e[0] = zero;
}

/// Implicit QL iterations on the tridiagonal form (EISPACK tql2).
fn tql2<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = d.len();
    let zero = T::zero();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;
    let mut f = zero;
    let mut tst1 = zero;
    let eps = T::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 200 {
                    return Err(SmfError::NonConvergence {
                        residual: e[l].abs().as_f64(),
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (T::lit(2.0) * e[l]);
                let mut r = p.hypot(T::one());
                if p < zero {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = zero;
                let mut s2 = zero;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let hk = v[(k, i + 1)];
                        let vi = v[(k, i)];
                        v[(k, i + 1)] = s * vi + c * hk;
                        v[(k, i)] = c * vi - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = zero;
    }
    Ok(())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let n = a.rows();
    if n != a.cols() {
        return Err(SmfError::shape("cholesky needs a square matrix"));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > T::zero()) {
            return Err(SmfError::Domain(format!(
                "matrix not positive definite (pivot {j} = {})",
                diag.as_f64()
            )));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `a x = b` for symmetric positive definite `a` via Cholesky.
pub fn solve_spd<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let l = cholesky(a)?;
    if b.len() != l.rows() {
        return Err(SmfError::shape("solve_spd right-hand side length"));
    }
    let mut y = b.to_vec();
    cholesky_solve_in_place(&l, &mut y);
    Ok(y)
}

/// Solves `a X = b` column by column with a single factorization.
pub fn solve_spd_matrix<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    let l = cholesky(a)?;
    if b.rows() != l.rows() {
        return Err(SmfError::shape("solve_spd_matrix right-hand side rows"));
    }
    let mut x = b.clone();
    for j in 0..x.cols() {
        cholesky_solve_in_place(&l, x.col_mut(j));
    }
    Ok(x)
}

fn cholesky_solve_in_place<T: Scalar>(l: &Matrix<T>, y: &mut [T]) {
    let n = y.len();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn orth_err(q: &Matrix<f64>) -> f64 {
        q.tr_matmul(q).sub(&Matrix::identity(q.cols())).frobenius()
    }

    #[test]
    fn qr_reconstructs_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Matrix::<f64>::random_normal(9, 4, 1.0, &mut rng);
        let (q, r) = qr_thin(&a);
        assert!(orth_err(&q) < 1e-12);
        assert!(q.matmul(&r).sub(&a).frobenius() < 1e-12);
        for i in 0..4 {
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn svd_tall_wide_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(m, n) in &[(7, 3), (3, 7), (5, 5), (1, 4), (4, 1)] {
            let a = Matrix::<f64>::random_normal(m, n, 1.0, &mut rng);
            let s = svd_thin(&a).unwrap();
            assert!(s.reconstruct().sub(&a).frobenius() < 1e-12, "{m}x{n}");
            assert!(orth_err(&s.u) < 1e-12);
            assert!(orth_err(&s.vt.transpose()) < 1e-12);
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rank_deficient_completes_u() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Matrix::<f64>::random_normal(6, 2, 1.0, &mut rng)
            .matmul(&Matrix::random_normal(2, 5, 1.0, &mut rng));
        let s = svd_thin(&a).unwrap();
        assert!(orth_err(&s.u) < 1e-10);
        assert!(s.singular_values[2] < 1e-12 * s.singular_values[0]);
        let z = svd_thin(&Matrix::<f64>::zeros(4, 3)).unwrap();
        assert!(orth_err(&z.u) < 1e-12);
        assert!(z.singular_values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn svd_matches_symmetric_eigen_of_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Matrix::<f64>::random_normal(8, 5, 1.0, &mut rng);
        let s = svd_thin(&a).unwrap();
        let (vals, _) = sym_eigen(&a.tr_matmul(&a)).unwrap();
        for (k, &sv) in s.singular_values.iter().enumerate() {
            let ev = vals[vals.len() - 1 - k];
            assert!((sv * sv - ev).abs() < 1e-10 * ev.max(1.0));
        }
    }

    #[test]
    fn eigen_decomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Matrix::<f64>::random_normal(6, 6, 1.0, &mut rng);
        let a = b.add(&b.transpose());
        let (vals, vecs) = sym_eigen(&a).unwrap();
        assert!(orth_err(&vecs) < 1e-12);
        let rebuilt = vecs.matmul(&Matrix::from_diag(&vals)).matmul_tr(&vecs);
        assert!(rebuilt.sub(&a).frobenius() < 1e-10);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let (one, _) = sym_eigen(&Matrix::from_diag(&[3.0])).unwrap();
        assert_eq!(one, vec![3.0]);
    }

    #[test]
    fn cholesky_solves() {
        let a = Matrix::<f64>::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = solve_spd(&a, &[1.0, 2.0]).unwrap();
        let back = a.mul_vec(&x);
        assert!((back[0] - 1.0).abs() < 1e-14 && (back[1] - 2.0).abs() < 1e-14);
        let neg = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(cholesky(&neg).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Matrix::<f32>::random_normal(6, 4, 1.0, &mut rng);
        let s = svd_thin(&a).unwrap();
        assert!(s.reconstruct().sub(&a).frobenius() < 1e-4);
    }
}
