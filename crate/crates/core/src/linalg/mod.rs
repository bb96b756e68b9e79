//! Dense linear algebra on column-major matrices.

mod decomp;
pub mod io;
mod matrix;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use decomp::{cholesky, orthonormalize, qr_thin, solve_spd, solve_spd_matrix, svd_thin, sym_eigen, Svd};
pub use matrix::{dot, norm2, Matrix};

use crate::error::{Result, SmfError};
use crate::scalar::Scalar;

/// Below this smaller dimension the exact SVD is always used.
pub const EXACT_SVD_MAX_DIM: usize = 64;
/// Extra sketch columns for the randomized SVD.
pub const OVERSAMPLING: usize = 8;
/// Power iterations for the randomized SVD.
pub const POWER_ITERS: usize = 2;
const SKETCH_SEED: u64 = 0x5EED_5EED;

pub fn frobenius_norm<T: Scalar>(m: &Matrix<T>) -> T {
    m.frobenius()
}

/// Largest singular value.
pub fn operator_norm<T: Scalar>(m: &Matrix<T>) -> T {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return T::zero();
    }
    if r.min(c) <= EXACT_SVD_MAX_DIM {
        return svd_thin(m).map_or(T::nan(), |s| s.singular_values[0]);
    }
    // Power iteration on mᵀm.
    let mut rng = ChaCha8Rng::seed_from_u64(SKETCH_SEED);
    let mut v = Matrix::<T>::random_normal(c, 1, T::one(), &mut rng).into_vec();
    let mut sigma = T::zero();
    for _ in 0..2000 {
        let nv = norm2(&v);
        if nv == T::zero() {
            return T::zero();
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let mv = m.mul_vec(&v);
        let next = norm2(&mv);
        v = m.tr_mul_vec(&mv);
        if (next - sigma).abs() <= T::lit(1e-13) * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Top-`k` singular triplets.
///
/// Uses the exact thin SVD when the smaller dimension is at most
/// [`EXACT_SVD_MAX_DIM`] or when `k` is a sizeable fraction of it; otherwise a
/// randomized subspace iteration with a fixed seed, so results are
/// deterministic.
pub fn truncated_svd<T: Scalar>(m: &Matrix<T>, k: usize) -> Result<Svd<T>> {
    let (r, c) = m.shape();
    let kmax = r.min(c);
    if k == 0 || k > kmax {
        return Err(SmfError::config("k", format!("must lie in 1..={kmax}, got {k}")));
    }
    m.ensure_finite("truncated_svd input")?;
    if kmax <= EXACT_SVD_MAX_DIM || 4 * (k + OVERSAMPLING) >= kmax {
        return Ok(svd_thin(m)?.truncate(k));
    }
    randomized_svd(m, k)
}

fn randomized_svd<T: Scalar>(m: &Matrix<T>, k: usize) -> Result<Svd<T>> {
    let l = (k + OVERSAMPLING).min(m.rows().min(m.cols()));
    let mut rng = ChaCha8Rng::seed_from_u64(SKETCH_SEED);
    let omega = Matrix::<T>::random_normal(m.cols(), l, T::one(), &mut rng);
    let mut q = orthonormalize(&m.matmul(&omega));
    for _ in 0..POWER_ITERS {
        let z = orthonormalize(&m.tr_matmul(&q));
        q = orthonormalize(&m.matmul(&z));
    }
    let b = q.tr_matmul(m);
    let small = svd_thin(&b)?.truncate(k);
    Ok(Svd {
        u: q.matmul(&small.u),
        singular_values: small.singular_values,
        vt: small.vt,
    })
}

/// Best rank-`r` approximation in Frobenius norm.
///
/// When `σ_r = σ_{r+1}` the minimizer is not unique; the first `r` triplets
/// in the order returned by the SVD are kept.
pub fn rank_projection<T: Scalar>(m: &Matrix<T>, r: usize) -> Result<Matrix<T>> {
    if r == 0 {
        return Err(SmfError::config("rank", "must be at least 1"));
    }
    if r >= m.rows().min(m.cols()) {
        return Ok(m.clone());
    }
    Ok(truncated_svd(m, r)?.reconstruct())
}

/// Relative singular-value threshold below which `least_squares` refuses.
pub const RANK_TOL: f64 = 1e-10;

/// Minimizer of `||a x - b||_F` through the SVD of `a`.
pub fn least_squares<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows() != b.rows() {
        return Err(SmfError::shape(format!(
            "least_squares: a has {} rows, b has {}",
            a.rows(),
            b.rows()
        )));
    }
    if a.cols() > a.rows() {
        return Err(SmfError::RankDeficient {
            sigma_min: 0.0,
            threshold: RANK_TOL,
        });
    }
    let svd = svd_thin(a)?;
    let smax = svd.singular_values[0];
    let smin = *svd.singular_values.last().unwrap();
    let thr = T::lit(RANK_TOL) * smax;
    if !(smin > thr) {
        return Err(SmfError::RankDeficient {
            sigma_min: smin.as_f64(),
            threshold: thr.as_f64(),
        });
    }
    let mut utb = svd.u.tr_matmul(b);
    for i in 0..utb.rows() {
        let s = svd.singular_values[i];
        for j in 0..utb.cols() {
            utb[(i, j)] /= s;
        }
    }
    Ok(svd.vt.tr_matmul(&utb))
}

/// `ū ūᵀ y v̄ v̄ᵀ`: orthogonal projection of `y` onto matrices whose column
/// space lies in span(ū) and row space in span(v̄).
pub fn subspace_projection<T: Scalar>(y: &Matrix<T>, ubar: &Matrix<T>, vbar: &Matrix<T>) -> Matrix<T> {
    ubar.matmul(&ubar.tr_matmul(y).matmul(vbar)).matmul_tr(vbar)
}
