//! Objective, gradient, predictive probabilities and score-function
//! derivatives for the lifted problem.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Result, SmfError};
use crate::linalg::{self, Matrix};
use crate::model::{Dataset, LiftedState, ScoreFunction, SmfVariant, SolverConfig};
use crate::scalar::Scalar;

/// Activation vector `a ∈ R^κ` of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Activation<T: Scalar> {
    pub a: Vec<T>,
    /// Assumed bound `M` on `||a||`, when known.
    pub bound_m: Option<T>,
}

/// Gradient of the objective with respect to `(θ, γ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient<T: Scalar> {
    pub d_theta: Matrix<T>,
    pub d_gamma: Matrix<T>,
}

impl<T: Scalar> LossGradient<T> {
    pub fn norm(&self) -> T {
        (self.d_theta.frobenius_sq() + self.d_gamma.frobenius_sq()).sqrt()
    }

    pub fn into_state(self, variant: SmfVariant) -> LiftedState<T> {
        LiftedState {
            theta: self.d_theta,
            gamma: self.d_gamma,
            variant,
        }
    }
}

/// Constants of the multinomial logistic link at activation bound `M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MnlConstants {
    pub gamma_max: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub m_bound: f64,
}

/// All activations as a `κ x n` matrix, column `s` being `a_s`.
///
/// SMF-H: `a_s = A[:, s] + γᵀx'_s`. SMF-W: `a_s = Aᵀx_s + γᵀx'_s`.
pub fn activation_matrix<T: Scalar>(state: &LiftedState<T>, data: &Dataset<T>) -> Result<Matrix<T>> {
    state.check_against(data)?;
    let a = state.a_block();
    let mut act = match state.variant {
        SmfVariant::FeatureBased => a,
        SmfVariant::FilterBased => a.tr_matmul(&data.x_data),
    };
    if data.q() > 0 {
        act.axpy(T::one(), &state.gamma.tr_matmul(&data.x_aux));
    }
    Ok(act)
}

pub fn activations<T: Scalar>(state: &LiftedState<T>, data: &Dataset<T>) -> Result<Vec<Activation<T>>> {
    let act = activation_matrix(state, data)?;
    Ok((0..act.cols())
        .map(|s| Activation {
            a: act.col(s).to_vec(),
            bound_m: None,
        })
        .collect())
}

/// `max_s ||a_s||₂`.
pub fn max_activation_norm<T: Scalar>(state: &LiftedState<T>, data: &Dataset<T>) -> Result<T> {
    let act = activation_matrix(state, data)?;
    Ok((0..act.cols()).map(|s| linalg::norm2(act.col(s))).fold(T::zero(), T::max))
}

/// `log(1 + Σ exp(a_c))` computed with a shift.
pub fn log1p_sum_exp<T: Scalar>(a: &[T]) -> T {
    let m = a.iter().copied().fold(T::zero(), T::max);
    let s: T = (-m).exp() + a.iter().map(|&v| (v - m).exp()).sum::<T>();
    m + s.ln()
}

/// Class probabilities `[P(y=0), …, P(y=κ)]`.
pub fn predictive_probs<T: Scalar>(a: &[T], score: &ScoreFunction) -> Vec<T> {
    match score {
        ScoreFunction::Exp => {
            let lse = log1p_sum_exp(a);
            std::iter::once((-lse).exp())
                .chain(a.iter().map(|&v| (v - lse).exp()))
                .collect()
        }
        ScoreFunction::Custom(_) => {
            let hs: Vec<T> = a.iter().map(|&v| score.eval(v).0).collect();
            let c = T::one() / (T::one() + hs.iter().copied().sum::<T>());
            std::iter::once(c).chain(hs.iter().map(|&h| h * c)).collect()
        }
    }
}

/// Negative log-likelihood `-log P(y | a)`.
pub fn nll<T: Scalar>(y: usize, a: &[T], score: &ScoreFunction) -> Result<T> {
    if y > a.len() {
        return Err(SmfError::Domain(format!("label {y} exceeds kappa={}", a.len())));
    }
    match score {
        ScoreFunction::Exp => {
            let lse = log1p_sum_exp(a);
            Ok(if y == 0 { lse } else { lse - a[y - 1] })
        }
        ScoreFunction::Custom(_) => {
            let hs: Vec<T> = a.iter().map(|&v| score.eval(v).0).collect();
            if let Some(h) = hs.iter().find(|h| !(**h > T::zero())) {
                return Err(SmfError::Domain(format!("score value {} is not positive", h.as_f64())));
            }
            let norm = (T::one() + hs.iter().copied().sum::<T>()).ln();
            Ok(if y == 0 { norm } else { norm - hs[y - 1].ln() })
        }
    }
}

/// `(ḣ, Ḧ)`: gradient and Hessian of `nll(y, ·)` at `a`.
pub fn score_derivatives<T: Scalar>(y: usize, a: &[T], score: &ScoreFunction) -> Result<(Vec<T>, Matrix<T>)> {
    let k = a.len();
    if y > k {
        return Err(SmfError::Domain(format!("label {y} exceeds kappa={k}")));
    }
    let ind = |j: usize| y == j + 1;
    match score {
        ScoreFunction::Exp => {
            let p = predictive_probs(a, score);
            let g = &p[1..];
            let hdot = (0..k).map(|j| if ind(j) { g[j] - T::one() } else { g[j] }).collect();
            let hddot = Matrix::from_fn(k, k, |i, j| {
                let d = if i == j { T::one() } else { T::zero() };
                g[i] * (d - g[j])
            });
            Ok((hdot, hddot))
        }
        ScoreFunction::Custom(_) => {
            let vals: Vec<(T, T, T)> = a.iter().map(|&v| score.eval(v)).collect();
            if let Some(v) = vals.iter().find(|v| !(v.0 > T::zero())) {
                return Err(SmfError::Domain(format!("score value {} is not positive", v.0.as_f64())));
            }
            let s = T::one() + vals.iter().map(|v| v.0).sum::<T>();
            let hdot = (0..k)
                .map(|j| {
                    let (h, d1, _) = vals[j];
                    let base = d1 / s;
                    if ind(j) {
                        base - d1 / h
                    } else {
                        base
                    }
                })
                .collect();
            let hddot = Matrix::from_fn(k, k, |i, j| {
                let mut v = -vals[i].1 * vals[j].1 / (s * s);
                if i == j {
                    let (h, d1, d2) = vals[j];
                    v += d2 / s;
                    if ind(j) {
                        v -= d2 / h - (d1 / h) * (d1 / h);
                    }
                }
                v
            });
            Ok((hdot, hddot))
        }
    }
}

/// Classification part: `(Σ_s nll, Ḣ)` with `Ḣ` the `κ x n` matrix of `ḣ`.
pub(crate) fn loss_and_hdot<T: Scalar>(act: &Matrix<T>, data: &Dataset<T>, score: &ScoreFunction, want_hdot: bool) -> Result<(T, Option<Matrix<T>>)> {
    let (k, n) = act.shape();
    let mut total = T::zero();
    let mut hdot = want_hdot.then(|| Matrix::zeros(k, n));
    for s in 0..n {
        let a = act.col(s);
        let y = data.labels[s];
        match (score, hdot.as_mut()) {
            (ScoreFunction::Exp, Some(hd)) => {
                let lse = log1p_sum_exp(a);
                total += if y == 0 { lse } else { lse - a[y - 1] };
                let col = hd.col_mut(s);
                for j in 0..k {
                    col[j] = (a[j] - lse).exp();
                }
                if y > 0 {
                    col[y - 1] -= T::one();
                }
            }
            (_, Some(hd)) => {
                total += nll(y, a, score)?;
                let (g, _) = score_derivatives(y, a, score)?;
                hd.col_mut(s).copy_from_slice(&g);
            }
            (_, None) => total += nll(y, a, score)?,
        }
    }
    Ok((total, hdot))
}

/// `F(θ, γ) = Σ_s nll(y_s, a_s) + ξ||X − B||² + λ(||A||² + ||γ||²)`.
pub fn objective_value<T: Scalar>(state: &LiftedState<T>, data: &Dataset<T>, cfg: &SolverConfig) -> Result<T> {
    let act = activation_matrix(state, data)?;
    let (loss, _) = loss_and_hdot(&act, data, &cfg.score, false)?;
    Ok(loss + regularization(state, data, cfg))
}

fn regularization<T: Scalar>(state: &LiftedState<T>, data: &Dataset<T>, cfg: &SolverConfig) -> T {
    let fit = state.b_block().sub(&data.x_data).frobenius_sq();
    let ridge = state.a_block().frobenius_sq() + state.gamma.frobenius_sq();
    T::lit(cfg.xi) * fit + T::lit(cfg.lambda) * ridge
}

/// Objective value and gradient sharing one activation pass.
pub fn objective_and_gradient<T: Scalar>(state: &LiftedState<T>, data: &Dataset<T>, cfg: &SolverConfig) -> Result<(T, LossGradient<T>)> {
    let act = activation_matrix(state, data)?;
    let (loss, hdot) = loss_and_hdot(&act, data, &cfg.score, true)?;
    let hdot = hdot.expect("requested");
    let two_lambda = T::lit(2.0 * cfg.lambda);
    let a = state.a_block();
    let b = state.b_block();

    let mut d_a = match state.variant {
        SmfVariant::FeatureBased => hdot.clone(),
        SmfVariant::FilterBased => data.x_data.matmul_tr(&hdot),
    };
    d_a.axpy(two_lambda, &a);
    let resid = b.sub(&data.x_data);
    let d_b = resid.scale(T::lit(2.0 * cfg.xi));
    let mut d_gamma = if data.q() > 0 {
        data.x_aux.matmul_tr(&hdot)
    } else {
        Matrix::zeros(0, data.kappa)
    };
    d_gamma.axpy(two_lambda, &state.gamma);

    let value = loss + T::lit(cfg.xi) * resid.frobenius_sq() + T::lit(cfg.lambda) * (a.frobenius_sq() + state.gamma.frobenius_sq());
    let grad = LiftedState::from_blocks(&d_a, &d_b, d_gamma, state.variant);
    Ok((
        value,
        LossGradient {
            d_theta: grad.theta,
            d_gamma: grad.gamma,
        },
    ))
}

pub fn gradient<T: Scalar>(state: &LiftedState<T>, data: &Dataset<T>, cfg: &SolverConfig) -> Result<LossGradient<T>> {
    Ok(objective_and_gradient(state, data, cfg)?.1)
}

/// Multinomial logistic constants at activation bound `M`.
pub fn mnl_constants(m_bound: f64, kappa: usize) -> MnlConstants {
    let m = m_bound;
    let k1 = kappa as f64 - 1.0;
    let (ep, em) = (m.exp(), (-m).exp());
    let denom = 1.0 + ep + k1 * em;
    MnlConstants {
        gamma_max: 1.0 + ep / denom,
        alpha_minus: em / (1.0 + em + k1 * ep),
        alpha_plus: ep * (1.0 + 2.0 * k1 * ep) / (denom * denom),
        m_bound: m,
    }
}

/// A smoothness constant of `F` valid on all of the lifted space for the
/// exponential score, using `λ_max(Ḧ) ≤ 1/2`:
/// SMF-W `max(2ξ, 2λ + λ_max(ΦΦᵀ)/2)`, SMF-H `max(2ξ, 2λ + (1 + ||X_aux||²)/2)`.
/// `1/L` is a safe step size.
pub fn global_smoothness<T: Scalar>(data: &Dataset<T>, variant: SmfVariant, xi: f64, lambda: f64) -> f64 {
    let aux = linalg::operator_norm(&data.x_aux).as_f64();
    let curvature = match variant {
        SmfVariant::FilterBased => linalg::operator_norm(&data.phi()).as_f64().powi(2),
        SmfVariant::FeatureBased => 1.0 + aux * aux,
    };
    (2.0 * xi).max(2.0 * lambda + 0.5 * curvature)
}

/// Eigenvalue bounds of `Ḧ` for the exponential score from the class
/// probabilities `p = [p_0, …, p_κ]`: lower `min_i p_i p_0`, upper
/// (Gershgorin) `max_i p_i (p_0 + 2 Σ_{c≠i, c≥1} p_c)`.
pub fn mnl_eig_bounds<T: Scalar>(p: &[T]) -> (T, T) {
    let p0 = p[0];
    let rest: T = p[1..].iter().copied().sum();
    let mut lo = T::infinity();
    let mut hi = T::zero();
    for &pi in &p[1..] {
        lo = lo.min(pi * p0);
        hi = hi.max(pi * (p0 + T::lit(2.0) * (rest - pi)));
    }
    (lo, hi)
}

/// Index map of the lifted vector `vec([θ, γ])`: θ column-major, then γ.
fn activation_jacobian<T: Scalar>(state: &LiftedState<T>, data: &Dataset<T>, s: usize) -> Vec<Vec<(usize, T)>> {
    let k = data.kappa;
    let (p, q) = (data.p(), data.q());
    let tr = state.theta.rows();
    let n_theta = state.theta.rows() * state.theta.cols();
    (0..k)
        .map(|c| {
            let mut row = Vec::new();
            match state.variant {
                SmfVariant::FeatureBased => row.push((c + s * tr, T::one())),
                SmfVariant::FilterBased => {
                    for i in 0..p {
                        row.push((i + c * tr, data.x_data[(i, s)]));
                    }
                }
            }
            for i in 0..q {
                row.push((n_theta + i + c * q, data.x_aux[(i, s)]));
            }
            row
        })
        .collect()
}

/// Dense Hessian of `F` in `vec([θ, γ])` (θ column-major, then γ).
/// Intended for small instances only.
pub fn lifted_hessian<T: Scalar>(state: &LiftedState<T>, data: &Dataset<T>, cfg: &SolverConfig) -> Result<Matrix<T>> {
    let act = activation_matrix(state, data)?;
    let n_theta = state.theta.rows() * state.theta.cols();
    let dim = n_theta + state.gamma.rows() * state.gamma.cols();
    if dim > 4000 {
        return Err(SmfError::Insufficient(format!("lifted dimension {dim} too large for a dense Hessian")));
    }
    let mut hess = Matrix::zeros(dim, dim);
    for s in 0..data.n() {
        let (_, hdd) = score_derivatives(data.labels[s], act.col(s), &cfg.score)?;
        let jac = activation_jacobian(state, data, s);
        for (c1, r1) in jac.iter().enumerate() {
            for (c2, r2) in jac.iter().enumerate() {
                let w = hdd[(c1, c2)];
                for &(i1, v1) in r1 {
                    for &(i2, v2) in r2 {
                        hess[(i1, i2)] += w * v1 * v2;
                    }
                }
            }
        }
    }
    // Quadratic terms.
    let k = data.kappa;
    let two_xi = T::lit(2.0 * cfg.xi);
    let two_lambda = T::lit(2.0 * cfg.lambda);
    let tr = state.theta.rows();
    for j in 0..state.theta.cols() {
        for i in 0..tr {
            let in_a = match state.variant {
                SmfVariant::FeatureBased => i < k,
                SmfVariant::FilterBased => j < k,
            };
            let idx = i + j * tr;
            hess[(idx, idx)] += if in_a { two_lambda } else { two_xi };
        }
    }
    for idx in n_theta..dim {
        hess[(idx, idx)] += two_lambda;
    }
    Ok(hess)
}

/// Worst-case slacks found by [`hessian_eig_bounds_check`]; every slack is
/// nonnegative when the bounds hold.
#[derive(Clone, Debug, Serialize)]
pub struct HessianBoundReport {
    pub trials: usize,
    /// `min λ_min(Ḧ) − lower bound` over samples and trials.
    pub lower_slack: f64,
    /// `min upper bound − λ_max(Ḧ)`.
    pub upper_slack: f64,
    /// `min λ_min(H) − λ⁻ λ_min(ΦΦᵀ)` for `H = Σ_s Ḧ_s ⊗ φ_s φ_sᵀ`.
    pub sandwich_lower_slack: f64,
    /// `min λ⁺ λ_max(ΦΦᵀ) − λ_max(H)`.
    pub sandwich_upper_slack: f64,
    pub max_activation_norm: f64,
}

impl HessianBoundReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.lower_slack >= -tol && self.upper_slack >= -tol && self.sandwich_lower_slack >= -tol && self.sandwich_upper_slack >= -tol
    }
}

/// Samples random bounded linear classifiers on `Φ = [x; x']` and checks the
/// per-sample eigenvalue bounds of `Ḧ` and the Kronecker sandwich of the
/// assembled loss Hessian.
pub fn hessian_eig_bounds_check<T: Scalar>(data: &Dataset<T>, cfg: &SolverConfig, trials: usize) -> Result<HessianBoundReport> {
    let k = data.kappa;
    let d = data.p() + data.q();
    if data.p() * k > 200 {
        return Err(SmfError::Insufficient(format!("p*kappa = {} exceeds 200", data.p() * k)));
    }
    if !cfg.score.is_exp() {
        return Err(SmfError::Domain("eigenvalue bounds are stated for the exponential score".into()));
    }
    let phi = data.phi();
    let (gram_eigs, _) = linalg::sym_eigen(&phi.matmul_tr(&phi))?;
    let (g_min, g_max) = (gram_eigs[0], gram_eigs[d - 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rep = HessianBoundReport {
        trials,
        lower_slack: f64::INFINITY,
        upper_slack: f64::INFINITY,
        sandwich_lower_slack: f64::INFINITY,
        sandwich_upper_slack: f64::INFINITY,
        max_activation_norm: 0.0,
    };
    let col_scale = (0..data.n()).map(|s| linalg::norm2(phi.col(s))).fold(T::zero(), T::max);
    for _ in 0..trials {
        let w = Matrix::<T>::random_normal(d, k, T::one() / col_scale.max(T::one()), &mut rng);
        let act = w.tr_matmul(&phi);
        let mut lam_lo = T::infinity();
        let mut lam_hi = T::zero();
        let mut big = Matrix::<T>::zeros(d * k, d * k);
        for s in 0..data.n() {
            let a = act.col(s);
            rep.max_activation_norm = rep.max_activation_norm.max(linalg::norm2(a).as_f64());
            let (_, hdd) = score_derivatives(data.labels[s], a, &cfg.score)?;
            let (ev, _) = linalg::sym_eigen(&hdd)?;
            let (lb, ub) = mnl_eig_bounds(&predictive_probs(a, &cfg.score));
            rep.lower_slack = rep.lower_slack.min((ev[0] - lb).as_f64());
            rep.upper_slack = rep.upper_slack.min((ub - ev[k - 1]).as_f64());
            lam_lo = lam_lo.min(ev[0]);
            lam_hi = lam_hi.max(ev[k - 1]);
            let f = phi.col(s);
            for c1 in 0..k {
                for c2 in 0..k {
                    let h = hdd[(c1, c2)];
                    for j in 0..d {
                        for i in 0..d {
                            big[(c1 * d + i, c2 * d + j)] += h * f[i] * f[j];
                        }
                    }
                }
            }
        }
        let (big_ev, _) = linalg::sym_eigen(&big)?;
        rep.sandwich_lower_slack = rep.sandwich_lower_slack.min((big_ev[0] - lam_lo * g_min).as_f64());
        rep.sandwich_upper_slack = rep.sandwich_upper_slack.min((lam_hi * g_max - big_ev[d * k - 1]).as_f64());
    }
    Ok(rep)
}
