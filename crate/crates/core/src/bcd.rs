//! Block coordinate descent on the factored problem, as a baseline for LPGD.
//!
//! Each sweep updates `H`, `W`, `β`, `γ` in that order:
//!
//! * `H` and `W` take a prox-linear step: the factorization term is kept
//!   exactly and the classification term (plus its ridge) is linearized with a
//!   proximal weight `1/t`, which leaves a ridge least-squares solve. `t` is
//!   found by backtracking on the usual majorization test.
//! * `β` and `γ` take a few gradient steps starting at `τ`, halved until the
//!   objective decreases sufficiently.
//!
//! The objective equals the lifted one at `lift(W, H, β, γ)`, so values are
//! directly comparable with [`lpgd_train`](crate::lpgd::lpgd_train); it is
//! evaluated from the factors without forming the lifted matrix.

use std::time::Instant;

use crate::error::{Result, SmfError};
use crate::linalg::{self, Matrix};
use crate::lpgd::{fit_contraction_rate, IterTrace, LpgdResult};
use crate::model::{default_init, lift, ConstraintSet, Dataset, FactoredModel, LiftedState, SmfVariant, SolverConfig};
use crate::objective::loss_and_hdot;
use crate::scalar::Scalar;

/// Gradient steps per sweep on each of `β` and `γ`.
pub const DEFAULT_INNER_STEPS: usize = 5;
const MAX_HALVINGS: usize = 50;
const MAX_PROX_T: f64 = 1e8;

#[derive(Clone, Copy, Debug)]
pub struct BcdOptions {
    pub inner_steps: usize,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            inner_steps: DEFAULT_INNER_STEPS,
        }
    }
}

/// Runs BCD with the default options.
pub fn bcd_train<T: Scalar>(
    data: &Dataset<T>,
    cfg: &SolverConfig,
    init: Option<&FactoredModel<T>>,
    reference: Option<&LiftedState<T>>,
) -> Result<LpgdResult<T>> {
    bcd_train_with(data, cfg, init, reference, BcdOptions::default())
}

/// Objective value with the gradients of its classification-plus-ridge part
/// with respect to the activation blocks.
struct Eval<T: Scalar> {
    value: T,
    fit: T,
    grad_a: Matrix<T>,
    grad_gamma: Matrix<T>,
    grad_norm: T,
}

impl<T: Scalar> Eval<T> {
    /// Everything except `ξ||X − WH||²`.
    fn smooth(&self) -> T {
        self.value - self.fit
    }
}

/// The `A` block of the lifted state: `βᵀH` (SMF-H, `κ x n`) or `Wβ` (SMF-W, `p x κ`).
fn a_block<T: Scalar>(m: &FactoredModel<T>, variant: SmfVariant) -> Matrix<T> {
    match variant {
        SmfVariant::FeatureBased => m.beta.tr_matmul(&m.h),
        SmfVariant::FilterBased => m.w.matmul(&m.beta),
    }
}

/// Classification loss plus ridge, `Σ nll + λ(||A||² + ||γ||²)`, computed from
/// the factors without forming the `p x n` block; with the gradients in `A`
/// and `γ` when `want_grad`.
fn smooth_part<T: Scalar>(m: &FactoredModel<T>, data: &Dataset<T>, cfg: &SolverConfig, want_grad: bool) -> Result<(T, Option<(Matrix<T>, Matrix<T>)>)> {
    let a = a_block(m, cfg.variant);
    let mut act = match cfg.variant {
        SmfVariant::FeatureBased => a.clone(),
        SmfVariant::FilterBased => a.tr_matmul(&data.x_data),
    };
    if data.q() > 0 {
        act.axpy(T::one(), &m.gamma.tr_matmul(&data.x_aux));
    }
    let (loss, hdot) = loss_and_hdot(&act, data, &cfg.score, want_grad)?;
    let value = loss + T::lit(cfg.lambda) * (a.frobenius_sq() + m.gamma.frobenius_sq());
    let grads = hdot.map(|hd| {
        let two_lambda = T::lit(2.0 * cfg.lambda);
        let mut grad_a = match cfg.variant {
            SmfVariant::FeatureBased => hd.clone(),
            SmfVariant::FilterBased => data.x_data.matmul_tr(&hd),
        };
        grad_a.axpy(two_lambda, &a);
        let mut grad_gamma = if data.q() > 0 {
            data.x_aux.matmul_tr(&hd)
        } else {
            Matrix::zeros(0, data.kappa)
        };
        grad_gamma.axpy(two_lambda, &m.gamma);
        (grad_a, grad_gamma)
    });
    Ok((value, grads))
}

fn evaluate<T: Scalar>(m: &FactoredModel<T>, data: &Dataset<T>, cfg: &SolverConfig) -> Result<Eval<T>> {
    let (smooth, grads) = smooth_part(m, data, cfg, true)?;
    let (grad_a, grad_gamma) = grads.expect("requested");
    let fit = fit_of(m, data, cfg.xi);
    // The B block's gradient is 2ξ(B − X), whose squared norm is 4ξ·fit.
    let grad_norm = (grad_a.frobenius_sq() + grad_gamma.frobenius_sq() + T::lit(4.0 * cfg.xi) * fit).sqrt();
    Ok(Eval {
        value: smooth + fit,
        fit,
        grad_a,
        grad_gamma,
        grad_norm,
    })
}

fn smooth_of<T: Scalar>(m: &FactoredModel<T>, data: &Dataset<T>, cfg: &SolverConfig) -> Result<T> {
    Ok(smooth_part(m, data, cfg, false)?.0)
}

fn fit_of<T: Scalar>(m: &FactoredModel<T>, data: &Dataset<T>, xi: f64) -> T {
    T::lit(xi) * m.w.matmul(&m.h).sub(&data.x_data).frobenius_sq()
}

/// Solves `(2ξ G + I/t) Y = 2ξ R + Y₀/t − D` for the block `Y` (`r x cols`).
fn prox_solve<T: Scalar>(gram: &Matrix<T>, rhs_fit: &Matrix<T>, y0: &Matrix<T>, d: &Matrix<T>, xi: f64, t: f64) -> Result<Matrix<T>> {
    let two_xi = T::lit(2.0 * xi);
    let inv_t = T::lit(1.0 / t);
    let mut lhs = gram.scale(two_xi);
    for i in 0..lhs.rows() {
        lhs[(i, i)] += inv_t;
    }
    let mut rhs = rhs_fit.scale(two_xi);
    rhs.axpy(inv_t, y0);
    rhs.axpy(-T::one(), d);
    linalg::solve_spd_matrix(&lhs, &rhs)
}

/// Prox-linear update of one factor. `current` is the factor in `r x cols`
/// orientation, `gram`/`rhs_fit` define the factorization term, `grad` is the
/// gradient of the smooth part in the same orientation (`None` when the smooth
/// part does not depend on this factor). Returns the new factor and the `t` used.
#[allow(clippy::too_many_arguments)]
fn prox_update<T: Scalar>(
    current: &Matrix<T>,
    gram: &Matrix<T>,
    rhs_fit: &Matrix<T>,
    grad: Option<&Matrix<T>>,
    smooth0: T,
    mut smooth_at: impl FnMut(&Matrix<T>) -> Result<T>,
    xi: f64,
    t0: f64,
) -> Result<(Matrix<T>, f64)> {
    let Some(grad) = grad else {
        // Exact ridge least squares with a vanishing proximal weight.
        let scale = 1.0 + gram.frobenius().as_f64();
        let zero = Matrix::zeros(current.rows(), current.cols());
        return Ok((prox_solve(gram, rhs_fit, current, &zero, xi, 1e12 / scale)?, t0));
    };
    let mut t = t0;
    for _ in 0..MAX_HALVINGS {
        let cand = prox_solve(gram, rhs_fit, current, grad, xi, t)?;
        if cand.is_finite() {
            let delta = cand.sub(current);
            let model_bound = smooth0 + grad.inner(&delta) + delta.frobenius_sq() * T::lit(0.5 / t);
            let s = smooth_at(&cand)?;
            if s.is_finite() && s <= model_bound {
                return Ok((cand, t));
            }
        }
        t *= 0.5;
    }
    Ok((current.clone(), t))
}

/// Armijo gradient steps on one block through `set`, starting from `tau`.
fn gradient_steps<T: Scalar>(
    model: &mut FactoredModel<T>,
    data: &Dataset<T>,
    cfg: &SolverConfig,
    steps: usize,
    grad_of: impl Fn(&FactoredModel<T>, &Eval<T>) -> Matrix<T>,
    block: impl Fn(&mut FactoredModel<T>) -> &mut Matrix<T>,
) -> Result<()> {
    for _ in 0..steps {
        let ev = evaluate(model, data, cfg)?;
        let g = grad_of(model, &ev);
        let g2 = g.frobenius_sq();
        if g2 == T::zero() {
            return Ok(());
        }
        let mut t = cfg.tau;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let mut trial = model.clone();
            block(&mut trial).axpy(T::lit(-t), &g);
            // β and γ leave the factorization term unchanged.
            let v = smooth_of(&trial, data, cfg)?;
            if v.is_finite() && v <= ev.smooth() - T::lit(0.5 * t) * g2 {
                *model = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok(());
        }
    }
    Ok(())
}

/// BCD with explicit options. Only the unconstrained set is supported. The
/// trace's `grad_map_norm` is the norm of the lifted gradient at the current
/// factors. Stops when a sweep lowers the objective by less than
/// `stop_tol · max(1, |F|)`.
pub fn bcd_train_with<T: Scalar>(
    data: &Dataset<T>,
    cfg: &SolverConfig,
    init: Option<&FactoredModel<T>>,
    reference: Option<&LiftedState<T>>,
    opts: BcdOptions,
) -> Result<LpgdResult<T>> {
    cfg.validate_for(data)?;
    if cfg.constraint != ConstraintSet::Unconstrained {
        return Err(SmfError::config("constraint", "block coordinate descent supports only the unconstrained set"));
    }
    let mut m = match init {
        Some(m) => {
            m.check_against(data)?;
            m.clone()
        }
        None => default_init(data.p(), data.n(), data.q(), data.kappa, cfg.rank, cfg.seed),
    };
    if let Some(r) = reference {
        r.check_against(data)?;
    }
    let dist = |m: &FactoredModel<T>| -> Result<Option<f64>> {
        match reference {
            Some(r) => Ok(Some(lift(m, cfg.variant)?.distance(r).as_f64())),
            None => Ok(None),
        }
    };
    let start = Instant::now();
    let ev = evaluate(&m, data, cfg)?;
    if !ev.value.is_finite() {
        return Err(SmfError::Diverged { iter: 0, last_finite: None });
    }
    let mut trace = vec![IterTrace {
        iter: 0,
        objective: ev.value.as_f64(),
        grad_map_norm: ev.grad_norm.as_f64(),
        dist_to_ref: dist(&m)?,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    }];
    let mut converged = ev.grad_norm.as_f64() < cfg.stop_tol;
    let (mut t_h, mut t_w) = (1.0_f64, 1.0_f64);
    let xi = cfg.xi;

    let mut k = 0;
    while !converged && k < cfg.max_iters {
        k += 1;
        let f_prev = trace.last().expect("nonempty").objective;

        // H: factorization term ξ||X − WH||² with gram WᵀW.
        let ev = evaluate(&m, data, cfg)?;
        let gram = m.w.tr_matmul(&m.w);
        let rhs = m.w.tr_matmul(&data.x_data);
        let grad_h = match cfg.variant {
            SmfVariant::FeatureBased => Some(m.beta.matmul(&ev.grad_a)),
            SmfVariant::FilterBased => None,
        };
        let base = m.clone();
        let (h, t) = prox_update(
            &m.h,
            &gram,
            &rhs,
            grad_h.as_ref(),
            ev.smooth(),
            |cand| {
                let trial = FactoredModel { h: cand.clone(), ..base.clone() };
                smooth_of(&trial, data, cfg)
            },
            xi,
            (2.0 * t_h).min(MAX_PROX_T),
        )?;
        m.h = h;
        t_h = t;

        // W, transposed so the unknown is r x p.
        let ev = evaluate(&m, data, cfg)?;
        let gram = m.h.matmul_tr(&m.h);
        let rhs = m.h.matmul_tr(&data.x_data);
        let grad_wt = match cfg.variant {
            SmfVariant::FeatureBased => None,
            SmfVariant::FilterBased => Some(m.beta.matmul_tr(&ev.grad_a)),
        };
        let base = m.clone();
        let (wt, t) = prox_update(
            &m.w.transpose(),
            &gram,
            &rhs,
            grad_wt.as_ref(),
            ev.smooth(),
            |cand| {
                let trial = FactoredModel { w: cand.transpose(), ..base.clone() };
                smooth_of(&trial, data, cfg)
            },
            xi,
            (2.0 * t_w).min(MAX_PROX_T),
        )?;
        m.w = wt.transpose();
        t_w = t;

        let variant = cfg.variant;
        gradient_steps(
            &mut m,
            data,
            cfg,
            opts.inner_steps,
            |m, ev| match variant {
                SmfVariant::FeatureBased => m.h.matmul_tr(&ev.grad_a),
                SmfVariant::FilterBased => m.w.tr_matmul(&ev.grad_a),
            },
            |m| &mut m.beta,
        )?;
        if data.q() > 0 {
            gradient_steps(&mut m, data, cfg, opts.inner_steps, |_, ev| ev.grad_gamma.clone(), |m| &mut m.gamma)?;
        }

        let ev = evaluate(&m, data, cfg)?;
        let f = ev.value.as_f64();
        if !f.is_finite() {
            return Err(SmfError::Diverged {
                iter: k,
                last_finite: trace.last().cloned().map(Box::new),
            });
        }
        trace.push(IterTrace {
            iter: k,
            objective: f,
            grad_map_norm: ev.grad_norm.as_f64(),
            dist_to_ref: dist(&m)?,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });
        converged = ev.grad_norm.as_f64() < cfg.stop_tol || (f_prev - f).abs() <= cfg.stop_tol * f.abs().max(1.0);
    }

    let rho_estimate = if reference.is_some() && converged { fit_contraction_rate(&trace).ok() } else { None };
    Ok(LpgdResult {
        final_state: lift(&m, cfg.variant)?,
        final_model: m,
        trace,
        converged,
        rho_estimate,
    })
}
