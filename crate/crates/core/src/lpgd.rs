//! Lifted low-rank projected gradient descent.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmfError};
use crate::linalg;
use crate::model::{default_init, lift, project_constraint, unlift, ConstraintSet, Dataset, FactoredModel, LiftedState, SolverConfig};
use crate::objective::{objective_and_gradient, LossGradient};
use crate::scalar::Scalar;

/// One row of a solver trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterTrace {
    pub iter: usize,
    pub objective: f64,
    pub grad_map_norm: f64,
    pub dist_to_ref: Option<f64>,
    pub elapsed_seconds: f64,
}

/// Outcome of a training run.
#[derive(Clone, Debug)]
pub struct LpgdResult<T: Scalar> {
    pub final_state: LiftedState<T>,
    pub final_model: FactoredModel<T>,
    pub trace: Vec<IterTrace>,
    pub converged: bool,
    pub rho_estimate: Option<f64>,
}

impl<T: Scalar> LpgdResult<T> {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.objective)
    }
}

/// Writes one JSON object per line.
pub fn write_trace_jsonl(path: &Path, trace: &[IterTrace]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in trace {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_jsonl(path: &Path) -> Result<Vec<IterTrace>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(SmfError::from))
        .collect()
}

/// `G(Z, τ) = (Z − Π_Θ(Z − τ∇F(Z))) / τ` given the gradient at `Z`.
/// With no constraint the gradient itself is returned.
pub fn gradient_mapping_from<T: Scalar>(state: &LiftedState<T>, grad: &LossGradient<T>, tau: f64, constraint: &ConstraintSet) -> LossGradient<T> {
    if let ConstraintSet::Unconstrained = constraint {
        return grad.clone();
    }
    let t = T::lit(tau);
    let g = grad.clone().into_state(state.variant);
    let projected = project_constraint(&state.axpy(-t, &g), constraint);
    let inv = T::one() / t;
    LossGradient {
        d_theta: state.theta.sub(&projected.theta).scale(inv),
        d_gamma: state.gamma.sub(&projected.gamma).scale(inv),
    }
}

/// Gradient mapping at `state` and its Frobenius norm over the pair.
pub fn gradient_mapping<T: Scalar>(state: &LiftedState<T>, data: &Dataset<T>, cfg: &SolverConfig) -> Result<(LossGradient<T>, T)> {
    let (_, grad) = objective_and_gradient(state, data, cfg)?;
    let g = gradient_mapping_from(state, &grad, cfg.tau, &cfg.constraint);
    let nrm = g.norm();
    Ok((g, nrm))
}

/// Runs the lifted iteration
///
/// ```text
/// θ_k = Π_r(Π_Θ(θ_{k-1} − τ∇_θF)),   γ_k = Π_Θ(γ_{k-1} − τ∇_γF)
/// ```
///
/// from `init` (or [`default_init`] seeded by `cfg.seed`). The trace holds
/// iteration 0 and every completed iteration. The run stops early once the
/// gradient-mapping norm or the projected step length `||Z_k − Z_{k-1}|| / τ`
/// drops below `cfg.stop_tol`; the latter is what vanishes at rank-constrained
/// fixed points where the unconstrained gradient does not.
pub fn lpgd_train<T: Scalar>(
    data: &Dataset<T>,
    cfg: &SolverConfig,
    init: Option<&FactoredModel<T>>,
    reference: Option<&LiftedState<T>>,
) -> Result<LpgdResult<T>> {
    cfg.validate_for(data)?;
    let model0 = match init {
        Some(m) => {
            m.check_against(data)?;
            m.clone()
        }
        None => default_init(data.p(), data.n(), data.q(), data.kappa, cfg.rank, cfg.seed),
    };
    let mut z = lift(&model0, cfg.variant)?;
    if let Some(r) = reference {
        r.check_against(data)?;
    }
    let dist = |z: &LiftedState<T>| reference.map(|r| z.distance(r).as_f64());
    let tau = T::lit(cfg.tau);
    let start = Instant::now();

    let (mut f, mut grad) = objective_and_gradient(&z, data, cfg)?;
    if !f.is_finite() {
        return Err(SmfError::Diverged { iter: 0, last_finite: None });
    }
    let gm0 = gradient_mapping_from(&z, &grad, cfg.tau, &cfg.constraint).norm();
    let mut trace = vec![IterTrace {
        iter: 0,
        objective: f.as_f64(),
        grad_map_norm: gm0.as_f64(),
        dist_to_ref: dist(&z),
        elapsed_seconds: start.elapsed().as_secs_f64(),
    }];
    let mut converged = gm0.as_f64() < cfg.stop_tol;
    let mut last_step = f64::INFINITY;

    let mut k = 0;
    while !converged && k < cfg.max_iters {
        k += 1;
        let g = grad.into_state(cfg.variant);
        let stepped = project_constraint(&z.axpy(-tau, &g), &cfg.constraint);
        let theta = linalg::rank_projection(&stepped.theta, cfg.rank)?;
        let next = LiftedState {
            theta,
            gamma: stepped.gamma,
            variant: cfg.variant,
        };
        if !next.is_finite() {
            return Err(diverged(k, &trace));
        }
        last_step = (next.distance(&z) / tau).as_f64();
        z = next;
        let f_prev = f;
        (f, grad) = objective_and_gradient(&z, data, cfg)?;
        if !f.is_finite() {
            return Err(diverged(k, &trace));
        }
        if f > f_prev {
            log::debug!("objective increased at iteration {k}: {} -> {}", f_prev.as_f64(), f.as_f64());
        }
        let gm = gradient_mapping_from(&z, &grad, cfg.tau, &cfg.constraint).norm().as_f64();
        trace.push(IterTrace {
            iter: k,
            objective: f.as_f64(),
            grad_map_norm: gm,
            dist_to_ref: dist(&z),
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });
        converged = gm < cfg.stop_tol || last_step < cfg.stop_tol;
    }

    let stationarity = trace.last().map_or(f64::INFINITY, |t| t.grad_map_norm).min(last_step);
    let rho_estimate = if reference.is_some() && stationarity < 10.0 * cfg.stop_tol {
        fit_contraction_rate(&trace).ok()
    } else {
        None
    };
    let final_model = unlift(&z, cfg.rank)?;
    Ok(LpgdResult {
        final_state: z,
        final_model,
        trace,
        converged,
        rho_estimate,
    })
}

fn diverged(iter: usize, trace: &[IterTrace]) -> SmfError {
    SmfError::Diverged {
        iter,
        last_finite: trace.last().cloned().map(Box::new),
    }
}

/// Minimum number of usable points for [`fit_contraction_rate`].
pub const MIN_RATE_POINTS: usize = 10;

/// `exp(slope)` of a least-squares line through `log dist_to_ref` against the
/// iteration index, over the final half of the points whose distance is
/// present and above `1e-14`.
pub fn fit_contraction_rate(trace: &[IterTrace]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = trace
        .iter()
        .filter_map(|t| t.dist_to_ref.filter(|&d| d > 1e-14).map(|d| (t.iter as f64, d.ln())))
        .collect();
    if pts.len() < MIN_RATE_POINTS {
        return Err(SmfError::Insufficient(format!(
            "{} usable trace points, need {MIN_RATE_POINTS}",
            pts.len()
        )));
    }
    Ok(least_squares_slope(&pts[pts.len() / 2..]).exp())
}

/// Admissible step sizes `(1/(2μ), 3/(2L))` and whether `L/μ < 3`.
pub fn step_size_window(mu: f64, l: f64) -> (f64, f64, bool) {
    (1.0 / (2.0 * mu), 3.0 / (2.0 * l), l / mu < 3.0)
}

/// Relative optimality gap below which [`loss_decay_rate`] stops fitting.
pub const DECAY_GAP_FLOOR: f64 = 1e-6;

/// Exponential decay rate of a loss curve: minus the least-squares slope of
/// `ln(F_t − F_min)` against `t`, over the iterations whose gap is at least
/// [`DECAY_GAP_FLOOR`] times the initial gap. Larger means faster decay.
pub fn loss_decay_rate(objectives: &[f64]) -> Result<f64> {
    let fmin = objectives.iter().copied().fold(f64::INFINITY, f64::min);
    if !fmin.is_finite() || objectives.len() < 3 {
        return Err(SmfError::Insufficient("loss curve too short or non-finite".into()));
    }
    let g0 = objectives[0] - fmin;
    if !(g0 > 0.0) {
        return Err(SmfError::Insufficient("loss curve does not decrease".into()));
    }
    let pts: Vec<(f64, f64)> = objectives
        .iter()
        .enumerate()
        .map(|(t, &f)| (t as f64, f - fmin))
        .take_while(|&(_, g)| g >= DECAY_GAP_FLOOR * g0)
        .map(|(t, g)| (t, g.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(SmfError::Insufficient(format!("only {} points above the gap floor", pts.len())));
    }
    Ok(-least_squares_slope(&pts))
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Training algorithm selector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Lpgd,
    Bcd,
}

impl std::str::FromStr for Optimizer {
    type Err = SmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lpgd" => Ok(Self::Lpgd),
            "bcd" => Ok(Self::Bcd),
            other => Err(SmfError::config("optimizer", format!("unknown optimizer `{other}`, expected lpgd or bcd"))),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lpgd => "lpgd",
            Self::Bcd => "bcd",
        })
    }
}

/// Dispatches to [`lpgd_train`] or [`bcd_train`](crate::bcd::bcd_train).
pub fn train<T: Scalar>(
    optimizer: Optimizer,
    data: &Dataset<T>,
    cfg: &SolverConfig,
    init: Option<&FactoredModel<T>>,
    reference: Option<&LiftedState<T>>,
) -> Result<LpgdResult<T>> {
    match optimizer {
        Optimizer::Lpgd => lpgd_train(data, cfg, init, reference),
        Optimizer::Bcd => crate::bcd::bcd_train(data, cfg, init, reference),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::SmfVariant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geometric(ratio: f64, noise: impl Fn(usize) -> f64) -> Vec<IterTrace> {
        (0..40)
            .map(|i| IterTrace {
                iter: i,
                objective: 0.0,
                grad_map_norm: 0.0,
                dist_to_ref: Some(ratio.powi(i as i32) * noise(i)),
                elapsed_seconds: 0.0,
            })
            .collect()
    }

    #[test]
    fn contraction_rate_fits() {
        assert!((fit_contraction_rate(&geometric(0.5, |_| 1.0)).unwrap() - 0.5).abs() < 1e-6);
        assert!((fit_contraction_rate(&geometric(1.0, |_| 1.0)).unwrap() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..40).map(|_| 1.0 + 1e-3 * (2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0)).collect();
        assert!((fit_contraction_rate(&geometric(0.8, |i| noise[i])).unwrap() - 0.8).abs() < 1e-2);
        assert!(fit_contraction_rate(&geometric(0.5, |_| 1.0)[..5]).is_err());
    }

    #[test]
    fn decay_rate_of_geometric_loss() {
        let f: Vec<f64> = (0..50).map(|t| 3.0 + 0.8f64.powi(t)).collect();
        let r = loss_decay_rate(&f).unwrap();
        assert!((r + 0.8f64.ln()).abs() < 0.02, "{r}");
        let faster: Vec<f64> = (0..50).map(|t| 3.0 + 0.5f64.powi(t)).collect();
        assert!(loss_decay_rate(&faster).unwrap() > r);
        assert!(loss_decay_rate(&[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn window_examples() {
        let (lo, hi, ok) = step_size_window(5.0, 10.0);
        assert!((lo - 0.1).abs() < 1e-15 && (hi - 0.15).abs() < 1e-15 && ok);
        assert!(!step_size_window(1.0, 3.0).2);
        let (lo, hi, ok) = step_size_window(2.0, 2.0);
        assert!((lo - 0.25).abs() < 1e-15 && (hi - 0.75).abs() < 1e-15 && ok);
    }

    fn toy() -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::random_normal(6, 3, 1.0, &mut rng).matmul(&Matrix::random_normal(3, 12, 1.0, &mut rng));
        Dataset::new(x, Matrix::random_normal(2, 12, 1.0, &mut rng), (0..12).map(|i| i % 3).collect(), 2).unwrap()
    }

    #[test]
    fn rejects_nonpositive_tau() {
        let cfg = SolverConfig::new(SmfVariant::FeatureBased, 1.0, 1.0, 0.0, 2, 1);
        assert!(matches!(lpgd_train(&toy(), &cfg, None, None), Err(SmfError::InvalidConfig { field: "tau", .. })));
    }

    #[test]
    fn unconstrained_mapping_is_gradient() {
        let data = toy();
        let cfg = SolverConfig::new(SmfVariant::FilterBased, 1.0, 1.0, 0.1, 2, 1);
        let z = lift(&default_init(6, 12, 2, 2, 2, 0), SmfVariant::FilterBased).unwrap();
        let (gm, _) = gradient_mapping(&z, &data, &cfg).unwrap();
        let (_, g) = objective_and_gradient(&z, &data, &cfg).unwrap();
        assert_eq!(gm, g);
    }

    #[test]
    fn mapping_vanishes_at_constructed_stationary_point() {
        // SMF-H, κ = 1, q = 0, λ > 0: F separates into per-sample scalar problems
        // in A and a quadratic in B, so the minimizer is B = X and, per sample,
        // the root of σ(a) − 1{y=1} + 2λa = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10;
        let data = Dataset::without_aux(Matrix::random_normal(4, n, 1.0, &mut rng), (0..n).map(|i| i % 2).collect(), 1).unwrap();
        let lambda = 0.7;
        let mut cfg = SolverConfig::new(SmfVariant::FeatureBased, 1.5, lambda, 0.1, 2, 1);
        cfg.constraint = ConstraintSet::FrobeniusBall { radius_theta: 1e3, radius_gamma: 1e3 };
        let root = |y: usize| {
            let f = |a: f64| 1.0 / (1.0 + (-a).exp()) - y as f64 + 2.0 * lambda * a;
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 { hi = mid } else { lo = mid }
            }
            0.5 * (lo + hi)
        };
        let a = Matrix::from_fn(1, n, |_, s| root(data.labels[s]));
        let z = LiftedState::from_blocks(&a, &data.x_data, Matrix::zeros(0, 1), SmfVariant::FeatureBased);
        let (_, nrm) = gradient_mapping(&z, &data, &cfg).unwrap();
        assert!(nrm < 1e-10, "mapping norm {nrm}");
    }

    #[test]
    fn mapping_bounded_by_gradient_inside_ball() {
        let data = toy();
        let mut cfg = SolverConfig::new(SmfVariant::FilterBased, 1.0, 0.5, 0.3, 2, 1);
        cfg.constraint = ConstraintSet::FrobeniusBall { radius_theta: 2.0, radius_gamma: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let raw = LiftedState {
                theta: Matrix::random_normal(6, 14, 1.0, &mut rng),
                gamma: Matrix::random_normal(2, 2, 1.0, &mut rng),
                variant: SmfVariant::FilterBased,
            };
            let z = project_constraint(&raw, &cfg.constraint);
            let (_, gm) = gradient_mapping(&z, &data, &cfg).unwrap();
            let (_, g) = objective_and_gradient(&z, &data, &cfg).unwrap();
            assert!(gm <= g.norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn iterates_stay_low_rank_and_runs_are_deterministic() {
        let data = toy();
        let mut cfg = SolverConfig::new(SmfVariant::FeatureBased, 2.0, 1.0, 0.05, 2, 30);
        cfg.stop_tol = 0.0;
        let a = lpgd_train(&data, &cfg, None, None).unwrap();
        let b = lpgd_train(&data, &cfg, None, None).unwrap();
        let strip = |t: &[IterTrace]| t.iter().map(|x| (x.iter, x.objective.to_bits(), x.grad_map_norm.to_bits())).collect::<Vec<_>>();
        assert_eq!(strip(&a.trace), strip(&b.trace));
        assert_eq!(a.trace.len(), 31);
        let sv = linalg::svd_thin(&a.final_state.theta).unwrap().singular_values;
        assert!(sv[2] < 1e-8 * sv[0]);
        let relift = lift(&a.final_model, cfg.variant).unwrap();
        assert!(relift.theta.sub(&a.final_state.theta).frobenius() < 1e-8);
        assert!(a.trace.windows(2).all(|w| w[1].objective <= w[0].objective + 1e-9));
    }

    #[test]
    fn divergence_reports_iteration() {
        let data = toy();
        let cfg = SolverConfig::new(SmfVariant::FeatureBased, 50.0, 1.0, 10.0, 2, 500);
        match lpgd_train(&data, &cfg, None, None) {
            Err(SmfError::Diverged { iter, last_finite }) => {
                assert!(iter > 0);
                assert_eq!(last_finite.unwrap().iter, iter - 1);
            }
            other => panic!("expected divergence, got {:?}", other.map(|r| r.trace.len())),
        }
    }

    #[test]
    fn trace_jsonl_roundtrip() {
        let trace = geometric(0.5, |_| 1.0);
        let dir = std::env::temp_dir().join(format!("smf-trace-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("t.jsonl");
        write_trace_jsonl(&p, &trace).unwrap();
        let line = std::fs::read_to_string(&p).unwrap();
        assert!(line.lines().next().unwrap().contains("\"grad_map_norm\""));
        assert_eq!(read_trace_jsonl(&p).unwrap(), trace);
        std::fs::remove_dir_all(&dir).ok();
    }
}
