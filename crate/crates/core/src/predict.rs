//! Test-time prediction, classification metrics, cross-validation, the
//! MF-LR baseline and supervised-factor reports.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmfError};
use crate::linalg::{self, Matrix};
use crate::lpgd::{train, Optimizer};
use crate::model::{Dataset, FactoredModel, ScoreFunction, SmfVariant, SolverConfig};
use crate::objective::{nll, predictive_probs, score_derivatives};
use crate::scalar::Scalar;

/// Predicted label with class probabilities `[P(y=0), …, P(y=κ)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T: Scalar> {
    pub label: usize,
    pub probs: Vec<T>,
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(SmfError::shape(format!("{what} has length {got}, model expects {want}")));
    }
    Ok(())
}

/// `γᵀx_aux` as a κ-vector.
fn aux_term<T: Scalar>(model: &FactoredModel<T>, x_aux: &[T]) -> Result<Vec<T>> {
    check_len("x_aux", x_aux.len(), model.gamma.rows())?;
    Ok(model.gamma.tr_mul_vec(x_aux))
}

fn classify<T: Scalar>(a: &[T], score: &ScoreFunction) -> Prediction<T> {
    let probs = predictive_probs(a, score);
    Prediction {
        label: argmax(&probs),
        probs,
    }
}

/// SMF-W prediction: `a = βᵀWᵀx + γᵀx_aux`.
pub fn predict_filter<T: Scalar>(model: &FactoredModel<T>, x: &[T], x_aux: &[T], score: &ScoreFunction) -> Result<Prediction<T>> {
    model.check_shapes()?;
    check_len("x", x.len(), model.w.rows())?;
    let filtered = model.w.tr_mul_vec(x);
    let mut a = model.beta.tr_mul_vec(&filtered);
    for (ai, g) in a.iter_mut().zip(aux_term(model, x_aux)?) {
        *ai += g;
    }
    Ok(classify(&a, score))
}

/// Least-squares code of `x` on the dictionary `W`.
pub fn least_squares_code<T: Scalar>(w: &Matrix<T>, x: &[T]) -> Result<Vec<T>> {
    check_len("x", x.len(), w.rows())?;
    Ok(linalg::least_squares(w, &Matrix::col_vector(x))?.into_vec())
}

/// SMF-H prediction with the code fitted by least squares:
/// `h = argmin ||x − Wh||`, `a = βᵀh + γᵀx_aux`. Needs `W` of full column rank.
pub fn predict_feature_heuristic<T: Scalar>(model: &FactoredModel<T>, x: &[T], x_aux: &[T], score: &ScoreFunction) -> Result<Prediction<T>> {
    model.check_shapes()?;
    let h = least_squares_code(&model.w, x)?;
    let mut a = model.beta.tr_mul_vec(&h);
    for (ai, g) in a.iter_mut().zip(aux_term(model, x_aux)?) {
        *ai += g;
    }
    Ok(classify(&a, score))
}

/// Result of [`predict_feature_full`].
#[derive(Clone, Debug)]
pub struct SparseCodingPrediction<T: Scalar> {
    pub label: usize,
    /// Softmin of the per-class optimal objectives. A heuristic confidence,
    /// not a calibrated probability.
    pub probs: Vec<T>,
    /// Optimal code for each candidate label.
    pub codes: Vec<Vec<T>>,
    /// Optimal inner objective for each candidate label.
    pub objectives: Vec<T>,
}

/// Inner tolerance and iteration cap of the supervised sparse-coding solver.
pub const CODE_TOL: f64 = 1e-8;
pub const CODE_MAX_STEPS: usize = 500;

/// `ℓ(y, βᵀh + c) + ξ||x − Wh||²`, its gradient and Hessian in `h`.
fn code_objective<T: Scalar>(
    model: &FactoredModel<T>,
    x: &[T],
    offset: &[T],
    y: usize,
    h: &[T],
    score: &ScoreFunction,
    xi: T,
    want_derivs: bool,
) -> Result<(T, Option<(Vec<T>, Matrix<T>)>)> {
    let mut a = model.beta.tr_mul_vec(h);
    for (ai, &o) in a.iter_mut().zip(offset) {
        *ai += o;
    }
    let wh = model.w.mul_vec(h);
    let resid: Vec<T> = wh.iter().zip(x).map(|(&u, &v)| u - v).collect();
    let value = nll(y, &a, score)? + xi * linalg::dot(&resid, &resid);
    if !want_derivs {
        return Ok((value, None));
    }
    let (hdot, hddot) = score_derivatives(y, &a, score)?;
    let two_xi = xi + xi;
    let mut grad = model.beta.mul_vec(&hdot);
    for (g, v) in grad.iter_mut().zip(model.w.tr_mul_vec(&resid)) {
        *g += two_xi * v;
    }
    let mut hess = model.beta.matmul(&hddot).matmul_tr(&model.beta);
    hess.axpy(two_xi, &model.w.tr_matmul(&model.w));
    Ok((value, Some((grad, hess))))
}

/// Minimizes the inner objective for one candidate label by damped Newton
/// steps with backtracking. Returns the code and its objective.
fn solve_code<T: Scalar>(
    model: &FactoredModel<T>,
    x: &[T],
    offset: &[T],
    y: usize,
    h0: Vec<T>,
    score: &ScoreFunction,
    xi: T,
) -> Result<(Vec<T>, T)> {
    let r = h0.len();
    let mut h = h0;
    let tol2 = T::lit(CODE_TOL * CODE_TOL);
    let mut last_residual = f64::INFINITY;
    for _ in 0..CODE_MAX_STEPS {
        let (f, derivs) = code_objective(model, x, offset, y, &h, score, xi, true)?;
        let (grad, mut hess) = derivs.expect("requested");
        let gnorm = linalg::norm2(&grad);
        last_residual = gnorm.as_f64();
        if gnorm <= T::lit(CODE_TOL) {
            return Ok((h, f));
        }
        // Damping keeps the system solvable when βḦβᵀ + 2ξWᵀW is singular.
        let damp = T::lit(1e-12) * (T::one() + hess.max_abs());
        for i in 0..r {
            hess[(i, i)] += damp;
        }
        let dir = linalg::solve_spd(&hess, &grad)?;
        let decrement = linalg::dot(&grad, &dir);
        let floor = T::lit(1e3) * T::epsilon() * f.abs().max(T::one());
        if decrement * T::lit(0.5) <= tol2.max(floor) {
            return Ok((h, f));
        }
        let mut t = T::one();
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<T> = h.iter().zip(&dir).map(|(&hi, &di)| hi - t * di).collect();
            let (fc, _) = code_objective(model, x, offset, y, &cand, score, xi, false)?;
            if fc.is_finite() && fc <= f - T::lit(0.25) * t * decrement {
                h = cand;
                moved = true;
                break;
            }
            t *= T::lit(0.5);
        }
        if !moved {
            return Err(SmfError::NonConvergence { residual: last_residual });
        }
    }
    Err(SmfError::NonConvergence { residual: last_residual })
}

/// SMF-H prediction by supervised sparse coding: for each candidate label,
/// minimize `ℓ(y, βᵀh + γᵀx_aux) + ξ||x − Wh||²` over `h`, and pick the label
/// with the smallest optimum.
pub fn predict_feature_full<T: Scalar>(
    model: &FactoredModel<T>,
    x: &[T],
    x_aux: &[T],
    score: &ScoreFunction,
    xi: f64,
) -> Result<SparseCodingPrediction<T>> {
    model.check_shapes()?;
    check_len("x", x.len(), model.w.rows())?;
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(SmfError::config("xi", "must be positive"));
    }
    let offset = aux_term(model, x_aux)?;
    let r = model.rank();
    let start = least_squares_code(&model.w, x).unwrap_or_else(|_| vec![T::zero(); r]);
    let mut codes = Vec::with_capacity(model.kappa() + 1);
    let mut objectives = Vec::with_capacity(model.kappa() + 1);
    for y in 0..=model.kappa() {
        let (h, f) = solve_code(model, x, &offset, y, start.clone(), score, T::lit(xi))?;
        codes.push(h);
        objectives.push(f);
    }
    let neg: Vec<T> = objectives.iter().map(|&f| -f).collect();
    let label = argmax(&neg);
    let m = neg[label];
    let w: Vec<T> = neg.iter().map(|&v| (v - m).exp()).collect();
    let total: T = w.iter().copied().sum();
    Ok(SparseCodingPrediction {
        label,
        probs: w.iter().map(|&v| v / total).collect(),
        codes,
        objectives,
    })
}

/// Inner objective of supervised sparse coding at a given code.
pub fn sparse_coding_objective<T: Scalar>(model: &FactoredModel<T>, x: &[T], x_aux: &[T], y: usize, h: &[T], score: &ScoreFunction, xi: f64) -> Result<T> {
    let offset = aux_term(model, x_aux)?;
    Ok(code_objective(model, x, &offset, y, h, score, T::lit(xi), false)?.0)
}

/// How SMF-H models classify new samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePredictor {
    /// Least-squares code, falling back to the full method when `W` is rank
    /// deficient.
    #[default]
    Heuristic,
    Full,
}

/// Labels for every column of `data` under the variant's prediction rule.
pub fn predict_dataset<T: Scalar>(
    model: &FactoredModel<T>,
    data: &Dataset<T>,
    variant: SmfVariant,
    score: &ScoreFunction,
    xi: f64,
    how: FeaturePredictor,
) -> Result<Vec<Prediction<T>>> {
    model.check_shapes()?;
    if model.w.rows() != data.p() || model.gamma.rows() != data.q() || model.kappa() != data.kappa {
        return Err(SmfError::shape(format!(
            "model is for p={} q={} kappa={}, data has p={} q={} kappa={}",
            model.w.rows(),
            model.gamma.rows(),
            model.kappa(),
            data.p(),
            data.q(),
            data.kappa
        )));
    }
    let empty: Vec<T> = Vec::new();
    (0..data.n())
        .map(|s| {
            let x = data.x_data.col(s);
            let xa = if data.q() > 0 { data.x_aux.col(s) } else { &empty[..] };
            match (variant, how) {
                (SmfVariant::FilterBased, _) => predict_filter(model, x, xa, score),
                (SmfVariant::FeatureBased, FeaturePredictor::Heuristic) => match predict_feature_heuristic(model, x, xa, score) {
                    Err(SmfError::RankDeficient { .. }) => full_as_prediction(model, x, xa, score, xi),
                    other => other,
                },
                (SmfVariant::FeatureBased, FeaturePredictor::Full) => full_as_prediction(model, x, xa, score, xi),
            }
        })
        .collect()
}

fn full_as_prediction<T: Scalar>(model: &FactoredModel<T>, x: &[T], xa: &[T], score: &ScoreFunction, xi: f64) -> Result<Prediction<T>> {
    let p = predict_feature_full(model, x, xa, score, xi)?;
    Ok(Prediction {
        label: p.label,
        probs: p.probs,
    })
}

/// Fraction of matching labels.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(SmfError::shape(format!(
            "accuracy over {} predictions and {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Ridge penalty of the MF-LR baseline's logistic regression.
pub const BASELINE_RIDGE: f64 = 1e-4;
/// Stopping tolerance of the logistic-regression solver.
pub const LOGISTIC_TOL: f64 = 1e-8;
const LOGISTIC_MAX_STEPS: usize = 200;

/// Multinomial logistic regression `a = coefᵀf + intercept` with the
/// exponential score.
#[derive(Clone, Debug)]
pub struct LogisticRegression<T: Scalar> {
    /// `d x κ`.
    pub coef: Matrix<T>,
    pub intercept: Vec<T>,
}

impl<T: Scalar> LogisticRegression<T> {
    /// Fits `Σ_s nll(y_s, a_s) + ridge (||coef||² + ||intercept||²)` by Newton's
    /// method with backtracking. `features` is `d x n`.
    pub fn fit(features: &Matrix<T>, labels: &[usize], kappa: usize, ridge: f64) -> Result<Self> {
        let (d, n) = features.shape();
        if n != labels.len() || n == 0 {
            return Err(SmfError::shape(format!("{n} feature columns for {} labels", labels.len())));
        }
        if !(ridge > 0.0) {
            return Err(SmfError::config("ridge", "must be positive"));
        }
        let d1 = d + 1;
        let dim = d1 * kappa;
        let mut theta = vec![T::zero(); dim];
        let lam = T::lit(ridge);
        let aug = |s: usize, i: usize| if i < d { features[(i, s)] } else { T::one() };
        let loss = |theta: &[T]| -> Result<T> {
            let mut total = T::zero();
            for s in 0..n {
                let a: Vec<T> = (0..kappa).map(|c| (0..d1).map(|i| theta[c * d1 + i] * aug(s, i)).sum()).collect();
                total += nll(labels[s], &a, &ScoreFunction::Exp)?;
            }
            Ok(total + lam * linalg::dot(theta, theta))
        };
        let mut f = loss(&theta)?;
        for _ in 0..LOGISTIC_MAX_STEPS {
            let mut grad: Vec<T> = theta.iter().map(|&t| (lam + lam) * t).collect();
            let mut hess = Matrix::<T>::identity(dim).scale(lam + lam);
            let mut fs = vec![T::zero(); d1];
            for s in 0..n {
                for (i, v) in fs.iter_mut().enumerate() {
                    *v = aug(s, i);
                }
                let a: Vec<T> = (0..kappa).map(|c| linalg::dot(&theta[c * d1..(c + 1) * d1], &fs)).collect();
                let (hdot, hddot) = score_derivatives(labels[s], &a, &ScoreFunction::Exp)?;
                for c in 0..kappa {
                    for i in 0..d1 {
                        grad[c * d1 + i] += hdot[c] * fs[i];
                    }
                }
                for c in 0..kappa {
                    for c2 in 0..kappa {
                        let w = hddot[(c, c2)];
                        for j in 0..d1 {
                            let wj = w * fs[j];
                            if wj == T::zero() {
                                continue;
                            }
                            let col = hess.col_mut(c2 * d1 + j);
                            for i in 0..d1 {
                                col[c * d1 + i] += wj * fs[i];
                            }
                        }
                    }
                }
            }
            let gnorm = linalg::norm2(&grad);
            if gnorm <= T::lit(LOGISTIC_TOL) * (T::one() + f.abs()) {
                break;
            }
            let dir = linalg::solve_spd(&hess, &grad)?;
            let decrement = linalg::dot(&grad, &dir);
            if decrement * T::lit(0.5) <= T::lit(LOGISTIC_TOL) * T::lit(LOGISTIC_TOL) * (T::one() + f.abs()) {
                break;
            }
            let mut t = T::one();
            let mut moved = false;
            for _ in 0..60 {
                let cand: Vec<T> = theta.iter().zip(&dir).map(|(&a, &b)| a - t * b).collect();
                let fc = loss(&cand)?;
                if fc <= f - T::lit(0.25) * t * decrement {
                    theta = cand;
                    f = fc;
                    moved = true;
                    break;
                }
                t *= T::lit(0.5);
            }
            if !moved {
                break;
            }
        }
        let mut coef = Matrix::zeros(d, kappa);
        let mut intercept = vec![T::zero(); kappa];
        for c in 0..kappa {
            for i in 0..d {
                coef[(i, c)] = theta[c * d1 + i];
            }
            intercept[c] = theta[c * d1 + d];
        }
        Ok(Self { coef, intercept })
    }

    pub fn activation(&self, f: &[T]) -> Vec<T> {
        let mut a = self.coef.tr_mul_vec(f);
        for (ai, &b) in a.iter_mut().zip(&self.intercept) {
            *ai += b;
        }
        a
    }

    /// Predicted labels for the columns of `features`.
    pub fn predict(&self, features: &Matrix<T>) -> Vec<usize> {
        (0..features.cols())
            .map(|s| argmax(&predictive_probs(&self.activation(features.col(s)), &ScoreFunction::Exp)))
            .collect()
    }
}

/// Two-stage baseline: rank-`r` SVD `X_train ≈ UΣVᵀ`, `W = UΣ`, then a
/// ridge logistic regression on `[WᵀX; X_aux]`. Returns test accuracy.
pub fn mf_lr_baseline<T: Scalar>(train_set: &Dataset<T>, test: &Dataset<T>, r: usize) -> Result<f64> {
    if train_set.p() != test.p() || train_set.q() != test.q() || train_set.kappa != test.kappa {
        return Err(SmfError::shape("train and test datasets disagree in p, q or kappa"));
    }
    if train_set.x_data.max_abs() == T::zero() {
        return Err(SmfError::Insufficient("training matrix is zero".into()));
    }
    let svd = linalg::truncated_svd(&train_set.x_data, r)?;
    let mut w = svd.u.clone();
    for j in 0..r {
        let s = svd.singular_values[j];
        w.col_mut(j).iter_mut().for_each(|v| *v *= s);
    }
    let feats = |d: &Dataset<T>| w.tr_matmul(&d.x_data).vstack(&d.x_aux);
    let lr = LogisticRegression::fit(&feats(train_set), &train_set.labels, train_set.kappa, BASELINE_RIDGE)?;
    accuracy(&lr.predict(&feats(test)), &test.labels)
}

/// Stratified fold index for every sample: within each class the samples are
/// shuffled with `seed` and dealt round-robin, continuing the deal across
/// classes so fold sizes differ by at most one.
pub fn fold_assignment(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(SmfError::config("folds", "must be at least 2"));
    }
    if labels.len() < folds {
        return Err(SmfError::config("folds", format!("{folds} folds for {} samples", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut out = vec![0; labels.len()];
    let mut next = 0;
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            out[i] = next % folds;
            next += 1;
        }
    }
    Ok(out)
}

/// One fold of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub config: usize,
    pub fold: usize,
    pub accuracy: f64,
}

/// Mean and (population) standard deviation of accuracy per configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub config: usize,
    pub xi: f64,
    pub lambda: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub rows: Vec<CvRow>,
    pub summary: Vec<CvSummary>,
}

impl CvTable {
    /// CSV with header `config,fold,accuracy`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "config,fold,accuracy")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.config, r.fold, r.accuracy)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Options for [`cross_validate`].
#[derive(Clone, Copy, Debug, Default)]
pub struct CvOptions {
    pub optimizer: Optimizer,
    pub predictor: FeaturePredictor,
}

/// K-fold cross-validation of every configuration in `grid`. Fold runs are
/// independent and execute on the current rayon pool.
pub fn cross_validate<T: Scalar>(data: &Dataset<T>, grid: &[SolverConfig], folds: usize, seed: u64, opts: CvOptions) -> Result<CvTable> {
    let assign = fold_assignment(&data.labels, folds, seed)?;
    for cfg in grid {
        cfg.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..folds).map(move |f| (c, f))).collect();
    let rows: Vec<CvRow> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let cfg = &grid[c];
            let train_idx: Vec<usize> = (0..data.n()).filter(|&i| assign[i] != f).collect();
            let test_idx: Vec<usize> = (0..data.n()).filter(|&i| assign[i] == f).collect();
            let train_set = data.subset(&train_idx);
            let test = data.subset(&test_idx);
            for class in 0..=data.kappa {
                if data.labels.contains(&class) && !train_set.labels.contains(&class) {
                    log::warn!("class {class} absent from the training part of fold {f}");
                }
            }
            let fit = train(opts.optimizer, &train_set, cfg, None, None)?;
            let preds = predict_dataset(&fit.final_model, &test, cfg.variant, &cfg.score, cfg.xi, opts.predictor)?;
            let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
            Ok(CvRow {
                config: c,
                fold: f,
                accuracy: accuracy(&labels, &test.labels)?,
            })
        })
        .collect::<Result<_>>()?;
    let summary = grid
        .iter()
        .enumerate()
        .map(|(c, cfg)| {
            let accs: Vec<f64> = rows.iter().filter(|r| r.config == c).map(|r| r.accuracy).collect();
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
            CvSummary {
                config: c,
                xi: cfg.xi,
                lambda: cfg.lambda,
                mean,
                std: var.sqrt(),
            }
        })
        .collect();
    Ok(CvTable { rows, summary })
}

/// Identifier of a feature in a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureId {
    Index(usize),
    Name(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub feature: FeatureId,
    pub weight: f64,
}

/// One supervised factor `(w_j, β_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorEntry {
    pub factor: usize,
    pub beta: Vec<f64>,
    pub w: Vec<f64>,
    pub top_features: Vec<FeatureWeight>,
    /// The factor column is identically zero.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    pub factors: Vec<FactorEntry>,
}

/// Default number of extreme features listed per factor.
pub const DEFAULT_TOP_K: usize = 5;

/// Per-factor coefficients and the `top_k` features with largest `|w_ij|`.
pub fn supervised_factor_report<T: Scalar>(model: &FactoredModel<T>, feature_names: Option<&[String]>, top_k: usize) -> Result<FactorReport> {
    model.check_shapes()?;
    if let Some(names) = feature_names {
        check_len("feature names", names.len(), model.w.rows())?;
    }
    let factors = (0..model.rank())
        .map(|j| {
            let col = model.w.col(j);
            let degenerate = col.iter().all(|v| *v == T::zero());
            let mut order: Vec<usize> = (0..col.len()).collect();
            order.sort_by(|&a, &b| col[b].abs().partial_cmp(&col[a].abs()).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
            let top_features = if degenerate {
                Vec::new()
            } else {
                order
                    .into_iter()
                    .take(top_k)
                    .map(|i| FeatureWeight {
                        feature: feature_names.map_or(FeatureId::Index(i), |n| FeatureId::Name(n[i].clone())),
                        weight: col[i].as_f64(),
                    })
                    .collect()
            };
            FactorEntry {
                factor: j,
                beta: model.beta.row(j).iter().map(|v| v.as_f64()).collect(),
                w: col.iter().map(|v| v.as_f64()).collect(),
                top_features,
                degenerate,
            }
        })
        .collect();
    Ok(FactorReport { factors })
}

/// Standardizes each row to mean 0 and unit (population) variance. Rows
/// with zero variance are only centered.
pub fn normalize_rows<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let (rows, cols) = m.shape();
    let mut out = m.clone();
    if cols == 0 {
        return out;
    }
    let nf = T::from_usize_lossy(cols);
    for i in 0..rows {
        let mean = (0..cols).map(|j| m[(i, j)]).sum::<T>() / nf;
        let var = (0..cols).map(|j| (m[(i, j)] - mean).powi(2)).sum::<T>() / nf;
        let sd = var.sqrt();
        let inv = if sd > T::zero() { T::one() / sd } else { T::one() };
        if sd == T::zero() {
            log::warn!("row {i} is constant; centered only");
        }
        for j in 0..cols {
            out[(i, j)] = (m[(i, j)] - mean) * inv;
        }
    }
    out
}
