use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use smf::datagen::{self, ConditionReport, GenerativeSpec, GroundTruth, ImageSource};
use smf::linalg::{self, io};
use smf::lpgd::{self, write_trace_jsonl, IterTrace};
use smf::model::{default_init, lift};
use smf::objective::{global_smoothness, max_activation_norm};
use smf::predict::{self, CvOptions, FeaturePredictor};
use smf::{Dataset, FactoredModel, LiftedState, Optimizer, Result, SmfError, SmfVariant, SolverConfig};

use crate::output::StagedDir;

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn load_data(dir: &Path, normalize_rows: bool) -> Result<Dataset<f64>> {
    let mut data = Dataset::load_dir(dir)?;
    if normalize_rows {
        data.x_data = predict::normalize_rows(&data.x_data);
    }
    Ok(data)
}

pub fn synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: GenerativeSpec = read_json(config)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (data, truth) = datagen::generate::<f64>(&spec)?;
    let dir = StagedDir::new(out)?;
    data.save_dir(dir.path())?;
    truth.save_dir(dir.path())?;
    dir.write_json("spec.json", &spec)?;
    dir.commit()
}

/// Conditioning report together with the inputs that produced it.
#[derive(Serialize)]
struct Diagnostics {
    m_bound: f64,
    tau: f64,
    global_smoothness: f64,
    #[serde(flatten)]
    report: ConditionReport,
}

fn diagnostics(data: &Dataset<f64>, cfg: &SolverConfig, reference: Option<&LiftedState<f64>>, m_bound: Option<f64>) -> Result<Diagnostics> {
    let m = match (m_bound, reference) {
        (Some(m), _) => m,
        (None, Some(r)) => max_activation_norm(r, data)?,
        (None, None) => {
            let init = default_init(data.p(), data.n(), data.q(), data.kappa, cfg.rank, cfg.seed);
            max_activation_norm(&lift(&init, cfg.variant)?, data)?
        }
    };
    Ok(Diagnostics {
        m_bound: m,
        tau: cfg.tau,
        global_smoothness: global_smoothness(data, cfg.variant, cfg.xi, cfg.lambda),
        report: datagen::condition_diagnostics(data, cfg, m)?,
    })
}

#[derive(Serialize)]
struct TrainSummary {
    variant: SmfVariant,
    optimizer: Optimizer,
    rank: usize,
    iterations: usize,
    final_objective: f64,
    final_grad_map_norm: f64,
    final_dist_to_ref: Option<f64>,
    converged: bool,
    rho_estimate: Option<f64>,
    elapsed_seconds: f64,
    diagnostics: Diagnostics,
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub config: &'a Path,
    pub out: &'a Path,
    pub optimizer: Optimizer,
    pub reference: Option<&'a Path>,
    pub seed: Option<u64>,
    pub normalize_rows: bool,
}

pub fn train(args: &TrainArgs<'_>) -> Result<()> {
    let data = load_data(args.data, args.normalize_rows)?;
    let mut cfg: SolverConfig = read_json(args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate_for(&data)?;
    let reference = args.reference.map(GroundTruth::<f64>::load_reference).transpose()?;
    let diag = diagnostics(&data, &cfg, reference.as_ref(), None)?;
    if !diag.report.ok {
        log::warn!("conditioning check failed: L/mu = {:.3}", diag.report.l / diag.report.mu);
    }
    let res = lpgd::train(args.optimizer, &data, &cfg, None, reference.as_ref())?;
    let last = res.trace.last().cloned().expect("trace has iteration 0");
    let dir = StagedDir::new(args.out)?;
    res.final_model.save_dir(dir.path())?;
    write_trace_jsonl(&dir.join("trace.jsonl"), &res.trace)?;
    dir.write_json(
        "summary.json",
        &TrainSummary {
            variant: cfg.variant,
            optimizer: args.optimizer,
            rank: cfg.rank,
            iterations: last.iter,
            final_objective: last.objective,
            final_grad_map_norm: last.grad_map_norm,
            final_dist_to_ref: last.dist_to_ref,
            converged: res.converged,
            rho_estimate: res.rho_estimate,
            elapsed_seconds: last.elapsed_seconds,
            diagnostics: diag,
        },
    )?;
    dir.write_json("config.json", &cfg)?;
    dir.commit()
}

#[derive(Serialize)]
struct Metrics {
    n: usize,
    accuracy: f64,
}

pub fn predict(
    data: &Path,
    model: &Path,
    config: &Path,
    out: &Path,
    full: bool,
    feature_names: Option<&Path>,
    normalize_rows: bool,
) -> Result<()> {
    let data = load_data(data, normalize_rows)?;
    let cfg: SolverConfig = read_json(config)?;
    let model = FactoredModel::<f64>::load_dir(model)?;
    let how = if full { FeaturePredictor::Full } else { FeaturePredictor::Heuristic };
    let preds = predict::predict_dataset(&model, &data, cfg.variant, &cfg.score, cfg.xi, how)?;
    let names = feature_names
        .map(|p| -> Result<Vec<String>> {
            Ok(std::fs::read_to_string(p)?.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
        })
        .transpose()?;
    let report = predict::supervised_factor_report(&model, names.as_deref(), predict::DEFAULT_TOP_K)?;
    let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();

    let dir = StagedDir::new(out)?;
    let mut text = String::from("label");
    for c in 0..=data.kappa {
        text.push_str(&format!(",p{c}"));
    }
    text.push('\n');
    for p in &preds {
        text.push_str(&p.label.to_string());
        for v in &p.probs {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    std::fs::write(dir.join("predictions.csv"), text)?;
    dir.write_json(
        "metrics.json",
        &Metrics {
            n: data.n(),
            accuracy: predict::accuracy(&labels, &data.labels)?,
        },
    )?;
    dir.write_json("factors.json", &report)?;
    dir.commit()
}

pub fn diagnose(
    data: &Path,
    config: &Path,
    out: &Path,
    reference: Option<&Path>,
    m_bound: Option<f64>,
    normalize_rows: bool,
) -> Result<()> {
    let data = load_data(data, normalize_rows)?;
    let cfg: SolverConfig = read_json(config)?;
    cfg.validate_for(&data)?;
    let reference = reference.map(GroundTruth::<f64>::load_reference).transpose()?;
    let diag = diagnostics(&data, &cfg, reference.as_ref(), m_bound)?;
    let sv = linalg::svd_thin(&data.x_data)?.singular_values;
    let dir = StagedDir::new(out)?;
    dir.write_json("diagnostics.json", &diag)?;
    io::write_csv(&dir.join("singular_values.csv"), &smf::Matrix::col_vector(&sv))?;
    dir.commit()
}

fn default_grid() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}

fn default_folds() -> usize {
    5
}

fn yes() -> bool {
    true
}

/// Cross-validation grid: every `(xi, lambda)` pair applied to `base`.
#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CvProtocol {
    pub base: SolverConfig,
    #[serde(default = "default_grid")]
    pub xi: Vec<f64>,
    #[serde(default = "default_grid")]
    pub lambda: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Replace `base.tau` per grid point with the reciprocal of a global
    /// smoothness constant.
    #[serde(default = "yes")]
    pub auto_tau: bool,
    #[serde(default)]
    pub full_prediction: bool,
}

pub fn cv(data: &Path, config: &Path, out: &Path, optimizer: Optimizer, seed: Option<u64>, normalize_rows: bool) -> Result<()> {
    let data = load_data(data, normalize_rows)?;
    let proto: CvProtocol = read_json(config)?;
    let seed = seed.unwrap_or(proto.base.seed);
    let mut grid = Vec::new();
    for &xi in &proto.xi {
        for &lambda in &proto.lambda {
            let mut c = proto.base.clone();
            c.xi = xi;
            c.lambda = lambda;
            c.seed = seed;
            if proto.auto_tau {
                c.tau = 1.0 / global_smoothness(&data, c.variant, xi, lambda);
            }
            grid.push(c);
        }
    }
    let opts = CvOptions {
        optimizer,
        predictor: if proto.full_prediction { FeaturePredictor::Full } else { FeaturePredictor::Heuristic },
    };
    let table = predict::cross_validate(&data, &grid, proto.folds, seed, opts)?;
    let dir = StagedDir::new(out)?;
    table.write_csv(&dir.join("cv.csv"))?;
    let mut text = String::from("config,xi,lambda,mean,std\n");
    for s in &table.summary {
        text.push_str(&format!("{},{},{},{},{}\n", s.config, s.xi, s.lambda, s.mean, s.std));
    }
    std::fs::write(dir.join("cv_summary.csv"), text)?;
    dir.write_json("grid.json", &grid)?;
    dir.commit()
}

/// Loss-curve comparison on the semi-synthetic image data. Omitted fields
/// take the defaults of [`BenchmarkProtocol::default`].
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkProtocol {
    pub xi: Vec<f64>,
    pub repeats: usize,
    pub optimizers: Vec<Optimizer>,
    pub variant: SmfVariant,
    pub lambda: f64,
    pub tau: f64,
    pub rank: usize,
    pub max_iters: usize,
    pub p: usize,
    pub n: usize,
    pub sigma: f64,
    /// MNIST-style CSV (label then pixels); the built-in surrogate otherwise.
    pub images: Option<PathBuf>,
    pub seed: u64,
}

impl Default for BenchmarkProtocol {
    fn default() -> Self {
        Self {
            xi: vec![0.1, 1.0, 5.0, 10.0, 20.0],
            repeats: 10,
            optimizers: vec![Optimizer::Lpgd, Optimizer::Bcd],
            variant: SmfVariant::FeatureBased,
            lambda: 2.0,
            tau: 0.01,
            rank: 2,
            max_iters: 300,
            p: 784,
            n: 500,
            sigma: 0.5,
            images: None,
            seed: 0,
        }
    }
}

struct Run {
    xi_index: usize,
    optimizer: Optimizer,
    repeat: usize,
    outcome: Result<Vec<IterTrace>>,
}

/// Objective at iterations `1..=len`, carrying the last value forward past
/// an early stop.
fn padded_losses(trace: &[IterTrace], len: usize) -> Vec<f64> {
    (1..=len)
        .map(|i| trace.iter().take_while(|t| t.iter <= i).last().map_or(f64::NAN, |t| t.objective))
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

pub fn benchmark(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut proto: BenchmarkProtocol = match config {
        Some(p) => read_json(p)?,
        None => BenchmarkProtocol::default(),
    };
    if let Some(s) = seed {
        proto.seed = s;
    }
    if proto.xi.is_empty() || proto.optimizers.is_empty() || proto.repeats == 0 || proto.max_iters == 0 {
        return Err(SmfError::InvalidConfig {
            field: "protocol",
            msg: "xi, optimizers, repeats and max_iters must be nonempty".into(),
        });
    }
    let source = proto.images.as_deref().map(|p| ImageSource::<f64>::from_csv(p, proto.p)).transpose()?;
    let datasets: Vec<Dataset<f64>> = (0..proto.repeats)
        .map(|r| datagen::semi_synthetic_mnist_like(proto.seed + r as u64, proto.p, proto.n, proto.rank, proto.sigma, source.as_ref()).map(|d| d.0))
        .collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for xi_index in 0..proto.xi.len() {
        for &optimizer in &proto.optimizers {
            for repeat in 0..proto.repeats {
                jobs.push((xi_index, optimizer, repeat));
            }
        }
    }
    let runs: Vec<Run> = jobs
        .into_par_iter()
        .map(|(xi_index, optimizer, repeat)| {
            let mut cfg = SolverConfig::new(proto.variant, proto.xi[xi_index], proto.lambda, proto.tau, proto.rank, proto.max_iters);
            cfg.seed = proto.seed + repeat as u64;
            let outcome = cfg.validate().and_then(|_| lpgd::train(optimizer, &datasets[repeat], &cfg, None, None)).map(|r| r.trace);
            Run {
                xi_index,
                optimizer,
                repeat,
                outcome,
            }
        })
        .collect();

    let dir = StagedDir::new(out)?;
    std::fs::create_dir_all(dir.join("traces"))?;
    let mut runs_csv = String::from("xi,optimizer,repeat,status,iterations,final_objective,decay_rate\n");
    let mut agg = String::from("xi,optimizer,iter,mean_loss,std_loss\n");
    let mut rates = String::from("xi,optimizer,mean_rate,std_rate,runs\n");
    for (xi_index, &xi) in proto.xi.iter().enumerate() {
        for &opt in &proto.optimizers {
            let mut curves = Vec::new();
            let mut fitted = Vec::new();
            for run in runs.iter().filter(|r| r.xi_index == xi_index && r.optimizer == opt) {
                match &run.outcome {
                    Ok(trace) => {
                        write_trace_jsonl(&dir.join(&format!("traces/xi{xi}_{opt}_r{:02}.jsonl", run.repeat)), trace)?;
                        let objectives: Vec<f64> = trace.iter().map(|t| t.objective).collect();
                        let rate = lpgd::loss_decay_rate(&objectives).ok();
                        if let Some(r) = rate {
                            fitted.push(r);
                        }
                        let last = trace.last().expect("nonempty");
                        runs_csv.push_str(&format!(
                            "{xi},{opt},{},ok,{},{},{}\n",
                            run.repeat,
                            last.iter,
                            last.objective,
                            rate.map_or_else(String::new, |r| r.to_string())
                        ));
                        curves.push(padded_losses(trace, proto.max_iters));
                    }
                    Err(e) => {
                        log::warn!("xi={xi} {opt} repeat {}: {e}", run.repeat);
                        runs_csv.push_str(&format!("{xi},{opt},{},failed,,,\n", run.repeat));
                    }
                }
            }
            for i in 0..proto.max_iters {
                let vals: Vec<f64> = curves.iter().map(|c| c[i]).collect();
                let (m, s) = if vals.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&vals) };
                agg.push_str(&format!("{xi},{opt},{},{m},{s}\n", i + 1));
            }
            let (m, s) = if fitted.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&fitted) };
            rates.push_str(&format!("{xi},{opt},{m},{s},{}\n", fitted.len()));
        }
    }
    std::fs::write(dir.join("runs.csv"), runs_csv)?;
    std::fs::write(dir.join("aggregate.csv"), agg)?;
    std::fs::write(dir.join("rates.csv"), rates)?;
    dir.write_json("protocol.json", &proto)?;
    dir.commit()
}
