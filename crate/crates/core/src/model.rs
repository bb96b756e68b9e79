//! Datasets, factored and lifted parameters, constraint sets and solver
//! configuration, plus the lift/unlift maps.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmfError};
use crate::linalg::{self, io, Matrix};
use crate::scalar::Scalar;

/// Labeled signals: `x_data` is `p x n`, `x_aux` is `q x n` (`q` may be 0),
/// labels take values in `0..=kappa`.
#[derive(Clone, Debug)]
pub struct Dataset<T: Scalar> {
    pub x_data: Matrix<T>,
    pub x_aux: Matrix<T>,
    pub labels: Vec<usize>,
    pub kappa: usize,
}

/// Shape summary written next to the CSV files of a dataset directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub kappa: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x_data: Matrix<T>, x_aux: Matrix<T>, labels: Vec<usize>, kappa: usize) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(SmfError::Insufficient("dataset has no samples".into()));
        }
        if kappa == 0 {
            return Err(SmfError::config("kappa", "must be at least 1"));
        }
        if x_data.cols() != n {
            return Err(SmfError::shape(format!("x_data has {} columns, {n} labels", x_data.cols())));
        }
        if x_aux.rows() > 0 && x_aux.cols() != n {
            return Err(SmfError::shape(format!("x_aux has {} columns, {n} labels", x_aux.cols())));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y > kappa) {
            return Err(SmfError::config("labels", format!("label {y} at sample {i} exceeds kappa={kappa}")));
        }
        x_data.ensure_finite("x_data")?;
        x_aux.ensure_finite("x_aux")?;
        let x_aux = if x_aux.rows() == 0 { Matrix::zeros(0, n) } else { x_aux };
        Ok(Self {
            x_data,
            x_aux,
            labels,
            kappa,
        })
    }

    /// Dataset without auxiliary features.
    pub fn without_aux(x_data: Matrix<T>, labels: Vec<usize>, kappa: usize) -> Result<Self> {
        let n = labels.len();
        Self::new(x_data, Matrix::zeros(0, n), labels, kappa)
    }

    pub fn p(&self) -> usize {
        self.x_data.rows()
    }

    pub fn q(&self) -> usize {
        self.x_aux.rows()
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            p: self.p(),
            q: self.q(),
            n: self.n(),
            kappa: self.kappa,
        }
    }

    /// Samples at the given column indices, in order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x_data: self.x_data.select_cols(idx),
            x_aux: self.x_aux.select_cols(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            kappa: self.kappa,
        }
    }

    /// Stacked features `Φ = [x_data; x_aux]`, `(p+q) x n`.
    pub fn phi(&self) -> Matrix<T> {
        self.x_data.vstack(&self.x_aux)
    }

    /// Writes `x_data.csv`, `x_aux.csv` (when `q > 0`), `labels.csv` and
    /// `dataset.json` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        io::write_csv(&dir.join("x_data.csv"), &self.x_data)?;
        if self.q() > 0 {
            io::write_csv(&dir.join("x_aux.csv"), &self.x_aux)?;
        }
        io::write_labels(&dir.join("labels.csv"), &self.labels)?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(dir.join("dataset.json"), manifest + "\n")?;
        Ok(())
    }

    /// Reads a directory written by [`Dataset::save_dir`]. `dataset.json` is
    /// optional; without it `kappa` is taken as the largest label (at least 1).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let x_data = io::read_csv(&dir.join("x_data.csv"))?;
        let labels = io::read_labels(&dir.join("labels.csv"))?;
        let aux_path = dir.join("x_aux.csv");
        let x_aux = if aux_path.exists() {
            io::read_csv(&aux_path)?
        } else {
            Matrix::zeros(0, labels.len())
        };
        let manifest_path = dir.join("dataset.json");
        let kappa = if manifest_path.exists() {
            let m: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
            if m.p != x_data.rows() || m.n != labels.len() || m.q != x_aux.rows() {
                return Err(SmfError::shape(format!(
                    "dataset.json declares p={} q={} n={}, files hold p={} q={} n={}",
                    m.p,
                    m.q,
                    m.n,
                    x_data.rows(),
                    x_aux.rows(),
                    labels.len()
                )));
            }
            m.kappa
        } else {
            labels.iter().copied().max().unwrap_or(1).max(1)
        };
        Self::new(x_data, x_aux, labels, kappa)
    }
}

/// Which quantity the classifier reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SmfVariant {
    /// SMF-H: the classifier sees the codes `H`.
    #[serde(rename = "feature_based", alias = "smf_h", alias = "smf-h")]
    FeatureBased,
    /// SMF-W: the classifier sees the filtered signal `Wᵀx`.
    #[serde(rename = "filter_based", alias = "smf_w", alias = "smf-w")]
    FilterBased,
}

impl fmt::Display for SmfVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SmfVariant::FeatureBased => "smf-h",
            SmfVariant::FilterBased => "smf-w",
        })
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied score `h` with its first two derivatives.
#[derive(Clone)]
pub struct CustomScore {
    pub name: String,
    pub h: ScalarFn,
    pub dh: ScalarFn,
    pub d2h: ScalarFn,
}

/// Score function of the multinomial link.
#[derive(Clone)]
pub enum ScoreFunction {
    Exp,
    Custom(CustomScore),
}

impl ScoreFunction {
    /// Validates a custom score: `h(0) = 1` and `h' > 0` on a grid of `[-5, 5]`.
    pub fn custom(
        name: impl Into<String>,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dh: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2h: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if (h(0.0) - 1.0).abs() > 1e-12 {
            return Err(SmfError::config("score", format!("h(0) = {} but must be 1", h(0.0))));
        }
        for i in 0..=100 {
            let t = -5.0 + 0.1 * f64::from(i);
            if !(dh(t) > 0.0) {
                return Err(SmfError::config("score", format!("h'({t}) = {} is not positive", dh(t))));
            }
        }
        Ok(ScoreFunction::Custom(CustomScore {
            name: name.into(),
            h: Arc::new(h),
            dh: Arc::new(dh),
            d2h: Arc::new(d2h),
        }))
    }

    pub fn is_exp(&self) -> bool {
        matches!(self, ScoreFunction::Exp)
    }

    pub fn name(&self) -> &str {
        match self {
            ScoreFunction::Exp => "exp",
            ScoreFunction::Custom(c) => &c.name,
        }
    }

    /// `(h(t), h'(t), h''(t))`.
    pub fn eval<T: Scalar>(&self, t: T) -> (T, T, T) {
        match self {
            ScoreFunction::Exp => {
                let e = t.exp();
                (e, e, e)
            }
            ScoreFunction::Custom(c) => {
                let x = t.as_f64();
                (T::lit((c.h)(x)), T::lit((c.dh)(x)), T::lit((c.d2h)(x)))
            }
        }
    }
}

impl fmt::Debug for ScoreFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScoreFunction({})", self.name())
    }
}

impl Default for ScoreFunction {
    fn default() -> Self {
        ScoreFunction::Exp
    }
}

impl Serialize for ScoreFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ScoreFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        match name.as_str() {
            "exp" => Ok(ScoreFunction::Exp),
            other => Err(serde::de::Error::custom(format!(
                "unknown score `{other}`; only `exp` is available from configuration files"
            ))),
        }
    }
}

/// The four factors: `w` (`p x r`), `h` (`r x n`), `beta` (`r x κ`),
/// `gamma` (`q x κ`).
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredModel<T: Scalar> {
    pub w: Matrix<T>,
    pub h: Matrix<T>,
    pub beta: Matrix<T>,
    pub gamma: Matrix<T>,
}

impl<T: Scalar> FactoredModel<T> {
    pub fn rank(&self) -> usize {
        self.w.cols()
    }

    pub fn kappa(&self) -> usize {
        self.beta.cols()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let r = self.w.cols();
        if self.h.rows() != r || self.beta.rows() != r {
            return Err(SmfError::shape(format!(
                "factor ranks disagree: W has {r} columns, H {} rows, beta {} rows",
                self.h.rows(),
                self.beta.rows()
            )));
        }
        if self.gamma.cols() != self.beta.cols() {
            return Err(SmfError::shape(format!(
                "beta has {} columns but gamma has {}",
                self.beta.cols(),
                self.gamma.cols()
            )));
        }
        Ok(())
    }

    pub fn check_against(&self, data: &Dataset<T>) -> Result<()> {
        self.check_shapes()?;
        if self.w.rows() != data.p() || self.h.cols() != data.n() || self.gamma.rows() != data.q() {
            return Err(SmfError::shape(format!(
                "model is for p={} n={} q={}, data has p={} n={} q={}",
                self.w.rows(),
                self.h.cols(),
                self.gamma.rows(),
                data.p(),
                data.n(),
                data.q()
            )));
        }
        if self.kappa() != data.kappa {
            return Err(SmfError::shape(format!(
                "model has kappa={}, data kappa={}",
                self.kappa(),
                data.kappa
            )));
        }
        Ok(())
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        io::write_csv(&dir.join("w.csv"), &self.w)?;
        io::write_csv(&dir.join("h.csv"), &self.h)?;
        io::write_csv(&dir.join("beta.csv"), &self.beta)?;
        io::write_csv(&dir.join("gamma.csv"), &self.gamma)?;
        Ok(())
    }

    /// Reads `w.csv`, `h.csv`, `beta.csv` and the optional `gamma.csv`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let w = io::read_csv(&dir.join("w.csv"))?;
        let h = io::read_csv(&dir.join("h.csv"))?;
        let beta: Matrix<T> = io::read_csv(&dir.join("beta.csv"))?;
        let gpath = dir.join("gamma.csv");
        let gamma = if gpath.exists() && std::fs::metadata(&gpath)?.len() > 0 {
            io::read_csv(&gpath)?
        } else {
            Matrix::zeros(0, beta.cols())
        };
        let m = Self { w, h, beta, gamma };
        m.check_shapes()?;
        Ok(m)
    }
}

/// Lifted pair `Z = [θ, γ]`.
///
/// SMF-H: `θ = [A; B]` is `(κ+p) x n` with `A = βᵀH`, `B = WH`.
/// SMF-W: `θ = [A, B]` is `p x (κ+n)` with `A = Wβ`, `B = WH`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedState<T: Scalar> {
    pub theta: Matrix<T>,
    pub gamma: Matrix<T>,
    pub variant: SmfVariant,
}

impl<T: Scalar> LiftedState<T> {
    pub fn kappa(&self) -> usize {
        self.gamma.cols()
    }

    /// `(p, n)` implied by θ's shape.
    pub fn pn(&self) -> (usize, usize) {
        let k = self.kappa();
        match self.variant {
            SmfVariant::FeatureBased => (self.theta.rows() - k, self.theta.cols()),
            SmfVariant::FilterBased => (self.theta.rows(), self.theta.cols() - k),
        }
    }

    pub fn a_block(&self) -> Matrix<T> {
        let k = self.kappa();
        match self.variant {
            SmfVariant::FeatureBased => self.theta.rows_range(0, k),
            SmfVariant::FilterBased => self.theta.cols_range(0, k),
        }
    }

    pub fn b_block(&self) -> Matrix<T> {
        let k = self.kappa();
        match self.variant {
            SmfVariant::FeatureBased => self.theta.rows_range(k, self.theta.rows()),
            SmfVariant::FilterBased => self.theta.cols_range(k, self.theta.cols()),
        }
    }

    /// Assembles θ from its blocks.
    pub fn from_blocks(a: &Matrix<T>, b: &Matrix<T>, gamma: Matrix<T>, variant: SmfVariant) -> Self {
        let theta = match variant {
            SmfVariant::FeatureBased => a.vstack(b),
            SmfVariant::FilterBased => a.hstack(b),
        };
        Self { theta, gamma, variant }
    }

    pub fn check_against(&self, data: &Dataset<T>) -> Result<()> {
        let k = data.kappa;
        let (p, n, q) = (data.p(), data.n(), data.q());
        let want = match self.variant {
            SmfVariant::FeatureBased => (k + p, n),
            SmfVariant::FilterBased => (p, k + n),
        };
        if self.theta.shape() != want || self.gamma.shape() != (q, k) {
            return Err(SmfError::shape(format!(
                "lifted state theta {:?} gamma {:?}, expected theta {:?} gamma {:?}",
                self.theta.shape(),
                self.gamma.shape(),
                want,
                (q, k)
            )));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            theta: Matrix::zeros(self.theta.rows(), self.theta.cols()),
            gamma: Matrix::zeros(self.gamma.rows(), self.gamma.cols()),
            variant: self.variant,
        }
    }

    /// `sqrt(||θ||² + ||γ||²)`.
    pub fn norm(&self) -> T {
        (self.theta.frobenius_sq() + self.gamma.frobenius_sq()).sqrt()
    }

    /// Frobenius distance over the pair.
    pub fn distance(&self, other: &Self) -> T {
        (self.theta.sub(&other.theta).frobenius_sq() + self.gamma.sub(&other.gamma).frobenius_sq()).sqrt()
    }

    /// `self + alpha * other`, blockwise.
    pub fn axpy(&self, alpha: T, other: &Self) -> Self {
        let mut out = self.clone();
        out.theta.axpy(alpha, &other.theta);
        out.gamma.axpy(alpha, &other.gamma);
        out
    }

    pub fn inner(&self, other: &Self) -> T {
        self.theta.inner(&other.theta) + self.gamma.inner(&other.gamma)
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.gamma.is_finite()
    }
}

/// Convex set Θ constraining the lifted pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSet {
    #[default]
    Unconstrained,
    FrobeniusBall { radius_theta: f64, radius_gamma: f64 },
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<()> {
        if let ConstraintSet::FrobeniusBall {
            radius_theta,
            radius_gamma,
        } = *self
        {
            if !(radius_theta > 0.0 && radius_theta.is_finite()) {
                return Err(SmfError::config("radius_theta", "must be a positive finite number"));
            }
            if !(radius_gamma > 0.0 && radius_gamma.is_finite()) {
                return Err(SmfError::config("radius_gamma", "must be a positive finite number"));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_STOP_TOL: f64 = 1e-8;

fn default_stop_tol() -> f64 {
    DEFAULT_STOP_TOL
}

/// Hyperparameters of a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub variant: SmfVariant,
    #[serde(default)]
    pub score: ScoreFunction,
    pub xi: f64,
    pub lambda: f64,
    pub tau: f64,
    pub rank: usize,
    pub max_iters: usize,
    #[serde(default)]
    pub constraint: ConstraintSet,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(variant: SmfVariant, xi: f64, lambda: f64, tau: f64, rank: usize, max_iters: usize) -> Self {
        Self {
            variant,
            score: ScoreFunction::Exp,
            xi,
            lambda,
            tau,
            rank,
            max_iters,
            constraint: ConstraintSet::Unconstrained,
            stop_tol: DEFAULT_STOP_TOL,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(SmfError::config("xi", "must be a positive finite number"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SmfError::config("lambda", "must be a nonnegative finite number"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(SmfError::config("tau", "must be a positive finite number"));
        }
        if self.rank == 0 {
            return Err(SmfError::config("rank", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(SmfError::config("max_iters", "must be at least 1"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(SmfError::config("stop_tol", "must be nonnegative"));
        }
        self.constraint.validate()
    }

    /// Validates against the data dimensions as well.
    pub fn validate_for<T: Scalar>(&self, data: &Dataset<T>) -> Result<()> {
        self.validate()?;
        let kmax = data.p().min(data.n());
        if self.rank > kmax {
            return Err(SmfError::config(
                "rank",
                format!("{} exceeds min(p, n) = {kmax}", self.rank),
            ));
        }
        Ok(())
    }
}

/// `θ` from the factors, per variant.
pub fn lift<T: Scalar>(model: &FactoredModel<T>, variant: SmfVariant) -> Result<LiftedState<T>> {
    model.check_shapes()?;
    let b = model.w.matmul(&model.h);
    let a = match variant {
        SmfVariant::FeatureBased => model.beta.tr_matmul(&model.h),
        SmfVariant::FilterBased => model.w.matmul(&model.beta),
    };
    Ok(LiftedState::from_blocks(&a, &b, model.gamma.clone(), variant))
}

/// Factors from the top-`rank` SVD of θ.
///
/// SMF-H: `[βᵀ; W] = UΣ^{1/2}`, `H = Σ^{1/2}Vᵀ`.
/// SMF-W: `W = U`, `[β, H] = ΣVᵀ`.
/// Spectrum beyond `rank` is discarded with a warning.
pub fn unlift<T: Scalar>(state: &LiftedState<T>, rank: usize) -> Result<FactoredModel<T>> {
    if rank == 0 {
        return Err(SmfError::config("rank", "must be at least 1"));
    }
    let k = state.kappa();
    let (p, n) = state.pn();
    let kmax = state.theta.rows().min(state.theta.cols());
    let kept = rank.min(kmax);
    let svd = if kept < kmax {
        let s = linalg::truncated_svd(&state.theta, kept + 1)?;
        let s1 = s.singular_values[0];
        let tail = s.singular_values[kept];
        if s1 > T::zero() && tail > T::lit(1e-8) * s1 {
            log::warn!(
                "unlift: theta has rank above {rank} (sigma_{} / sigma_1 = {:e}); excess truncated",
                kept + 1,
                (tail / s1).as_f64()
            );
        }
        s.truncate(kept)
    } else {
        linalg::truncated_svd(&state.theta, kept)?
    };

    let mut w = Matrix::zeros(p, rank);
    let mut h = Matrix::zeros(rank, n);
    let mut beta = Matrix::zeros(rank, k);
    for j in 0..kept {
        let s = svd.singular_values[j];
        match state.variant {
            SmfVariant::FeatureBased => {
                let rs = s.sqrt();
                for c in 0..k {
                    beta[(j, c)] = svd.u[(c, j)] * rs;
                }
                for i in 0..p {
                    w[(i, j)] = svd.u[(k + i, j)] * rs;
                }
                for c in 0..n {
                    h[(j, c)] = svd.vt[(j, c)] * rs;
                }
            }
            SmfVariant::FilterBased => {
                for i in 0..p {
                    w[(i, j)] = svd.u[(i, j)];
                }
                for c in 0..k {
                    beta[(j, c)] = svd.vt[(j, c)] * s;
                }
                for c in 0..n {
                    h[(j, c)] = svd.vt[(j, k + c)] * s;
                }
            }
        }
    }
    Ok(FactoredModel {
        w,
        h,
        beta,
        gamma: state.gamma.clone(),
    })
}

/// Euclidean projection onto Θ, applied blockwise to θ and γ.
pub fn project_constraint<T: Scalar>(state: &LiftedState<T>, c: &ConstraintSet) -> LiftedState<T> {
    match *c {
        ConstraintSet::Unconstrained => state.clone(),
        ConstraintSet::FrobeniusBall {
            radius_theta,
            radius_gamma,
        } => LiftedState {
            theta: project_ball(&state.theta, T::lit(radius_theta)),
            gamma: project_ball(&state.gamma, T::lit(radius_gamma)),
            variant: state.variant,
        },
    }
}

fn project_ball<T: Scalar>(m: &Matrix<T>, radius: T) -> Matrix<T> {
    let nrm = m.frobenius();
    if nrm > radius {
        m.scale(radius / nrm)
    } else {
        m.clone()
    }
}

/// Lower and upper ends of the default initialization interval.
pub const INIT_RANGE: (f64, f64) = (0.0, 0.1);

/// Seeded i.i.d. uniform factors on [`INIT_RANGE`].
pub fn default_init<T: Scalar>(p: usize, n: usize, q: usize, kappa: usize, rank: usize, seed: u64) -> FactoredModel<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (T::lit(INIT_RANGE.0), T::lit(INIT_RANGE.1));
    let w = Matrix::random_uniform(p, rank, lo, hi, &mut rng);
    let h = Matrix::random_uniform(rank, n, lo, hi, &mut rng);
    let beta = Matrix::random_uniform(rank, kappa, lo, hi, &mut rng);
    let gamma = Matrix::random_uniform(q, kappa, lo, hi, &mut rng);
    FactoredModel { w, h, beta, gamma }
}
