//! Synthetic data with known ground truth and conditioning diagnostics.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmfError};
use crate::linalg::{self, io, Matrix};
use crate::lpgd::step_size_window;
use crate::model::{Dataset, LiftedState, ScoreFunction, SmfVariant, SolverConfig};
use crate::objective::{self, mnl_constants, predictive_probs, MnlConstants};
use crate::scalar::Scalar;

/// Parameters of the generative model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerativeSpec {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub r: usize,
    pub kappa: usize,
    pub sigma: f64,
    pub sigma_aux: f64,
    pub variant: SmfVariant,
    pub seed: u64,
    /// Entry scale of the right Gaussian factor of θ*; also the scale of γ*.
    /// Defaults to `1/√r`, giving θ* entries of unit variance.
    #[serde(default)]
    pub scale: Option<f64>,
    /// Standard deviation of the auxiliary signal `C*`; defaults to `scale`.
    #[serde(default)]
    pub aux_scale: Option<f64>,
}

impl GenerativeSpec {
    pub fn new(p: usize, q: usize, n: usize, r: usize, kappa: usize, variant: SmfVariant, seed: u64) -> Self {
        Self {
            p,
            q,
            n,
            r,
            kappa,
            sigma: 0.1,
            sigma_aux: 0.1,
            variant,
            seed,
            scale: None,
            aux_scale: None,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale.unwrap_or(1.0 / (self.r.max(1) as f64).sqrt())
    }

    pub fn aux_scale(&self) -> f64 {
        self.aux_scale.unwrap_or_else(|| self.scale())
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(SmfError::config("p", "must be at least 1"));
        }
        if self.n == 0 {
            return Err(SmfError::config("n", "must be at least 1"));
        }
        if self.kappa == 0 {
            return Err(SmfError::config("kappa", "must be at least 1"));
        }
        if self.r == 0 || self.r > self.p.min(self.n) {
            return Err(SmfError::config("r", format!("must lie in 1..=min(p, n) = {}", self.p.min(self.n))));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SmfError::config("sigma", "must be nonnegative"));
        }
        if !(self.sigma_aux >= 0.0 && self.sigma_aux.is_finite()) {
            return Err(SmfError::config("sigma_aux", "must be nonnegative"));
        }
        if !(self.scale() > 0.0 && self.scale().is_finite()) {
            return Err(SmfError::config("scale", "must be positive"));
        }
        if !(self.aux_scale() >= 0.0 && self.aux_scale().is_finite()) {
            return Err(SmfError::config("aux_scale", "must be nonnegative"));
        }
        Ok(())
    }
}

/// True parameters of a generated dataset.
#[derive(Clone, Debug)]
pub struct GroundTruth<T: Scalar> {
    pub a_star: Matrix<T>,
    pub b_star: Matrix<T>,
    pub c_star: Matrix<T>,
    pub gamma_star: Matrix<T>,
    pub z_star: LiftedState<T>,
}

/// Manifest written next to the ground-truth CSVs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthManifest {
    pub variant: SmfVariant,
    pub kappa: usize,
    pub theta: String,
    pub gamma: String,
    pub a_star: String,
    pub b_star: String,
    pub c_star: String,
}

impl<T: Scalar> GroundTruth<T> {
    /// Writes CSVs plus `truth.json`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        io::write_csv(&dir.join("theta_star.csv"), &self.z_star.theta)?;
        io::write_csv(&dir.join("gamma_star.csv"), &self.gamma_star)?;
        io::write_csv(&dir.join("a_star.csv"), &self.a_star)?;
        io::write_csv(&dir.join("b_star.csv"), &self.b_star)?;
        io::write_csv(&dir.join("c_star.csv"), &self.c_star)?;
        let manifest = TruthManifest {
            variant: self.z_star.variant,
            kappa: self.z_star.kappa(),
            theta: "theta_star.csv".into(),
            gamma: "gamma_star.csv".into(),
            a_star: "a_star.csv".into(),
            b_star: "b_star.csv".into(),
            c_star: "c_star.csv".into(),
        };
        std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    /// Reads the lifted reference `Z*` named by a `truth.json` manifest.
    pub fn load_reference(manifest_path: &Path) -> Result<LiftedState<T>> {
        let m: TruthManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let theta = io::read_csv(&dir.join(&m.theta))?;
        let gpath = dir.join(&m.gamma);
        let gamma = if std::fs::metadata(&gpath).map(|md| md.len() > 0).unwrap_or(false) {
            io::read_csv(&gpath)?
        } else {
            Matrix::zeros(0, m.kappa)
        };
        Ok(LiftedState {
            theta,
            gamma,
            variant: m.variant,
        })
    }
}

fn gaussian<T: Scalar, R: Rng>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> Matrix<T> {
    Matrix::random_normal(rows, cols, T::lit(sd), rng)
}

/// Draws the true parameters: θ* is the product of a standard Gaussian
/// `rows x r` factor and an `r x cols` Gaussian factor of entry scale
/// `spec.scale()`; γ* has the same entry scale; `C*` has `spec.aux_scale()`.
pub fn draw_truth<T: Scalar, R: Rng>(spec: &GenerativeSpec, rng: &mut R) -> Result<GroundTruth<T>> {
    spec.validate()?;
    let (p, q, n, r, k) = (spec.p, spec.q, spec.n, spec.r, spec.kappa);
    let (rows, cols) = match spec.variant {
        SmfVariant::FeatureBased => (k + p, n),
        SmfVariant::FilterBased => (p, k + n),
    };
    let left: Matrix<T> = gaussian(rows, r, 1.0, rng);
    let right: Matrix<T> = gaussian(r, cols, spec.scale(), rng);
    let theta = left.matmul(&right);
    let gamma_star: Matrix<T> = gaussian(q, k, spec.scale(), rng);
    let c_star: Matrix<T> = gaussian(q, n, spec.aux_scale(), rng);
    let z_star = LiftedState {
        theta,
        gamma: gamma_star.clone(),
        variant: spec.variant,
    };
    Ok(GroundTruth {
        a_star: z_star.a_block(),
        b_star: z_star.b_block(),
        c_star,
        gamma_star,
        z_star,
    })
}

/// Samples observations from fixed true parameters:
/// `x_i = B*[:, i] + σε_i`, `x'_i = C*[:, i] + σ'ε'_i`, `y_i ~ Multinomial(g(a_i))`
/// with `a_i` computed from the observed `x_i, x'_i`.
pub fn simulate<T: Scalar, R: Rng>(spec: &GenerativeSpec, truth: &GroundTruth<T>, rng: &mut R) -> Result<Dataset<T>> {
    let (p, q, n) = (spec.p, spec.q, spec.n);
    let mut x = truth.b_star.clone();
    if spec.sigma > 0.0 {
        x.axpy(T::one(), &gaussian(p, n, spec.sigma, rng));
    }
    let mut x_aux = truth.c_star.clone();
    if spec.sigma_aux > 0.0 && q > 0 {
        x_aux.axpy(T::one(), &gaussian(q, n, spec.sigma_aux, rng));
    }
    let placeholder = Dataset::new(x, x_aux, vec![0; n], spec.kappa)?;
    let act = objective::activation_matrix(&truth.z_star, &placeholder)?;
    let labels = (0..n)
        .map(|s| sample_categorical(&predictive_probs(act.col(s), &ScoreFunction::Exp), rng))
        .collect();
    Dataset::new(placeholder.x_data, placeholder.x_aux, labels, spec.kappa)
}

fn sample_categorical<T: Scalar, R: Rng>(probs: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws truth and data from the generative model; deterministic in `spec.seed`.
pub fn generate<T: Scalar>(spec: &GenerativeSpec) -> Result<(Dataset<T>, GroundTruth<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = draw_truth(spec, &mut rng)?;
    let data = simulate(spec, &truth, &mut rng)?;
    Ok((data, truth))
}

/// Labeled grayscale images in `[0, 1]`, one vectorized image per column.
#[derive(Clone, Debug)]
pub struct ImageSource<T: Scalar> {
    pub images: Matrix<T>,
    pub digits: Vec<usize>,
}

impl<T: Scalar> ImageSource<T> {
    /// Reads an MNIST-style CSV: each row is a digit label followed by the
    /// pixel values. Pixels above 1 are taken to be on a 0–255 scale.
    pub fn from_csv(path: &Path, p: usize) -> Result<Self> {
        let raw: Matrix<T> = io::read_csv(path)?;
        if raw.cols() != p + 1 {
            return Err(SmfError::shape(format!(
                "image source has {} columns, expected a label plus {p} pixels",
                raw.cols()
            )));
        }
        let scale = if raw.cols_range(1, p + 1).max_abs() > T::one() { T::lit(1.0 / 255.0) } else { T::one() };
        let images = Matrix::from_fn(p, raw.rows(), |i, j| raw[(j, i + 1)] * scale);
        let digits = (0..raw.rows()).map(|j| raw[(j, 0)].as_f64().round().max(0.0) as usize).collect();
        Ok(Self { images, digits })
    }

    /// Deterministic stand-in for handwritten digits on a `side x side` grid:
    /// each digit has a fixed stroke of Gaussian blobs, and each of the
    /// `per_digit` images jitters the blob centers and intensities.
    pub fn surrogate(side: usize, per_digit: usize, seed: u64) -> Self {
        let p = side * side;
        let mut images = Matrix::<T>::zeros(p, 10 * per_digit);
        let mut digits = Vec::with_capacity(10 * per_digit);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD161_7000);
        for d in 0..10 {
            let stroke = digit_stroke(d, side);
            for _ in 0..per_digit {
                let col = digits.len();
                let (dx, dy): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                for &(cx, cy) in &stroke {
                    let amp: f64 = rng.random_range(0.7..1.0);
                    let (cx, cy) = (cx + dx, cy + dy);
                    for yy in 0..side {
                        for xx in 0..side {
                            let r2 = (xx as f64 - cx).powi(2) + (yy as f64 - cy).powi(2);
                            let v = amp * (-r2 / (2.0 * 1.3 * 1.3)).exp();
                            let idx = yy * side + xx;
                            let cur = images[(idx, col)];
                            images[(idx, col)] = (cur + T::lit(v)).min(T::one());
                        }
                    }
                }
                digits.push(d);
            }
        }
        Self { images, digits }
    }

    fn average_of(&self, digit: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<T>> {
        let mut pool: Vec<usize> = (0..self.digits.len()).filter(|&j| self.digits[j] == digit).collect();
        if pool.is_empty() {
            return Err(SmfError::Insufficient(format!("no images of digit {digit} in the source")));
        }
        // Partial Fisher–Yates for a seeded selection.
        let take = count.min(pool.len());
        for i in 0..take {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut avg = vec![T::zero(); self.images.rows()];
        for &j in &pool[..take] {
            for (a, &v) in avg.iter_mut().zip(self.images.col(j)) {
                *a += v;
            }
        }
        let inv = T::one() / T::from_usize_lossy(take);
        avg.iter_mut().for_each(|a| *a *= inv);
        Ok(avg)
    }
}

/// Blob centers tracing a rough glyph for each digit on a `side` grid.
fn digit_stroke(d: usize, side: usize) -> Vec<(f64, f64)> {
    let s = side as f64 / 28.0;
    let pts: &[(f64, f64)] = match d {
        0 => &[(14., 6.), (19., 9.), (20., 14.), (19., 19.), (14., 22.), (9., 19.), (8., 14.), (9., 9.)],
        1 => &[(14., 5.), (14., 9.), (14., 13.), (14., 17.), (14., 21.), (12., 7.)],
        2 => &[(9., 8.), (14., 6.), (19., 9.), (17., 14.), (13., 18.), (9., 22.), (15., 22.), (20., 22.)],
        3 => &[(9., 7.), (15., 6.), (19., 10.), (14., 14.), (19., 18.), (15., 22.), (9., 21.)],
        4 => &[(10., 6.), (9., 11.), (9., 15.), (14., 15.), (19., 15.), (17., 8.), (17., 19.), (17., 23.)],
        5 => &[(19., 6.), (13., 6.), (9., 8.), (9., 13.), (15., 13.), (19., 17.), (16., 22.), (9., 21.)],
        6 => &[(17., 6.), (12., 9.), (9., 14.), (9., 19.), (13., 22.), (18., 19.), (16., 15.), (11., 15.)],
        7 => &[(8., 6.), (14., 6.), (20., 6.), (18., 11.), (16., 15.), (14., 19.), (13., 23.)],
        8 => &[(14., 6.), (18., 9.), (14., 13.), (10., 9.), (9., 18.), (14., 22.), (19., 18.), (14., 14.)],
        _ => &[(14., 6.), (18., 9.), (14., 13.), (10., 9.), (18., 14.), (17., 19.), (15., 23.)],
    };
    pts.iter().map(|&(x, y)| (x * s, y * s)).collect()
}

/// Digits averaged into the columns of `W_true,X` and `W_true,Y`; the first
/// pairs are (2, 5) and (4, 7), further columns cycle through the rest.
const FEATURE_DIGITS: [usize; 5] = [2, 5, 0, 3, 8];
const LABEL_DIGITS: [usize; 5] = [4, 7, 1, 9, 6];
const IMAGES_PER_FACTOR: usize = 10;

/// Truth behind the semi-synthetic data.
#[derive(Clone, Debug)]
pub struct SemiSyntheticTruth<T: Scalar> {
    pub w_x: Matrix<T>,
    pub w_y: Matrix<T>,
    pub h_true: Matrix<T>,
    pub beta_y: Vec<T>,
}

/// Semi-synthetic image data: `X = W_X H + σε` with `H ~ U[0,1]`, and binary
/// labels `y_i ~ Bernoulli(sigmoid(β_Yᵀ W_Yᵀ x_i))`, `β_Y = [1, −1, 1, …]`.
/// Each column of `W_X`, `W_Y` is the average of 10 seeded images of one digit.
/// Without a `source`, the built-in surrogate digits are used.
pub fn semi_synthetic_mnist_like<T: Scalar>(
    seed: u64,
    p: usize,
    n: usize,
    r: usize,
    sigma: f64,
    source: Option<&ImageSource<T>>,
) -> Result<(Dataset<T>, SemiSyntheticTruth<T>)> {
    if r == 0 || r > FEATURE_DIGITS.len() {
        return Err(SmfError::config("r", format!("must lie in 1..={}", FEATURE_DIGITS.len())));
    }
    if n == 0 {
        return Err(SmfError::config("n", "must be at least 1"));
    }
    let owned;
    let src = match source {
        Some(s) => {
            if s.images.rows() != p {
                return Err(SmfError::shape(format!("source images have {} pixels, expected {p}", s.images.rows())));
            }
            s
        }
        None => {
            let side = (p as f64).sqrt().round() as usize;
            if side * side != p {
                return Err(SmfError::config("p", "the built-in surrogate needs a square image size"));
            }
            owned = ImageSource::surrogate(side, 2 * IMAGES_PER_FACTOR, 7);
            &owned
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w_x = Matrix::zeros(p, r);
    let mut w_y = Matrix::zeros(p, r);
    for j in 0..r {
        w_x.col_mut(j).copy_from_slice(&src.average_of(FEATURE_DIGITS[j], IMAGES_PER_FACTOR, &mut rng)?);
        w_y.col_mut(j).copy_from_slice(&src.average_of(LABEL_DIGITS[j], IMAGES_PER_FACTOR, &mut rng)?);
    }
    let h_true = Matrix::random_uniform(r, n, T::zero(), T::one(), &mut rng);
    let mut x = w_x.matmul(&h_true);
    if sigma > 0.0 {
        x.axpy(T::one(), &Matrix::random_normal(p, n, T::lit(sigma), &mut rng));
    }
    let beta_y: Vec<T> = (0..r).map(|j| if j % 2 == 0 { T::one() } else { -T::one() }).collect();
    let filt = w_y.mul_vec(&beta_y);
    let labels = (0..n)
        .map(|s| {
            let a = linalg::dot(&filt, x.col(s)).as_f64();
            let prob = 1.0 / (1.0 + (-a).exp());
            usize::from(rng.random::<f64>() < prob)
        })
        .collect();
    let data = Dataset::without_aux(x, labels, 1)?;
    Ok((data, SemiSyntheticTruth { w_x, w_y, h_true, beta_y }))
}

/// Conditioning quantities of the lifted problem.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub delta_minus: f64,
    pub delta_plus: f64,
    pub constants: MnlConstants,
    pub mu: f64,
    pub l: f64,
    pub ok: bool,
    pub rho: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
}

/// `(μ, L)` from the covariance extremes and link constants.
///
/// SMF-W: `μ = min(2ξ, 2λ + nδ⁻α⁻)`, `L = max(2ξ, 2λ + nδ⁺α⁺)`.
/// SMF-H: `μ = min(2ξ, 2λ)`, `L = max(2ξ, 2λ + α⁺)`.
pub fn condition_numbers(variant: SmfVariant, xi: f64, lambda: f64, n: usize, delta_minus: f64, delta_plus: f64, c: &MnlConstants) -> (f64, f64) {
    let nf = n as f64;
    match variant {
        SmfVariant::FilterBased => (
            (2.0 * xi).min(2.0 * lambda + nf * delta_minus * c.alpha_minus),
            (2.0 * xi).max(2.0 * lambda + nf * delta_plus * c.alpha_plus),
        ),
        SmfVariant::FeatureBased => ((2.0 * xi).min(2.0 * lambda), (2.0 * xi).max(2.0 * lambda + c.alpha_plus)),
    }
}

/// Extreme eigenvalues of `n⁻¹ΦΦᵀ` with `Φ = [x_data; x_aux]`.
pub fn covariance_extremes<T: Scalar>(data: &Dataset<T>) -> Result<(f64, f64)> {
    let phi = data.phi();
    let (d, n) = phi.shape();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let gram = if d <= n { phi.matmul_tr(&phi) } else { phi.tr_matmul(&phi) };
    let (ev, _) = linalg::sym_eigen(&gram.scale(inv_n))?;
    let hi = ev.last().map_or(0.0, |v| v.as_f64());
    let lo = if d <= n { ev[0].as_f64().max(0.0) } else { 0.0 };
    Ok((lo, hi))
}

/// Evaluates `μ`, `L`, the step-size window and `ρ = 2(1 − τμ)` for the
/// data and configuration, with link constants at activation bound `m_bound`.
pub fn condition_diagnostics<T: Scalar>(data: &Dataset<T>, cfg: &SolverConfig, m_bound: f64) -> Result<ConditionReport> {
    let (dm, dp) = covariance_extremes(data)?;
    let c = mnl_constants(m_bound, data.kappa);
    let (mu, l) = condition_numbers(cfg.variant, cfg.xi, cfg.lambda, data.n(), dm, dp, &c);
    let (tau_lo, tau_hi, window_ok) = step_size_window(mu, l);
    let degenerate = cfg.variant == SmfVariant::FilterBased && dm <= 0.0 && cfg.lambda == 0.0;
    if degenerate {
        log::warn!("covariance of [x_data; x_aux] is singular; strong convexity constant is 0");
    }
    Ok(ConditionReport {
        delta_minus: dm,
        delta_plus: dp,
        constants: c,
        mu,
        l,
        ok: mu > 0.0 && window_ok && !degenerate,
        rho: 2.0 * (1.0 - cfg.tau * mu),
        tau_lo,
        tau_hi,
    })
}

/// Checks the λ = 0 SMF-W condition stated through `μ* = δ⁻α⁻`, `L* = δ⁺α⁺`:
/// `L*/μ* < 3` and `L*/6 < ξ/n < 3μ*/2`.
pub fn filter_window_without_ridge(xi: f64, n: usize, mu_star: f64, l_star: f64) -> bool {
    let ratio = xi / n as f64;
    mu_star > 0.0 && l_star / mu_star < 3.0 && l_star / 6.0 < ratio && ratio < 1.5 * mu_star
}

/// Largest activation norm realized by the ground truth on the data.
pub fn truth_activation_bound<T: Scalar>(truth: &GroundTruth<T>, data: &Dataset<T>) -> Result<f64> {
    Ok(objective::max_activation_norm(&truth.z_star, data)?.as_f64())
}

/// Samples `N(0, 1)` as `T`.
pub fn standard_normal<T: Scalar, R: Rng>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}
