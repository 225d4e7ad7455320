//! Gaussian-process regression with an ARD RBF kernel over normalized
//! feature-parameter points.
//!
//! Binary outcomes are regressed directly on {0, 1} with a Gaussian
//! likelihood; the prior mean is the empirical success rate so far-from-data
//! predictions revert to an honest base rate. Hyperparameters maximize the
//! log marginal likelihood via a seeded multi-start Adam search in log space.
//! Everything is exact dense linear algebra — the intended regime is a few
//! hundred training points.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{normalize_unchecked, DomainBounds, FeatureParameterPoint, TrialRecord, DIMS};
use crate::error::{Error, Result};

pub const LENGTHSCALE_RANGE: (f64, f64) = (1e-3, 1e3);
pub const SIGNAL_VARIANCE_RANGE: (f64, f64) = (1e-4, 1e2);
pub const NOISE_FLOOR: f64 = 1e-6;
pub const NOISE_CEILING: f64 = 1.0;
pub const MAX_JITTER: f64 = 1e-2;

/// Kernel hyperparameters: one lengthscale per dimension (in normalized
/// units), a signal variance and an observation-noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperparamsRepr", into = "HyperparamsRepr")]
pub struct GpHyperparams {
    lengthscales: [f64; DIMS],
    signal_variance: f64,
    noise_variance: f64,
}

#[derive(Serialize, Deserialize)]
struct HyperparamsRepr {
    lengthscales: [f64; DIMS],
    signal_variance: f64,
    noise_variance: f64,
}

impl TryFrom<HyperparamsRepr> for GpHyperparams {
    type Error = Error;
    fn try_from(r: HyperparamsRepr) -> Result<Self> {
        GpHyperparams::new(r.lengthscales, r.signal_variance, r.noise_variance)
    }
}

impl From<GpHyperparams> for HyperparamsRepr {
    fn from(h: GpHyperparams) -> Self {
        HyperparamsRepr {
            lengthscales: h.lengthscales,
            signal_variance: h.signal_variance,
            noise_variance: h.noise_variance,
        }
    }
}

impl GpHyperparams {
    pub fn new(
        lengthscales: [f64; DIMS],
        signal_variance: f64,
        noise_variance: f64,
    ) -> Result<GpHyperparams> {
        for (d, l) in lengthscales.iter().enumerate() {
            if !l.is_finite() || *l < LENGTHSCALE_RANGE.0 || *l > LENGTHSCALE_RANGE.1 {
                return Err(Error::InvalidConfig(format!(
                    "lengthscale[{d}] = {l} outside [{}, {}]",
                    LENGTHSCALE_RANGE.0, LENGTHSCALE_RANGE.1
                )));
            }
        }
        if !signal_variance.is_finite() || signal_variance <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "signal_variance must be positive, got {signal_variance}"
            )));
        }
        if !noise_variance.is_finite() || noise_variance < NOISE_FLOOR {
            return Err(Error::InvalidConfig(format!(
                "noise_variance must be at least {NOISE_FLOOR}, got {noise_variance}"
            )));
        }
        Ok(GpHyperparams {
            lengthscales,
            signal_variance,
            noise_variance,
        })
    }

    pub fn lengthscales(&self) -> [f64; DIMS] {
        self.lengthscales
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }
}

/// ARD RBF covariance between two unit-cube points:
/// `signal_variance · exp(-½ Σ_d ((a_d - b_d)/ℓ_d)²)`.
pub fn rbf_kernel(a: &[f64; DIMS], b: &[f64; DIMS], h: &GpHyperparams) -> f64 {
    let mut q = 0.0;
    for d in 0..DIMS {
        let s = (a[d] - b[d]) / h.lengthscales[d];
        q += s * s;
    }
    h.signal_variance * (-0.5 * q).exp()
}

/// Controls the hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Seed for the multi-start initialization. The whole fit is a
    /// deterministic function of (dataset, bounds, config).
    pub seed: u64,
    /// Number of optimizer starts (start 0 is a fixed heuristic).
    pub starts: usize,
    /// Adam iteration cap per start.
    pub max_iters: usize,
    /// Adam step size in log-parameter space.
    pub learning_rate: f64,
    /// Skip the search and use these hyperparameters as-is.
    pub fixed_hyperparams: Option<GpHyperparams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            seed: 0,
            starts: 8,
            max_iters: 100,
            learning_rate: 0.1,
            fixed_hyperparams: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::InvalidConfig("starts must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn with_fixed(h: GpHyperparams) -> FitConfig {
        FitConfig {
            fixed_hyperparams: Some(h),
            ..FitConfig::default()
        }
    }
}

/// An immutable fitted GP posterior. Prediction needs no locking; clone-free
/// sharing across threads is safe.
#[derive(Debug, Clone)]
pub struct FittedModel {
    x_train: Vec<[f64; DIMS]>,
    y_train: Vec<f64>,
    targets: DVector<f64>,
    alpha: DVector<f64>,
    chol_lower: DMatrix<f64>,
    hyperparams: GpHyperparams,
    prior_mean: f64,
    bounds: DomainBounds,
    degenerate: bool,
    jitter: f64,
    opt_seed: u64,
}

// Index layout of the log-space search vector.
const P_SIGNAL: usize = DIMS;
const P_NOISE: usize = DIMS + 1;
const N_PARAMS: usize = DIMS + 2;

struct TrainingData {
    x: Vec<[f64; DIMS]>,
    targets: DVector<f64>,
    /// Per-dimension pairwise squared differences, dense n×n.
    sq_dists: Vec<DMatrix<f64>>,
}

impl TrainingData {
    fn new(x: Vec<[f64; DIMS]>, targets: DVector<f64>) -> TrainingData {
        let n = x.len();
        let sq_dists = (0..DIMS)
            .map(|d| {
                let mut m = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..=i {
                        let diff = x[i][d] - x[j][d];
                        let v = diff * diff;
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                m
            })
            .collect();
        TrainingData { x, targets, sq_dists }
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    /// Noise-free kernel matrix for the given log-parameters.
    fn kernel_matrix(&self, p: &[f64; N_PARAMS]) -> DMatrix<f64> {
        let n = self.n();
        let signal = p[P_SIGNAL].exp();
        let inv_2l2: Vec<f64> = (0..DIMS).map(|d| 0.5 / (2.0 * p[d]).exp()).collect();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut q = 0.0;
                for (sq, w) in self.sq_dists.iter().zip(&inv_2l2) {
                    q += sq[(i, j)] * w;
                }
                let v = signal * (-q).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Log marginal likelihood and its gradient w.r.t. the log-parameters.
    /// Returns `None` when the Gram matrix is not positive definite.
    fn lml_and_grad(&self, p: &[f64; N_PARAMS]) -> Option<(f64, [f64; N_PARAMS])> {
        let n = self.n();
        let noise = p[P_NOISE].exp();
        let k_rbf = self.kernel_matrix(p);
        let mut gram = k_rbf.clone();
        for i in 0..n {
            gram[(i, i)] += noise;
        }
        let chol = nalgebra::Cholesky::new(gram)?;
        let alpha = chol.solve(&self.targets);
        let log_det_half: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
        let lml = -0.5 * self.targets.dot(&alpha)
            - log_det_half
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

        let k_inv = chol.inverse();
        // f = α αᵀ - K⁻¹ ; every gradient is ½·tr(f · ∂K/∂θ).
        // Flat column-major slices keep this n² sweep out of the profile.
        let mut grad = [0.0; N_PARAMS];
        let mut trace_f = 0.0;
        for i in 0..n {
            trace_f += alpha[i] * alpha[i] - k_inv[(i, i)];
        }
        let kinv_s = k_inv.as_slice();
        let krbf_s = k_rbf.as_slice();
        let sqd_s: Vec<&[f64]> = self.sq_dists.iter().map(|m| m.as_slice()).collect();
        for j in 0..n {
            let aj = alpha[j];
            let base = j * n;
            for i in 0..n {
                let fk = (alpha[i] * aj - kinv_s[base + i]) * krbf_s[base + i];
                grad[P_SIGNAL] += fk;
                for d in 0..DIMS {
                    grad[d] += fk * sqd_s[d][base + i];
                }
            }
        }
        let inv_l2: [f64; DIMS] = std::array::from_fn(|d| (-2.0 * p[d]).exp());
        for d in 0..DIMS {
            grad[d] *= 0.5 * inv_l2[d];
        }
        grad[P_SIGNAL] *= 0.5;
        grad[P_NOISE] = 0.5 * noise * trace_f;
        Some((lml, grad))
    }
}

/// Weak simplicity drift on the ARD lengthscales: the search maximizes
/// `LML + ARD_DRIFT·Σ_d ln ℓ_d`. The marginal likelihood is nearly flat in a
/// lengthscale whose dimension carries no signal, so the drift resolves that
/// indifference toward the smoother (larger-lengthscale) model instead of
/// leaving it to the optimizer's start. Informative dimensions have
/// likelihood gradients orders of magnitude larger and barely move.
const ARD_DRIFT: f64 = 0.25;

/// Lengthscale ceiling used while searching. The validity range allows up to
/// 1e3; the drift would otherwise spend iterations crawling there for every
/// irrelevant dimension, and 1e2 is already indistinguishable from flat.
const SEARCH_MAX_LOG_LENGTHSCALE: f64 = 4.605170185988092; // ln(100)

fn clamp_params(p: &mut [f64; N_PARAMS]) {
    for v in p[..DIMS].iter_mut() {
        *v = v.clamp(LENGTHSCALE_RANGE.0.ln(), SEARCH_MAX_LOG_LENGTHSCALE);
    }
    p[P_SIGNAL] = p[P_SIGNAL].clamp(SIGNAL_VARIANCE_RANGE.0.ln(), SIGNAL_VARIANCE_RANGE.1.ln());
    p[P_NOISE] = p[P_NOISE].clamp(NOISE_FLOOR.ln(), NOISE_CEILING.ln());
}

fn penalized(lml: f64, p: &[f64; N_PARAMS]) -> f64 {
    lml + ARD_DRIFT * p[..DIMS].iter().sum::<f64>()
}

/// Adam ascent on the penalized log marginal likelihood from one start.
/// Returns the best parameters visited and their penalized objective.
fn optimize_start(
    data: &TrainingData,
    mut p: [f64; N_PARAMS],
    cfg: &FitConfig,
) -> Option<(f64, [f64; N_PARAMS])> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    const STEP_TOL: f64 = 1e-4;
    const STALL_WINDOW: usize = 15;
    const STALL_DELTA: f64 = 1e-3;

    clamp_params(&mut p);
    let mut m = [0.0; N_PARAMS];
    let mut v = [0.0; N_PARAMS];
    let mut best: Option<(f64, [f64; N_PARAMS])> = None;
    let mut last_improvement = 0usize;
    let mut escalations = 0;

    let mut iter = 0;
    while iter < cfg.max_iters {
        let Some((lml, mut grad)) = data.lml_and_grad(&p) else {
            // Not positive definite: push the noise up and retry.
            if escalations >= 8 || p[P_NOISE] >= NOISE_CEILING.ln() {
                return best;
            }
            p[P_NOISE] = (p[P_NOISE] + std::f64::consts::LN_10).min(NOISE_CEILING.ln());
            escalations += 1;
            continue;
        };
        let obj = penalized(lml, &p);
        if best.is_none_or(|(b, _)| obj > b + STALL_DELTA) {
            last_improvement = iter;
        }
        if best.is_none_or(|(b, _)| obj > b) {
            best = Some((obj, p));
        }
        if iter - last_improvement >= STALL_WINDOW {
            break;
        }
        iter += 1;
        for g in grad[..DIMS].iter_mut() {
            *g += ARD_DRIFT;
        }
        let t = iter as f64;
        let mut max_step = 0.0_f64;
        for i in 0..N_PARAMS {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - BETA1.powf(t));
            let v_hat = v[i] / (1.0 - BETA2.powf(t));
            let step = cfg.learning_rate * m_hat / (v_hat.sqrt() + EPS);
            p[i] += step;
            max_step = max_step.max(step.abs());
        }
        clamp_params(&mut p);
        if max_step < STEP_TOL {
            break;
        }
    }
    if let Some((obj, bp)) = best {
        // Score the final iterate too; Adam may end above the best recorded.
        if let Some((final_lml, _)) = data.lml_and_grad(&p) {
            let final_obj = penalized(final_lml, &p);
            if final_obj > obj {
                return Some((final_obj, p));
            }
        }
        return Some((obj, bp));
    }
    None
}

fn default_start(targets: &DVector<f64>) -> [f64; N_PARAMS] {
    let n = targets.len().max(1);
    let var = targets.dot(targets) / n as f64;
    let signal = var.max(0.02);
    let mut p = [0.5_f64.ln(); N_PARAMS];
    p[P_SIGNAL] = signal.ln();
    p[P_NOISE] = (0.05 * signal).max(1e-4).ln();
    p
}

fn random_start(rng: &mut ChaCha8Rng) -> [f64; N_PARAMS] {
    let mut p = [0.0; N_PARAMS];
    for v in p[..DIMS].iter_mut() {
        *v = rng.random_range(0.05_f64.ln()..2.5_f64.ln());
    }
    p[P_SIGNAL] = rng.random_range(0.05_f64.ln()..1.0_f64.ln());
    p[P_NOISE] = rng.random_range(1e-4_f64.ln()..0.2_f64.ln());
    p
}

impl FittedModel {
    /// Fits hyperparameters (unless fixed), factorizes the Gram matrix and
    /// caches everything prediction needs.
    ///
    /// A dataset whose labels are all identical still fits but is flagged
    /// [`FittedModel::is_degenerate`]; its posterior mean is the constant
    /// label everywhere near the data.
    pub fn fit(
        records: &[TrialRecord],
        bounds: &DomainBounds,
        cfg: &FitConfig,
    ) -> Result<FittedModel> {
        cfg.validate()?;
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for r in records {
            bounds.check(&r.x)?;
        }
        if let Some(h) = &cfg.fixed_hyperparams {
            // Re-run the constructor so loaded/handmade values are validated.
            GpHyperparams::new(h.lengthscales, h.signal_variance, h.noise_variance)?;
        }

        let y_train: Vec<f64> = records.iter().map(|r| r.y as f64).collect();
        let prior_mean = y_train.iter().sum::<f64>() / y_train.len() as f64;
        let degenerate = y_train.windows(2).all(|w| w[0] == w[1]);

        let x_train: Vec<[f64; DIMS]> = records
            .iter()
            .map(|r| normalize_unchecked(&r.x.to_array(), bounds))
            .collect();
        let targets = DVector::from_iterator(
            y_train.len(),
            y_train.iter().map(|y| y - prior_mean),
        );
        let data = TrainingData::new(x_train, targets);

        let hyperparams = match (&cfg.fixed_hyperparams, degenerate) {
            (Some(h), _) => *h,
            (None, true) => params_to_hyper(&default_start(&data.targets))?,
            (None, false) => {
                let mut best: Option<(f64, [f64; N_PARAMS])> = None;
                for start in 0..cfg.starts {
                    let p0 = if start == 0 {
                        default_start(&data.targets)
                    } else {
                        let mut rng = ChaCha8Rng::seed_from_u64(
                            cfg.seed.wrapping_add(start as u64).wrapping_mul(0x9E3779B97F4A7C15),
                        );
                        random_start(&mut rng)
                    };
                    if let Some((obj, p)) = optimize_start(&data, p0, cfg) {
                        // Strict comparison keeps the lowest start index on ties.
                        if best.is_none_or(|(b, _)| obj > b) {
                            best = Some((obj, p));
                        }
                    }
                }
                let (_, p) = best.ok_or(Error::Factorization {
                    max_jitter: MAX_JITTER,
                })?;
                params_to_hyper(&p)?
            }
        };

        let (chol_lower, jitter) = factorize_with_jitter(&data, &hyperparams)?;
        let alpha = solve_with_lower(&chol_lower, &data.targets);

        Ok(FittedModel {
            x_train: data.x,
            y_train,
            targets: data.targets,
            alpha,
            chol_lower,
            hyperparams,
            prior_mean,
            bounds: bounds.clone(),
            degenerate,
            jitter,
            opt_seed: cfg.seed,
        })
    }

    pub fn bounds(&self) -> &DomainBounds {
        &self.bounds
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyperparams
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn training_len(&self) -> usize {
        self.x_train.len()
    }

    /// Jitter added on top of the fitted noise to make factorization succeed
    /// (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn opt_seed(&self) -> u64 {
        self.opt_seed
    }

    /// Posterior mean and variance at an in-bounds point. The variance is the
    /// latent (noise-free) one: it tends to `signal_variance` far from data.
    pub fn predict(&self, x: &FeatureParameterPoint) -> Result<(f64, f64)> {
        self.bounds.check(x)?;
        let u = normalize_unchecked(&x.to_array(), &self.bounds);
        self.predict_unit(&u)
    }

    pub(crate) fn predict_unit(&self, u: &[f64; DIMS]) -> Result<(f64, f64)> {
        let k_star = self.k_star(u);
        let mu = self.prior_mean + k_star.dot(&self.alpha);
        let v = forward_substitute(&self.chol_lower, &k_star);
        let raw_var = self.hyperparams.signal_variance - v.dot(&v);
        let var = if raw_var >= 0.0 {
            raw_var
        } else if raw_var > -1e-9 {
            0.0
        } else {
            return Err(Error::NegativeVariance { value: raw_var });
        };
        Ok((mu, var))
    }

    /// Posterior mean only — the hot path for region and solver queries.
    pub(crate) fn mean_unit(&self, u: &[f64; DIMS]) -> f64 {
        let ls = self.hyperparams.lengthscales;
        let mut acc = 0.0;
        for (xi, a) in self.x_train.iter().zip(self.alpha.iter()) {
            let mut q = 0.0;
            for d in 0..DIMS {
                let s = (u[d] - xi[d]) / ls[d];
                q += s * s;
            }
            acc += a * self.hyperparams.signal_variance * (-0.5 * q).exp();
        }
        self.prior_mean + acc
    }

    fn k_star(&self, u: &[f64; DIMS]) -> DVector<f64> {
        DVector::from_iterator(
            self.x_train.len(),
            self.x_train
                .iter()
                .map(|xi| rbf_kernel(u, xi, &self.hyperparams)),
        )
    }

    /// Exact Gaussian log marginal likelihood of the training targets under
    /// the cached factorization. Deterministic for a fixed model.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.x_train.len();
        let log_det_half: f64 = (0..n).map(|i| self.chol_lower[(i, i)].ln()).sum();
        -0.5 * self.targets.dot(&self.alpha)
            - log_det_half
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Evaluates the posterior mean over the Cartesian product of per-axis
    /// unit coordinates, visiting cells in row-major (last axis fastest)
    /// order.
    ///
    /// The RBF kernel separates per dimension, so the scan keeps per-level
    /// partial products and does one O(n) dot per cell instead of an O(n·D)
    /// re-evaluation with fresh `exp` calls. Visit order and arithmetic are
    /// deterministic.
    pub(crate) fn grid_mean_scan(
        &self,
        axes: &[Vec<f64>; DIMS],
        visit: &mut dyn FnMut(&[usize; DIMS], f64),
    ) {
        let n = self.x_train.len();
        if n == 0 || axes.iter().any(|a| a.is_empty()) {
            return;
        }
        let ls = self.hyperparams.lengthscales;
        // tables[d][c*n + i] = exp(-½((axes[d][c] - x_i[d])/ℓ_d)²)
        let tables: Vec<Vec<f64>> = (0..DIMS)
            .map(|d| {
                let mut t = Vec::with_capacity(axes[d].len() * n);
                for &c in &axes[d] {
                    for xi in &self.x_train {
                        let s = (c - xi[d]) / ls[d];
                        t.push((-0.5 * s * s).exp());
                    }
                }
                t
            })
            .collect();

        let weights: Vec<f64> = self
            .alpha
            .iter()
            .map(|a| a * self.hyperparams.signal_variance)
            .collect();

        let mut levels: Vec<Vec<f64>> = vec![vec![0.0; n]; DIMS - 1];
        let sizes: [usize; DIMS] = std::array::from_fn(|d| axes[d].len());
        let mut idx = [0usize; DIMS];

        let rebuild = |levels: &mut Vec<Vec<f64>>, idx: &[usize; DIMS], from: usize| {
            for d in from..DIMS - 1 {
                let row = &tables[d][idx[d] * n..(idx[d] + 1) * n];
                if d == 0 {
                    let (first, _) = levels.split_at_mut(1);
                    for i in 0..n {
                        first[0][i] = weights[i] * row[i];
                    }
                } else {
                    let (prev, cur) = levels.split_at_mut(d);
                    for i in 0..n {
                        cur[0][i] = prev[d - 1][i] * row[i];
                    }
                }
            }
        };
        rebuild(&mut levels, &idx, 0);

        loop {
            let last_row = &tables[DIMS - 1][idx[DIMS - 1] * n..(idx[DIMS - 1] + 1) * n];
            let top = &levels[DIMS - 2];
            let mut acc = 0.0;
            for i in 0..n {
                acc += top[i] * last_row[i];
            }
            visit(&idx, self.prior_mean + acc);

            // Odometer increment, last axis fastest.
            let mut d = DIMS;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < sizes[d] {
                    break;
                }
                idx[d] = 0;
            }
            if d < DIMS - 1 {
                rebuild(&mut levels, &idx, d);
            }
        }
    }
}

fn params_to_hyper(p: &[f64; N_PARAMS]) -> Result<GpHyperparams> {
    let mut ls = [0.0; DIMS];
    for d in 0..DIMS {
        ls[d] = p[d].exp();
    }
    GpHyperparams::new(ls, p[P_SIGNAL].exp(), p[P_NOISE].exp())
}

/// Factorizes `K + (noise + jitter)·I`, escalating the jitter ×10 from the
/// noise floor up to [`MAX_JITTER`] when the matrix is not positive definite.
fn factorize_with_jitter(
    data: &TrainingData,
    h: &GpHyperparams,
) -> Result<(DMatrix<f64>, f64)> {
    let mut p = [0.0; N_PARAMS];
    for (v, l) in p.iter_mut().zip(h.lengthscales) {
        *v = l.ln();
    }
    p[P_SIGNAL] = h.signal_variance.ln();
    p[P_NOISE] = h.noise_variance.ln();
    let k_rbf = data.kernel_matrix(&p);
    let n = data.n();

    let mut jitter = 0.0;
    loop {
        let mut gram = k_rbf.clone();
        for i in 0..n {
            gram[(i, i)] += h.noise_variance + jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(gram) {
            return Ok((chol.unpack(), jitter));
        }
        jitter = if jitter == 0.0 { NOISE_FLOOR } else { jitter * 10.0 };
        if jitter > MAX_JITTER {
            return Err(Error::Factorization {
                max_jitter: MAX_JITTER,
            });
        }
    }
}

fn forward_substitute(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut v = DVector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * v[j];
        }
        v[i] = s / l[(i, i)];
    }
    v
}

fn solve_with_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut v = forward_substitute(l, b);
    // back substitution with Lᵀ
    for i in (0..n).rev() {
        let mut s = v[i];
        for j in i + 1..n {
            s -= l[(j, i)] * v[j];
        }
        v[i] = s / l[(i, i)];
    }
    v
}

/// On-disk model representation: a single JSON document. The factorization
/// is recomputed on load and verified against stored checksums of the Gram
/// diagonal and the Cholesky factor diagonal.
pub const MODEL_SCHEMA: &str = "attainment-model-v1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    bounds: DomainBounds,
    hyperparams: GpHyperparams,
    prior_mean: f64,
    opt_seed: u64,
    degenerate: bool,
    jitter: f64,
    x_train: Vec<[f64; DIMS]>,
    y_train: Vec<f64>,
    gram_diag_sum: f64,
    chol_log_diag_sum: f64,
}

impl FittedModel {
    fn checksums(&self) -> (f64, f64) {
        let n = self.x_train.len();
        let diag =
            self.hyperparams.signal_variance + self.hyperparams.noise_variance + self.jitter;
        let gram_diag_sum = diag * n as f64;
        let chol_log_diag_sum: f64 = (0..n).map(|i| self.chol_lower[(i, i)].ln()).sum();
        (gram_diag_sum, chol_log_diag_sum)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_json(&mut w)?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, w: &mut impl std::io::Write) -> Result<()> {
        let (gram_diag_sum, chol_log_diag_sum) = self.checksums();
        let file = ModelFile {
            schema: MODEL_SCHEMA.to_string(),
            bounds: self.bounds.clone(),
            hyperparams: self.hyperparams,
            prior_mean: self.prior_mean,
            opt_seed: self.opt_seed,
            degenerate: self.degenerate,
            jitter: self.jitter,
            x_train: self.x_train.clone(),
            y_train: self.y_train.clone(),
            gram_diag_sum,
            chol_log_diag_sum,
        };
        serde_json::to_writer(&mut *w, &file)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<FittedModel> {
        let file = std::fs::File::open(path)?;
        Self::read_json(std::io::BufReader::new(file))
    }

    pub fn read_json(r: impl std::io::Read) -> Result<FittedModel> {
        let file: ModelFile = serde_json::from_reader(r).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if file.schema != MODEL_SCHEMA {
            return Err(Error::SchemaMismatch {
                expected: MODEL_SCHEMA.to_string(),
                found: file.schema,
            });
        }
        if file.x_train.len() != file.y_train.len() {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "training inputs ({}) and targets ({}) differ in length",
                    file.x_train.len(),
                    file.y_train.len()
                ),
            });
        }
        let targets = DVector::from_iterator(
            file.y_train.len(),
            file.y_train.iter().map(|y| y - file.prior_mean),
        );
        let data = TrainingData::new(file.x_train, targets);

        // Rebuild the factorization with the stored jitter, exactly.
        let mut p = [0.0; N_PARAMS];
        for (v, l) in p.iter_mut().zip(file.hyperparams.lengthscales) {
            *v = l.ln();
        }
        p[P_SIGNAL] = file.hyperparams.signal_variance.ln();
        p[P_NOISE] = file.hyperparams.noise_variance.ln();
        let mut gram = data.kernel_matrix(&p);
        for i in 0..data.n() {
            gram[(i, i)] += file.hyperparams.noise_variance + file.jitter;
        }
        let chol = nalgebra::Cholesky::new(gram).ok_or(Error::Factorization {
            max_jitter: file.jitter,
        })?;
        let chol_lower = chol.unpack();
        let alpha = solve_with_lower(&chol_lower, &data.targets);

        let model = FittedModel {
            x_train: data.x,
            y_train: file.y_train,
            targets: data.targets,
            alpha,
            chol_lower,
            hyperparams: file.hyperparams,
            prior_mean: file.prior_mean,
            bounds: file.bounds,
            degenerate: file.degenerate,
            jitter: file.jitter,
            opt_seed: file.opt_seed,
        };

        let (gram_diag_sum, chol_log_diag_sum) = model.checksums();
        verify_checksum("gram diagonal", file.gram_diag_sum, gram_diag_sum)?;
        verify_checksum(
            "cholesky diagonal",
            file.chol_log_diag_sum,
            chol_log_diag_sum,
        )?;
        Ok(model)
    }
}

fn verify_checksum(what: &'static str, stored: f64, recomputed: f64) -> Result<()> {
    let scale = stored.abs().max(recomputed.abs()).max(1.0);
    if (stored - recomputed).abs() <= 1e-9 * scale {
        Ok(())
    } else {
        Err(Error::ChecksumMismatch {
            what,
            stored,
            recomputed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TrialSource;

    fn hyper(l: f64, signal: f64, noise: f64) -> GpHyperparams {
        GpHyperparams::new([l; DIMS], signal, noise).unwrap()
    }

    fn record(a: [f64; DIMS], y: u8) -> TrialRecord {
        let x = FeatureParameterPoint::from_array(a).unwrap();
        TrialRecord::new(x, y, 0, TrialSource::Simulated).unwrap()
    }

    #[test]
    fn kernel_at_zero_distance_is_signal_variance() {
        let h = hyper(0.3, 1.0, 1e-6);
        let a = [0.2, 0.4, 0.6, 0.8, 1.0];
        assert_eq!(rbf_kernel(&a, &a, &h), 1.0);
    }

    #[test]
    fn kernel_at_one_lengthscale_is_exp_minus_half() {
        let mut ls = [1.0; DIMS];
        ls[0] = 0.25;
        let h = GpHyperparams::new(ls, 1.0, 1e-6).unwrap();
        let a = [0.0, 0.5, 0.5, 0.5, 0.5];
        let b = [0.25, 0.5, 0.5, 0.5, 0.5];
        let v = rbf_kernel(&a, &b, &h);
        assert!((v - (-0.5_f64).exp()).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn kernel_is_symmetric() {
        let h = hyper(0.7, 0.9, 1e-6);
        let a = [0.1, 0.9, 0.3, 0.2, 0.8];
        let b = [0.6, 0.1, 0.7, 0.9, 0.0];
        assert!((rbf_kernel(&a, &b, &h) - rbf_kernel(&b, &a, &h)).abs() < 1e-15);
    }

    #[test]
    fn hyperparams_validate_ranges() {
        assert!(GpHyperparams::new([1e-4; DIMS], 1.0, 1e-6).is_err());
        assert!(GpHyperparams::new([1.0; DIMS], 0.0, 1e-6).is_err());
        assert!(GpHyperparams::new([1.0; DIMS], 1.0, 1e-7).is_err());
    }

    fn corners() -> Vec<TrialRecord> {
        vec![
            record([0.0, 0.0, 0.0, 0.0, 0.0], 1),
            record([0.0, 30.0, 2.0, 0.0, 0.0], 1),
            record([1.0, 0.0, 0.0, 0.1, 0.5], 0),
            record([1.0, 30.0, 2.0, 0.1, 0.5], 0),
        ]
    }

    #[test]
    fn fit_four_corners_interpolates_labels() {
        let bounds = DomainBounds::default();
        let model = FittedModel::fit(&corners(), &bounds, &FitConfig::default()).unwrap();
        assert!(!model.is_degenerate());
        let noise = model.hyperparams().noise_variance();
        let tol = 3.0 * noise.sqrt();
        for r in corners() {
            let (mu, _) = model.predict(&r.x).unwrap();
            assert!(
                (mu - r.y as f64).abs() <= tol,
                "mu {mu} vs y {} (tol {tol})",
                r.y
            );
        }
    }

    #[test]
    fn constant_labels_set_degenerate_flag() {
        let bounds = DomainBounds::default();
        let records: Vec<TrialRecord> = (0..6)
            .map(|i| record([0.0, i as f64 * 5.0, 1.0, 0.0, 0.0], 1))
            .collect();
        let model = FittedModel::fit(&records, &bounds, &FitConfig::default()).unwrap();
        assert!(model.is_degenerate());
        for r in &records {
            let (mu, _) = model.predict(&r.x).unwrap();
            assert!((mu - 1.0).abs() < 1e-9, "mu {mu}");
        }
    }

    #[test]
    fn predict_near_interpolation_at_tiny_noise() {
        let bounds = DomainBounds::default();
        let records = corners();
        let cfg = FitConfig::with_fixed(hyper(0.4, 1.0, 1e-6));
        let model = FittedModel::fit(&records, &bounds, &cfg).unwrap();
        let (mu, _) = model.predict(&records[0].x).unwrap();
        assert!((0.99..=1.01).contains(&mu), "mu {mu}");
    }

    #[test]
    fn predict_reverts_to_prior_far_from_data() {
        let bounds = DomainBounds::default();
        let records = vec![
            record([0.0, 0.0, 0.0, 0.0, 0.0], 1),
            record([0.0, 5.0, 0.1, 0.0, 0.0], 0),
        ];
        let cfg = FitConfig::with_fixed(hyper(0.05, 1.0, 1e-6));
        let model = FittedModel::fit(&records, &bounds, &cfg).unwrap();
        let far = FeatureParameterPoint::from_array([1.0, 30.0, 2.0, 0.1, 0.5]).unwrap();
        let (mu, var) = model.predict(&far).unwrap();
        assert!((mu - model.prior_mean()).abs() <= 0.01);
        assert!((var - 1.0).abs() <= 0.01);
    }

    #[test]
    fn predict_rejects_out_of_bounds() {
        let bounds = DomainBounds::default();
        let model = FittedModel::fit(&corners(), &bounds, &FitConfig::default()).unwrap();
        let narrow =
            DomainBounds::new([[0.0, 1.0], [0.0, 30.0], [0.0, 1.0], [0.0, 0.1], [0.0, 0.5]])
                .unwrap();
        let model_narrow = FittedModel {
            bounds: narrow,
            ..model
        };
        let x = FeatureParameterPoint::from_array([0.0, 0.0, 1.5, 0.0, 0.0]).unwrap();
        assert!(model_narrow.predict(&x).is_err());
    }

    #[test]
    fn lml_of_single_point_at_prior_mean() {
        // One training point with target equal to the prior mean: the LML is
        // the log density of a centered 1-D Gaussian at its mean,
        // -½·ln(2π·(σ² + σn²)).
        let bounds = DomainBounds::default();
        // prior_mean = 0.5 needs two labels; use a single record instead with
        // fixed hyperparams and target forced by construction: y = 1 gives
        // prior_mean = 1, so the target is exactly zero.
        let records = vec![record([0.5, 15.0, 1.0, 0.05, 0.25], 1)];
        let cfg = FitConfig::with_fixed(hyper(1.0, 1.0, 1e-6));
        let model = FittedModel::fit(&records, &bounds, &cfg).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI * (1.0 + 1e-6)).ln();
        let got = model.log_marginal_likelihood();
        assert!((got - expected).abs() < 1e-9, "got {got}, want {expected}");
        assert!((expected - -0.9189).abs() < 1e-4);
    }

    #[test]
    fn lml_is_finite_for_valid_hyperparams() {
        let bounds = DomainBounds::default();
        for (l, s, n) in [(0.1, 0.5, 1e-6), (2.0, 1.0, 0.3), (0.01, 10.0, 1e-2)] {
            let cfg = FitConfig::with_fixed(hyper(l, s, n));
            let model = FittedModel::fit(&corners(), &bounds, &cfg).unwrap();
            assert!(model.log_marginal_likelihood().is_finite());
        }
    }

    #[test]
    fn fit_is_deterministic_for_fixed_seed() {
        let bounds = DomainBounds::default();
        let records: Vec<TrialRecord> = (0..24)
            .map(|i| {
                record(
                    [
                        (i % 2) as f64,
                        (i % 7) as f64 * 4.0,
                        (i % 5) as f64 * 0.4,
                        (i % 3) as f64 * 0.03,
                        (i % 4) as f64 * 0.12,
                    ],
                    ((i * 7) % 3 == 0) as u8,
                )
            })
            .collect();
        let cfg = FitConfig {
            seed: 42,
            max_iters: 40,
            ..FitConfig::default()
        };
        let m1 = FittedModel::fit(&records, &bounds, &cfg).unwrap();
        let m2 = FittedModel::fit(&records, &bounds, &cfg).unwrap();
        assert_eq!(
            m1.hyperparams().lengthscales().map(f64::to_bits),
            m2.hyperparams().lengthscales().map(f64::to_bits)
        );
        let x = FeatureParameterPoint::from_array([0.3, 12.0, 0.9, 0.01, 0.2]).unwrap();
        let (mu1, var1) = m1.predict(&x).unwrap();
        let (mu2, var2) = m2.predict(&x).unwrap();
        assert_eq!(mu1.to_bits(), mu2.to_bits());
        assert_eq!(var1.to_bits(), var2.to_bits());
    }

    #[test]
    fn grid_scan_matches_mean_unit() {
        let bounds = DomainBounds::default();
        let cfg = FitConfig {
            max_iters: 30,
            ..FitConfig::default()
        };
        let model = FittedModel::fit(&corners(), &bounds, &cfg).unwrap();
        let axes: [Vec<f64>; DIMS] = [
            vec![0.0, 0.5, 1.0],
            vec![0.25, 0.75],
            vec![0.1],
            vec![0.0, 1.0],
            vec![0.6],
        ];
        let mut count = 0;
        model.grid_mean_scan(&axes, &mut |idx, mean| {
            let u = [
                axes[0][idx[0]],
                axes[1][idx[1]],
                axes[2][idx[2]],
                axes[3][idx[3]],
                axes[4][idx[4]],
            ];
            let direct = model.mean_unit(&u);
            assert!(
                (mean - direct).abs() < 1e-12,
                "scan {mean} vs direct {direct}"
            );
            count += 1;
        });
        assert_eq!(count, ((3 * 2) * 2));
    }

    #[test]
    fn fitted_model_is_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<FittedModel>();
        assert_send_sync::<GpHyperparams>();
    }

    #[test]
    fn save_load_roundtrip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let bounds = DomainBounds::default();
        let cfg = FitConfig {
            max_iters: 30,
            ..FitConfig::default()
        };
        let model = FittedModel::fit(&corners(), &bounds, &cfg).unwrap();
        model.save(&path).unwrap();
        let loaded = FittedModel::load(&path).unwrap();
        let x = FeatureParameterPoint::from_array([0.7, 21.0, 1.7, 0.07, 0.33]).unwrap();
        let (mu1, var1) = model.predict(&x).unwrap();
        let (mu2, var2) = loaded.predict(&x).unwrap();
        assert_eq!(mu1.to_bits(), mu2.to_bits());
        assert_eq!(var1.to_bits(), var2.to_bits());
    }

    #[test]
    fn tampered_model_file_fails_checksum() {
        let bounds = DomainBounds::default();
        let cfg = FitConfig {
            max_iters: 30,
            ..FitConfig::default()
        };
        let model = FittedModel::fit(&corners(), &bounds, &cfg).unwrap();
        let mut buf = Vec::new();
        model.write_json(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // Corrupt a training label: the Cholesky checksum won't notice (same
        // Gram matrix), so flip a lengthscale instead via the stored sum.
        let tampered = text.replacen("\"chol_log_diag_sum\":", "\"chol_log_diag_sum\":1.0e9,\"ignored\":", 1);
        let err = FittedModel::read_json(tampered.as_bytes());
        assert!(err.is_err());
    }
}
