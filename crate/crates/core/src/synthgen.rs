//! Gaussian-process data-generating process with controllable hidden
//! confounding.
//!
//! Potential outcomes Y(0), Y(1) are independent zero-mean GP draws over
//! (x, u) with a composite kernel
//!
//! ```text
//! k((x,u),(x',u')) = αₓ⟨x,x'⟩ + αᵤ·u·u' + exp(−‖x−x'‖²/(2lₓ²) − (u−u')²/(2lᵤ²))
//! ```
//!
//! and treatment is Bernoulli(σ(L(x,u))) with L another GP draw. The
//! outcome functions are shared by both datasets, so both have the same
//! ATE. The small dataset's treatment logit ignores u (αᵤ = 0, lᵤ = 10⁶)
//! and is therefore unconfounded given x; the large dataset's logit uses
//! the scenario's (αᵤ, lᵤ). Estimators only see x.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Role, Sample};
use crate::error::{Error, Result};
use crate::nuisance::sigmoid;

/// Point sets up to this size are factorized densely.
pub const DENSE_LIMIT: usize = 2000;
/// Upper bound on points per draw.
pub const MAX_POINTS: usize = 20_000;
const JITTER_SCALE: f64 = 1e-8;
const JITTER_ESCALATIONS: usize = 3;

/// Length scale that switches the u dependence off.
pub const UNCONFOUNDED_LENGTH: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub alpha_x: f64,
    pub alpha_u: f64,
    pub l_x: f64,
    pub l_u: f64,
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_x >= 0.0
            && self.alpha_u >= 0.0
            && self.l_x > 0.0
            && self.l_u > 0.0
            && [self.alpha_x, self.alpha_u, self.l_x, self.l_u]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid kernel configuration {self:?}")))
        }
    }

    /// Same kernel with the hidden variable switched off.
    pub fn without_u(self) -> Self {
        Self {
            alpha_u: 0.0,
            l_u: UNCONFOUNDED_LENGTH,
            ..self
        }
    }
}

/// Observed covariates x and hidden confounder u.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: Vec<f64>,
    pub u: f64,
}

impl Point {
    pub fn new(x: Vec<f64>, u: f64) -> Self {
        Self { x, u }
    }
}

pub fn kernel(p: &Point, q: &Point, cfg: &KernelConfig) -> f64 {
    let mut lin = 0.0;
    let mut sq = 0.0;
    for (a, b) in p.x.iter().zip(&q.x) {
        lin += a * b;
        sq += (a - b) * (a - b);
    }
    let du = p.u - q.u;
    cfg.alpha_x * lin
        + cfg.alpha_u * p.u * q.u
        + (-sq / (2.0 * cfg.l_x * cfg.l_x) - du * du / (2.0 * cfg.l_u * cfg.l_u)).exp()
}

#[derive(Debug, Clone)]
enum Factor {
    /// Lower-triangular L with L·Lᵀ = K + jitter·I.
    Dense(DMatrix<f64>),
    /// K ≈ Σ cᵣcᵣᵀ + diag(residual); `columns` are the pivoted Cholesky
    /// columns and `residual` the remaining diagonal.
    LowRank {
        columns: Vec<Vec<f64>>,
        residual: Vec<f64>,
    },
}

/// Factorized GP prior over a fixed point set; each call to
/// [`GpSampler::draw`] is one joint function draw.
#[derive(Debug, Clone)]
pub struct GpSampler {
    factor: Factor,
    jitter: f64,
    len: usize,
}

fn jitter_for(points: &[Point], cfg: &KernelConfig) -> f64 {
    let trace: f64 = points.iter().map(|p| kernel(p, p, cfg)).sum();
    JITTER_SCALE * trace / points.len() as f64
}

fn check_points(points: &[Point], cfg: &KernelConfig) -> Result<()> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::Config("cannot sample a GP over zero points".into()));
    }
    if points.len() > MAX_POINTS {
        return Err(Error::Config(format!(
            "{} points exceed the sampling budget of {MAX_POINTS}",
            points.len()
        )));
    }
    Ok(())
}

impl GpSampler {
    /// Dense factorization below [`DENSE_LIMIT`] points, pivoted low-rank
    /// above.
    pub fn new(points: &[Point], cfg: &KernelConfig) -> Result<Self> {
        if points.len() <= DENSE_LIMIT {
            Self::dense(points, cfg)
        } else {
            Self::low_rank(points, cfg)
        }
    }

    /// Cholesky of K + jitter·I, jitter = 1e-8·trace(K)/m, escalated ×10 up
    /// to three times on failure.
    pub fn dense(points: &[Point], cfg: &KernelConfig) -> Result<Self> {
        check_points(points, cfg)?;
        let m = points.len();
        let k = DMatrix::from_fn(m, m, |i, j| kernel(&points[i], &points[j], cfg));
        let mut jitter = jitter_for(points, cfg);
        for _ in 0..=JITTER_ESCALATIONS {
            let mut kj = k.clone();
            for i in 0..m {
                kj[(i, i)] += jitter;
            }
            if let Some(chol) = kj.cholesky() {
                return Ok(Self {
                    factor: Factor::Dense(chol.unpack()),
                    jitter,
                    len: m,
                });
            }
            jitter *= 10.0;
        }
        Err(Error::Numerical(format!(
            "kernel matrix over {m} points is not positive definite after {JITTER_ESCALATIONS} jitter escalations"
        )))
    }

    /// Pivoted Cholesky, stopped once every residual diagonal entry is at
    /// most the jitter. The discarded Schur complement is replaced by its
    /// diagonal, so marginal variances are exact and the covariance error
    /// is bounded by 1e-8·trace(K) in spectral norm.
    pub fn low_rank(points: &[Point], cfg: &KernelConfig) -> Result<Self> {
        check_points(points, cfg)?;
        let m = points.len();
        let jitter = jitter_for(points, cfg);
        let mut residual: Vec<f64> = points.iter().map(|p| kernel(p, p, cfg)).collect();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        loop {
            let (pivot, &largest) = residual
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty");
            if !largest.is_finite() {
                return Err(Error::Numerical("non-finite kernel value".into()));
            }
            if largest <= jitter || columns.len() == m {
                break;
            }
            let scale = largest.sqrt();
            let anchor = &points[pivot];
            let mut col: Vec<f64> = points.iter().map(|p| kernel(p, anchor, cfg)).collect();
            for prev in &columns {
                let w = prev[pivot];
                for (c, &p) in col.iter_mut().zip(prev) {
                    *c -= w * p;
                }
            }
            for (j, c) in col.iter_mut().enumerate() {
                *c /= scale;
                residual[j] = (residual[j] - *c * *c).max(0.0);
            }
            residual[pivot] = 0.0;
            columns.push(col);
        }
        Ok(Self {
            factor: Factor::LowRank { columns, residual },
            jitter,
            len: m,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Rank of the factor (m for the dense path).
    pub fn rank(&self) -> usize {
        match &self.factor {
            Factor::Dense(_) => self.len,
            Factor::LowRank { columns, .. } => columns.len(),
        }
    }

    pub fn draw(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.factor {
            Factor::Dense(l) => {
                let z = DVector::from_iterator(self.len, (0..self.len).map(|_| rng.sample::<f64, _>(StandardNormal)));
                (l * z).iter().copied().collect()
            }
            Factor::LowRank { columns, residual } => {
                let mut out = vec![0.0; self.len];
                for col in columns {
                    let z: f64 = rng.sample(StandardNormal);
                    for (o, c) in out.iter_mut().zip(col) {
                        *o += c * z;
                    }
                }
                for (o, r) in out.iter_mut().zip(residual) {
                    let e: f64 = rng.sample(StandardNormal);
                    *o += (r + self.jitter).sqrt() * e;
                }
                out
            }
        }
    }
}

/// One joint draw of a zero-mean GP at `points`; deterministic in `seed`.
pub fn sample_gp(points: &[Point], cfg: &KernelConfig, seed: u64) -> Result<Vec<f64>> {
    Ok(GpSampler::new(points, cfg)?.draw(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scenario {
    /// No hidden confounding in D².
    Little,
    /// u enters the treatment logit through the SE term only.
    Medium,
    /// u also enters the treatment logit linearly with weight 10.
    Heavy,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Little, Scenario::Medium, Scenario::Heavy];

    pub fn number(self) -> u8 {
        match self {
            Scenario::Little => 1,
            Scenario::Medium => 2,
            Scenario::Heavy => 3,
        }
    }

    /// (αᵤ, lᵤ) of the large dataset's treatment kernel.
    pub fn confounding(self) -> (f64, f64) {
        match self {
            Scenario::Little => (0.0, UNCONFOUNDED_LENGTH),
            Scenario::Medium => (0.0, 0.5),
            Scenario::Heavy => (10.0, 0.5),
        }
    }
}

impl TryFrom<u8> for Scenario {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Scenario::Little),
            2 => Ok(Scenario::Medium),
            3 => Ok(Scenario::Heavy),
            _ => Err(Error::Config(format!("scenario must be 1, 2 or 3, got {v}"))),
        }
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s.number()
    }
}

/// Default outcome kernel: a strong linear trend in x (so that treatment
/// effects vary a lot with the observed covariate), a weaker one in the
/// hidden u, and smooth local variation in both.
pub const DEFAULT_OUTCOME_KERNEL: KernelConfig = KernelConfig {
    alpha_x: 20.0,
    alpha_u: 1.0,
    l_x: 2.0,
    l_u: 1.0,
};

/// Default treatment-logit kernel before the scenario's u parameters are
/// applied.
pub const DEFAULT_PROPENSITY_KERNEL: KernelConfig = KernelConfig {
    alpha_x: 0.3,
    alpha_u: 0.0,
    l_x: 1.0,
    l_u: UNCONFOUNDED_LENGTH,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub theta0: KernelConfig,
    pub theta1: KernelConfig,
    /// Treatment-logit kernel of D²; D¹ uses it with u switched off.
    pub theta_pi: KernelConfig,
    pub n: usize,
    pub n_prime: usize,
    /// Observed covariate dimension.
    #[serde(default = "one")]
    pub dim: usize,
    /// Replace the last covariate by the mean of the others.
    #[serde(default)]
    pub collinear: bool,
    /// When set, D¹ is a randomized trial with this constant treatment
    /// probability, exported as known propensity.
    #[serde(default)]
    pub d1_rct_propensity: Option<f64>,
    pub scenario: Option<Scenario>,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl DgpConfig {
    /// n = 200, N′ = 10000 with the scenario's confounding in D².
    pub fn scenario(scenario: Scenario, seed: u64) -> Self {
        let (alpha_u, l_u) = scenario.confounding();
        Self {
            theta0: DEFAULT_OUTCOME_KERNEL,
            theta1: DEFAULT_OUTCOME_KERNEL,
            theta_pi: KernelConfig {
                alpha_u,
                l_u,
                ..DEFAULT_PROPENSITY_KERNEL
            },
            n: 200,
            n_prime: 10_000,
            dim: 1,
            collinear: false,
            d1_rct_propensity: None,
            scenario: Some(scenario),
            seed,
        }
    }

    pub fn with_sizes(mut self, n: usize, n_prime: usize) -> Self {
        self.n = n;
        self.n_prime = n_prime;
        self
    }

    pub fn with_rct(mut self, propensity: f64) -> Self {
        self.d1_rct_propensity = Some(propensity);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if self.n_prime < 4 {
            return Err(Error::Config(format!(
                "N' must be at least 4, got {}",
                self.n_prime
            )));
        }
        if self.dim == 0 || (self.collinear && self.dim < 2) {
            return Err(Error::Config("collinear covariates need dim >= 2".into()));
        }
        if self.n + self.n_prime > MAX_POINTS {
            return Err(Error::Config(format!(
                "n + N' = {} exceeds the sampling budget of {MAX_POINTS}",
                self.n + self.n_prime
            )));
        }
        if let Some(p) = self.d1_rct_propensity {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Overlap(p));
            }
        }
        for k in [&self.theta0, &self.theta1, &self.theta_pi] {
            k.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub d1: Dataset,
    pub d2: Dataset,
    /// Mean of the true CATE over every generated unit. D¹ and D² share the
    /// covariate distribution, so this is the ATE both datasets target.
    pub oracle_ate: f64,
    /// Mean of the true CATE over the units of D¹ only.
    pub sample_ate_d1: f64,
    pub oracle_cate_d1: Vec<f64>,
    pub oracle_cate_d2: Vec<f64>,
    pub hidden_u_d1: Vec<f64>,
    pub hidden_u_d2: Vec<f64>,
    pub propensity_d1: Vec<f64>,
    pub propensity_d2: Vec<f64>,
}

// Fixed offsets deriving independent streams from the master seed.
const STREAM_COVARIATES: u64 = 0;
const STREAM_Y0: u64 = 1;
const STREAM_Y1: u64 = 2;
const STREAM_LOGIT_D1: u64 = 3;
const STREAM_LOGIT_D2: u64 = 4;
const STREAM_TREATMENT: u64 = 5;

fn stream(seed: u64, offset: u64) -> u64 {
    seed.wrapping_add(offset.wrapping_mul(0xA076_1D64_78BD_642F))
}

pub fn generate(cfg: &DgpConfig) -> Result<SyntheticOutput> {
    cfg.validate()?;
    let total = cfg.n + cfg.n_prime;
    let mut rng = ChaCha8Rng::seed_from_u64(stream(cfg.seed, STREAM_COVARIATES));
    let points: Vec<Point> = (0..total)
        .map(|_| {
            let mut x: Vec<f64> = (0..cfg.dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            if cfg.collinear {
                let q = cfg.dim - 1;
                x[q] = x[..q].iter().sum::<f64>() / q as f64;
            }
            let u = rng.random_range(-1.0..=1.0);
            Point { x, u }
        })
        .collect();

    let outcome0 = GpSampler::new(&points, &cfg.theta0)?;
    let y0 = outcome0.draw(stream(cfg.seed, STREAM_Y0));
    let y1 = if cfg.theta1 == cfg.theta0 {
        outcome0.draw(stream(cfg.seed, STREAM_Y1))
    } else {
        GpSampler::new(&points, &cfg.theta1)?.draw(stream(cfg.seed, STREAM_Y1))
    };

    let (d1_points, d2_points) = points.split_at(cfg.n);
    let propensity_d1: Vec<f64> = match cfg.d1_rct_propensity {
        Some(p) => vec![p; cfg.n],
        None => sample_gp(d1_points, &cfg.theta_pi.without_u(), stream(cfg.seed, STREAM_LOGIT_D1))?
            .into_iter()
            .map(sigmoid)
            .collect(),
    };
    let propensity_d2: Vec<f64> =
        sample_gp(d2_points, &cfg.theta_pi, stream(cfg.seed, STREAM_LOGIT_D2))?
            .into_iter()
            .map(sigmoid)
            .collect();

    let mut trng = ChaCha8Rng::seed_from_u64(stream(cfg.seed, STREAM_TREATMENT));
    let treatments: Vec<u8> = propensity_d1
        .iter()
        .chain(&propensity_d2)
        .map(|&p| u8::from(trng.random::<f64>() < p))
        .collect();

    let make = |range: std::ops::Range<usize>, role| -> Result<Dataset> {
        let samples = range
            .map(|i| {
                let a = treatments[i];
                let y = if a == 1 { y1[i] } else { y0[i] };
                Sample::new(points[i].x.clone(), a, y)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, role)
    };
    let mut d1 = make(0..cfg.n, Role::SmallUnconfounded)?;
    if cfg.d1_rct_propensity.is_some() {
        d1 = d1.with_known_propensity(propensity_d1.clone())?;
    }
    let d2 = make(cfg.n..total, Role::LargeAuxiliary)?;

    let cate: Vec<f64> = y1.iter().zip(&y0).map(|(a, b)| a - b).collect();
    let oracle_cate_d1 = cate[..cfg.n].to_vec();
    let sample_ate_d1 = oracle_cate_d1.iter().sum::<f64>() / cfg.n as f64;
    let oracle_ate = cate.iter().sum::<f64>() / total as f64;
    Ok(SyntheticOutput {
        d1,
        d2,
        oracle_ate,
        sample_ate_d1,
        oracle_cate_d1,
        oracle_cate_d2: cate[cfg.n..].to_vec(),
        hidden_u_d1: d1_points.iter().map(|p| p.u).collect(),
        hidden_u_d2: d2_points.iter().map(|p| p.u).collect(),
        propensity_d1,
        propensity_d2,
    })
}

/// Metadata written next to simulated CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub oracle_ate: f64,
    pub scenario: Option<u8>,
    pub seed: u64,
    pub n: usize,
    #[serde(rename = "N_prime")]
    pub n_prime: usize,
}

impl SimulationMeta {
    pub fn new(cfg: &DgpConfig, out: &SyntheticOutput) -> Self {
        Self {
            oracle_ate: out.oracle_ate,
            scenario: cfg.scenario.map(Scenario::number),
            seed: cfg.seed,
            n: cfg.n,
            n_prime: cfg.n_prime,
        }
    }
}
