//! Data-generating processes used by the simulation labs.
//!
//! A design knows how to draw one observation from its base distribution
//! `P₀`, the population influence functions at an observation, the analytic
//! joint covariance, and how to fit the short/long/residualized estimators
//! on a sample.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{joint_covariance, InfluenceContributions};
use crate::error::{Error, Result};
use crate::exec::StreamRng;
use crate::model::{compute_lambda, JointCovariance};
use crate::rct::{self, RctDataset};

/// Row-major block of observations with a fixed width.
#[derive(Debug, Clone, PartialEq)]
pub struct Rows {
    dim: usize,
    data: Vec<f64>,
}

impl Rows {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0);
        Self { dim, data }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * n),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Estimates from one simulated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFit {
    pub c_short: f64,
    pub gamma_hat: Vec<f64>,
    /// Plug-in joint covariance of `(c_short, gamma_hat)`.
    pub sigma: JointCovariance,
    /// Plug-in adjustment coefficient.
    pub lambda_hat: Vec<f64>,
    /// Long-style estimate and its per-observation variance, when fitted.
    pub long: Option<(f64, f64)>,
}

impl SampleFit {
    pub fn c_resid(&self) -> f64 {
        self.c_adjusted(&self.lambda_hat)
    }

    pub fn c_adjusted(&self, lambda: &[f64]) -> f64 {
        self.c_short - lambda.iter().zip(&self.gamma_hat).map(|(l, g)| l * g).sum::<f64>()
    }
}

pub trait BaseDesign: Send + Sync {
    /// Width of one observation row.
    fn dim(&self) -> usize;

    fn p_gamma(&self) -> usize;

    /// Target value `c₀` under `P₀`.
    fn truth(&self) -> f64;

    /// Analytic joint covariance (per-observation scale, `n = 1`).
    fn population(&self) -> JointCovariance;

    /// Population coefficient of the long-style adjustment.
    fn beta_long(&self) -> Vec<f64>;

    fn draw_row(&self, rng: &mut StreamRng, row: &mut [f64]);

    /// Population influence values at `row`: `out[0] = φ_c`, `out[1..] = φ_γ`.
    fn influence(&self, row: &[f64], out: &mut [f64]);

    fn fit(&self, sample: &Rows, with_long: bool) -> Result<SampleFit>;

    fn draw_sample(&self, n: usize, rng: &mut StreamRng) -> Rows {
        let dim = self.dim();
        let mut data = vec![0.0; dim * n];
        for row in data.chunks_exact_mut(dim) {
            self.draw_row(rng, row);
        }
        Rows::new(dim, data)
    }

    /// Population `Λ`.
    fn lambda(&self) -> Vec<f64> {
        compute_lambda(&self.population())
            .map(|l| l.as_slice().to_vec())
            .unwrap_or_default()
    }
}

/// Observations are draws of `(φ_c, φ_γ) ~ N(0, Σ)`; `c_hat` and `γ_hat` are
/// the sample means, so their joint law is exactly Gaussian at every `n`.
#[derive(Debug, Clone)]
pub struct GaussianDesign {
    sigma: JointCovariance,
    factor: DMatrix<f64>,
    beta_long: Vec<f64>,
    truth: f64,
}

impl GaussianDesign {
    pub fn new(sigma: JointCovariance, beta_long: Vec<f64>, truth: f64) -> Result<Self> {
        if beta_long.len() != sigma.p_gamma() {
            return Err(Error::DimensionMismatch {
                expected: sigma.p_gamma(),
                found: beta_long.len(),
            });
        }
        let factor = Cholesky::new(sigma.full_matrix())
            .ok_or(Error::DegenerateResidualVariance)?
            .l();
        Ok(Self {
            sigma: sigma.with_n(1),
            factor,
            beta_long,
            truth,
        })
    }

    /// Unit variances and correlation `rho` between estimator and check.
    pub fn correlated(rho: f64, beta_long: f64) -> Result<Self> {
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::DomainError(format!("rho = {rho} outside (-1, 1)")));
        }
        Self::new(JointCovariance::scalar(1.0, 1.0, rho, 1)?, vec![beta_long], 0.0)
    }
}

impl BaseDesign for GaussianDesign {
    fn dim(&self) -> usize {
        self.sigma.p_gamma() + 1
    }

    fn p_gamma(&self) -> usize {
        self.sigma.p_gamma()
    }

    fn truth(&self) -> f64 {
        self.truth
    }

    fn population(&self) -> JointCovariance {
        self.sigma.clone()
    }

    fn beta_long(&self) -> Vec<f64> {
        self.beta_long.clone()
    }

    fn draw_row(&self, rng: &mut StreamRng, row: &mut [f64]) {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        // lower-triangular product in place, last coordinate first
        for i in (0..row.len()).rev() {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.factor[(i, j)] * row[j];
            }
            row[i] = acc;
        }
        row[0] += self.truth;
    }

    fn influence(&self, row: &[f64], out: &mut [f64]) {
        out[0] = row[0] - self.truth;
        out[1..].copy_from_slice(&row[1..]);
    }

    fn fit(&self, sample: &Rows, with_long: bool) -> Result<SampleFit> {
        let n = sample.n();
        let k = self.dim();
        let values = DMatrix::from_row_slice(n, k, sample.as_slice());
        let means: Vec<f64> = values.column_iter().map(|c| c.sum() / n as f64).collect();
        let contrib = InfluenceContributions::new(values, None)?;
        let sigma = joint_covariance(&contrib)?;
        let lambda_hat = compute_lambda(&sigma)?.as_slice().to_vec();
        let long = with_long.then(|| {
            let b = DVector::from_column_slice(&self.beta_long);
            let c_long = means[0] - b.dot(&DVector::from_column_slice(&means[1..]));
            let var = sigma.adjusted_variance(&b).unwrap_or(f64::NAN);
            (c_long, var)
        });
        Ok(SampleFit {
            c_short: means[0],
            gamma_hat: means[1..].to_vec(),
            sigma,
            lambda_hat,
            long,
        })
    }
}

/// Randomized experiment: `T ~ Bernoulli(π)`, `X ~ N(0, Σ_X)`,
/// `Y = α + τT + β'X + δ'(T·X) + σ_ε ε`. Rows are `(Y, T, X₁..X_p)`.
#[derive(Debug, Clone)]
pub struct RctDesign {
    pi: f64,
    alpha: f64,
    tau: f64,
    beta: DVector<f64>,
    delta: DVector<f64>,
    x_cov: DMatrix<f64>,
    x_factor: DMatrix<f64>,
    noise_sd: f64,
}

impl RctDesign {
    pub fn new(
        pi: f64,
        alpha: f64,
        tau: f64,
        beta: Vec<f64>,
        delta: Vec<f64>,
        x_cov: DMatrix<f64>,
        noise_sd: f64,
    ) -> Result<Self> {
        let p = beta.len();
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::DomainError(format!("pi = {pi} outside (0, 1)")));
        }
        if p == 0 || delta.len() != p || x_cov.nrows() != p || x_cov.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p.max(1),
                found: delta.len(),
            });
        }
        if !(noise_sd > 0.0) {
            return Err(Error::DomainError("noise_sd must be positive".into()));
        }
        let x_factor = Cholesky::new(x_cov.clone())
            .ok_or(Error::SingularCheckCovariance { rcond: 0.0 })?
            .l();
        Ok(Self {
            pi,
            alpha,
            tau,
            beta: DVector::from_vec(beta),
            delta: DVector::from_vec(delta),
            x_cov,
            x_factor,
            noise_sd,
        })
    }

    /// One standard-normal covariate with slope 1 in control and `1 + delta`
    /// in treatment.
    pub fn interacted(pi: f64, tau: f64, delta: f64) -> Result<Self> {
        Self::new(pi, 0.0, tau, vec![1.0], vec![delta], DMatrix::identity(1, 1), 1.0)
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    fn slopes(&self) -> (DVector<f64>, DVector<f64>) {
        (&self.beta + &self.delta, self.beta.clone())
    }

    /// Population residualization coefficient `(1 − π)b₁ + πb₀`.
    pub fn beta_resid(&self) -> Vec<f64> {
        let (b1, b0) = self.slopes();
        ((b1 * (1.0 - self.pi)) + b0 * self.pi).as_slice().to_vec()
    }

    /// Noise term `y − E[Y | T, X]` of an observation row.
    pub fn noise(&self, row: &[f64]) -> f64 {
        let t = row[1];
        let x = DVector::from_column_slice(&row[2..]);
        row[0] - self.alpha - self.tau * t - self.beta.dot(&x) - t * self.delta.dot(&x)
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }
}

impl BaseDesign for RctDesign {
    fn dim(&self) -> usize {
        self.beta.len() + 2
    }

    fn p_gamma(&self) -> usize {
        self.beta.len()
    }

    fn truth(&self) -> f64 {
        self.tau
    }

    fn population(&self) -> JointCovariance {
        let (b1, b0) = self.slopes();
        let (p1, p0) = (self.pi, 1.0 - self.pi);
        let s2 = self.noise_sd * self.noise_sd;
        let var1 = (b1.transpose() * &self.x_cov * &b1)[(0, 0)] + s2;
        let var0 = (b0.transpose() * &self.x_cov * &b0)[(0, 0)] + s2;
        let c_gamma = &self.x_cov * &b1 / p1 + &self.x_cov * &b0 / p0;
        let gg = &self.x_cov * (1.0 / p1 + 1.0 / p0);
        JointCovariance::new(var1 / p1 + var0 / p0, c_gamma, gg, 1)
            .expect("analytic RCT covariance is valid")
    }

    fn beta_long(&self) -> Vec<f64> {
        let (b1, b0) = self.slopes();
        ((b1 * self.pi) + b0 * (1.0 - self.pi)).as_slice().to_vec()
    }

    fn draw_row(&self, rng: &mut StreamRng, row: &mut [f64]) {
        let p = self.beta.len();
        let t = if rng.random::<f64>() < self.pi { 1.0 } else { 0.0 };
        let mut z = vec![0.0; p];
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut y = self.alpha + self.tau * t;
        for i in 0..p {
            let mut xi = 0.0;
            for j in 0..=i {
                xi += self.x_factor[(i, j)] * z[j];
            }
            row[2 + i] = xi;
            y += (self.beta[i] + t * self.delta[i]) * xi;
        }
        let eps: f64 = rng.sample(StandardNormal);
        row[0] = y + self.noise_sd * eps;
        row[1] = t;
    }

    fn influence(&self, row: &[f64], out: &mut [f64]) {
        let t = row[1];
        let (mu1, mu0) = (self.alpha + self.tau, self.alpha);
        if t > 0.5 {
            out[0] = (row[0] - mu1) / self.pi;
            for (o, x) in out[1..].iter_mut().zip(&row[2..]) {
                *o = x / self.pi;
            }
        } else {
            out[0] = -(row[0] - mu0) / (1.0 - self.pi);
            for (o, x) in out[1..].iter_mut().zip(&row[2..]) {
                *o = -x / (1.0 - self.pi);
            }
        }
    }

    fn fit(&self, sample: &Rows, with_long: bool) -> Result<SampleFit> {
        let data = rows_to_dataset(sample)?;
        let (short, balance, contrib) = rct::stacked_contributions(&data)?;
        let sigma = joint_covariance(&contrib)?;
        let lambda_hat = compute_lambda(&sigma)?.as_slice().to_vec();
        let long = if with_long {
            let l = rct::long_regression(&data)?;
            let v = &l.contributions;
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
            Some((l.c_long, var))
        } else {
            None
        };
        Ok(SampleFit {
            c_short: short.c_short,
            gamma_hat: balance.gamma_hat,
            sigma,
            lambda_hat,
            long,
        })
    }
}

/// Interpret rows `(Y, T, X...)` as an experiment dataset.
pub fn rows_to_dataset(sample: &Rows) -> Result<RctDataset> {
    let n = sample.n();
    let p = sample.dim() - 2;
    let mut y = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut x = DMatrix::zeros(n, p);
    for (i, r) in sample.iter().enumerate() {
        y.push(r[0]);
        t.push(r[1] > 0.5);
        for k in 0..p {
            x[(i, k)] = r[2 + k];
        }
    }
    RctDataset::new(y, t, x)
}

/// Serializable description of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    /// One check with unit variances and correlation `rho`.
    Gaussian {
        rho: f64,
        #[serde(default = "default_beta_long")]
        beta_long: f64,
    },
    /// Full `(1 + p) x (1 + p)` covariance, estimator first.
    GaussianMatrix {
        sigma: Vec<Vec<f64>>,
        beta_long: Vec<f64>,
    },
    Rct {
        pi: f64,
        #[serde(default)]
        alpha: f64,
        tau: f64,
        beta: Vec<f64>,
        #[serde(default)]
        delta: Option<Vec<f64>>,
        #[serde(default)]
        x_cov: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
    },
}

/// Long-regression coefficient used when a Gaussian spec omits it.
pub const DEFAULT_BETA_LONG: f64 = 0.75;

fn default_beta_long() -> f64 {
    DEFAULT_BETA_LONG
}

fn default_noise_sd() -> f64 {
    1.0
}

/// A concrete design behind a spec.
#[derive(Debug, Clone)]
pub enum Design {
    Gaussian(GaussianDesign),
    Rct(RctDesign),
}

impl Design {
    pub fn as_base(&self) -> &dyn BaseDesign {
        match self {
            Design::Gaussian(g) => g,
            Design::Rct(r) => r,
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let k = rows.len();
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidConfig("covariance matrix must be square".into()));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

impl DesignSpec {
    pub fn build(&self) -> Result<Design> {
        match self {
            DesignSpec::Gaussian { rho, beta_long } => {
                Ok(Design::Gaussian(GaussianDesign::correlated(*rho, *beta_long)?))
            }
            DesignSpec::GaussianMatrix { sigma, beta_long } => {
                let m = matrix_from_rows(sigma)?;
                let s = JointCovariance::from_matrix(&m, 1)?;
                Ok(Design::Gaussian(GaussianDesign::new(s, beta_long.clone(), 0.0)?))
            }
            DesignSpec::Rct {
                pi,
                alpha,
                tau,
                beta,
                delta,
                x_cov,
                noise_sd,
            } => {
                let p = beta.len();
                let delta = delta.clone().unwrap_or_else(|| vec![0.0; p]);
                let x_cov = match x_cov {
                    Some(m) => matrix_from_rows(m)?,
                    None => DMatrix::identity(p, p),
                };
                Ok(Design::Rct(RctDesign::new(
                    *pi,
                    *alpha,
                    *tau,
                    beta.clone(),
                    delta,
                    x_cov,
                    *noise_sd,
                )?))
            }
        }
    }
}
