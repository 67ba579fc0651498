//! Local-misspecification laboratory.
//!
//! Draws from `dP_n = (1 + s/√n) dP₀` by sampling-importance-resampling,
//! builds worst-case scores `s* = μ ψ_λ / ‖ψ_λ‖`, and measures the √n-scale
//! bias of adjusted estimators against the first-order prediction
//! `E₀[ψ_λ s]`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::design::{BaseDesign, RctDesign, Rows, SampleFit};
use crate::error::{Error, Result};
use crate::exec::{replicate, stream_rng, tag, try_replicate};
use crate::model::{self, JointCovariance};
use crate::stats::{self, batch_estimate, CompensatedSum, McEstimate, MC_BATCHES};

pub const DEFAULT_CALIBRATION: usize = 1_000_000;
pub const MIN_CALIBRATION: usize = 100_000;
pub const PILOT_DRAWS: usize = 1_000_000;
pub const DEFAULT_OVERSAMPLE: usize = 20;
pub const DEFAULT_MAX_DRAWS: u64 = 2_000_000_000;

const CHUNK: usize = 10_000;

/// Draws from `P₀` with their population influence values cached.
#[derive(Debug, Clone)]
pub struct Calibration {
    rows: Rows,
    influence: Rows,
}

fn draw_with_influence(
    design: &dyn BaseDesign,
    size: usize,
    seed: u64,
    stream_tag: u64,
) -> (Rows, Rows) {
    let chunks = size.div_ceil(CHUNK);
    let parts = replicate(chunks, |c| {
        let len = CHUNK.min(size - c * CHUNK);
        let mut rng = stream_rng(seed, stream_tag, c as u64);
        let rows = design.draw_sample(len, &mut rng);
        let infl = influence_of(design, &rows);
        (rows, infl)
    });
    let dim = design.dim();
    let k = design.p_gamma() + 1;
    let mut rows = Rows::with_capacity(dim, size);
    let mut infl = Rows::with_capacity(k, size);
    for (r, f) in parts {
        for (a, b) in r.iter().zip(f.iter()) {
            rows.push(a);
            infl.push(b);
        }
    }
    (rows, infl)
}

fn influence_of(design: &dyn BaseDesign, rows: &Rows) -> Rows {
    let k = design.p_gamma() + 1;
    let mut out = vec![0.0; k * rows.n()];
    for (r, o) in rows.iter().zip(out.chunks_exact_mut(k)) {
        design.influence(r, o);
    }
    Rows::new(k, out)
}

impl Calibration {
    pub fn draw(design: &dyn BaseDesign, size: usize, seed: u64) -> Result<Self> {
        if size < MIN_CALIBRATION {
            return Err(Error::InvalidConfig(format!(
                "calibration size {size} is below {MIN_CALIBRATION}"
            )));
        }
        let (rows, influence) = draw_with_influence(design, size, seed, tag::CALIBRATION);
        Ok(Self { rows, influence })
    }

    pub fn len(&self) -> usize {
        self.rows.n()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.n() == 0
    }

    pub fn rows(&self) -> &Rows {
        &self.rows
    }

    pub fn influence(&self) -> &Rows {
        &self.influence
    }

    /// `ψ_λ = φ_c − λ'φ_γ` at every calibration draw.
    pub fn psi(&self, lambda: &[f64]) -> Vec<f64> {
        self.influence.iter().map(|f| psi_at(f, lambda)).collect()
    }

    pub fn score_values(&self, score: &MisspecScore) -> Vec<f64> {
        self.rows
            .iter()
            .zip(self.influence.iter())
            .map(|(r, f)| score.eval(r, f))
            .collect()
    }

    /// Sample mean with its standard error.
    pub fn expectation(&self, values: &[f64]) -> McEstimate {
        let n = values.len() as f64;
        McEstimate {
            value: stats::mean(values),
            mc_se: (stats::sample_variance(values) / n).sqrt(),
        }
    }

    /// `E₀[f·g]` with its standard error.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> McEstimate {
        let prod: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
        self.expectation(&prod)
    }

    /// `‖f‖ = √E₀[f²]`.
    pub fn norm(&self, f: &[f64]) -> f64 {
        let mut s = CompensatedSum::default();
        for v in f {
            s.add(v * v);
        }
        (s.value() / f.len() as f64).sqrt()
    }
}

fn psi_at(infl: &[f64], lambda: &[f64]) -> f64 {
    infl[0] - lambda.iter().zip(&infl[1..]).map(|(l, g)| l * g).sum::<f64>()
}

pub type ScoreFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ScoreShape {
    Zero,
    /// `μ ψ_λ / ‖ψ_λ‖`.
    WorstCase { lambda: Vec<f64>, psi_norm: f64 },
    /// `scale · f(row, influence)`.
    Custom { f: ScoreFn, scale: f64 },
}

impl fmt::Debug for ScoreShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreShape::Zero => write!(f, "Zero"),
            ScoreShape::WorstCase { lambda, psi_norm } => f
                .debug_struct("WorstCase")
                .field("lambda", lambda)
                .field("psi_norm", psi_norm)
                .finish(),
            ScoreShape::Custom { scale, .. } => write!(f, "Custom {{ scale: {scale} }}"),
        }
    }
}

/// Perturbation direction `s` with `E₀[s] = 0` and `E₀[s²] ≤ μ²`.
#[derive(Debug, Clone)]
pub struct MisspecScore {
    pub mu: f64,
    pub shape: ScoreShape,
}

fn check_mu(mu: f64) -> Result<()> {
    if mu < 0.0 || !mu.is_finite() {
        return Err(Error::NegativeMu(mu));
    }
    Ok(())
}

impl MisspecScore {
    pub fn zero() -> Self {
        Self {
            mu: 0.0,
            shape: ScoreShape::Zero,
        }
    }

    /// `s* = μ ψ_λ / ‖ψ_λ‖` with the norm taken on `calib`.
    pub fn worst_case(calib: &Calibration, lambda: &[f64], mu: f64) -> Result<Self> {
        check_mu(mu)?;
        let p = calib.influence.dim() - 1;
        if lambda.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: lambda.len(),
            });
        }
        if mu == 0.0 {
            return Ok(Self::zero());
        }
        let psi = calib.psi(lambda);
        let psi_norm = calib.norm(&psi);
        let scale = calib.norm(&calib.influence.column(0)).max(f64::MIN_POSITIVE);
        if !(psi_norm > 1e-12 * scale) {
            return Err(Error::ZeroInfluence);
        }
        Ok(Self {
            mu,
            shape: ScoreShape::WorstCase {
                lambda: lambda.to_vec(),
                psi_norm,
            },
        })
    }

    /// Arbitrary direction; checked against the ball by [`MisspecScore::validate`].
    pub fn custom(f: ScoreFn, mu: f64) -> Result<Self> {
        check_mu(mu)?;
        Ok(Self {
            mu,
            shape: ScoreShape::Custom { f, scale: 1.0 },
        })
    }

    /// Rescale `f` so that its calibration norm equals `mu`.
    pub fn normalized(f: ScoreFn, mu: f64, calib: &Calibration) -> Result<Self> {
        check_mu(mu)?;
        let raw = Self::custom(f.clone(), 1.0)?;
        let norm = calib.norm(&calib.score_values(&raw));
        if !(norm > 0.0) {
            return Err(Error::InvalidScore("direction has zero norm".into()));
        }
        Ok(Self {
            mu,
            shape: ScoreShape::Custom {
                f,
                scale: mu / norm,
            },
        })
    }

    /// Project `ψ_λ` out of `f` on the calibration sample, then rescale to `mu`.
    pub fn orthogonalized(
        f: ScoreFn,
        lambda: &[f64],
        mu: f64,
        calib: &Calibration,
    ) -> Result<Self> {
        let h = calib.score_values(&Self::custom(f.clone(), 1.0)?);
        let psi = calib.psi(lambda);
        let coef = calib.inner(&h, &psi).value / calib.inner(&psi, &psi).value;
        let lambda = lambda.to_vec();
        let g: ScoreFn = Arc::new(move |row, infl| f(row, infl) - coef * psi_at(infl, &lambda));
        Self::normalized(g, mu, calib)
    }

    /// Coefficients `a` with `s = a'(φ_c, φ_γ)`, when the score has that form.
    fn linear_coefficients(&self, k: usize) -> Option<Vec<f64>> {
        match &self.shape {
            ScoreShape::Zero => Some(vec![0.0; k]),
            ScoreShape::WorstCase { lambda, psi_norm } => {
                let c = self.mu / psi_norm;
                Some(std::iter::once(c).chain(lambda.iter().map(|l| -c * l)).collect())
            }
            ScoreShape::Custom { .. } => None,
        }
    }

    pub fn eval(&self, row: &[f64], infl: &[f64]) -> f64 {
        match &self.shape {
            ScoreShape::Zero => 0.0,
            ScoreShape::WorstCase { lambda, psi_norm } => self.mu * psi_at(infl, lambda) / psi_norm,
            ScoreShape::Custom { f, scale } => scale * f(row, infl),
        }
    }

    /// Check mean zero (within 3 standard errors) and `E₀[s²] ≤ μ²(1 + 1e-6)`
    /// on the calibration sample. Worst-case scores are mean-zero by
    /// construction, so only their norm is checked.
    pub fn validate(&self, calib: &Calibration) -> Result<ScoreCheck> {
        let s = calib.score_values(self);
        let mean = calib.expectation(&s);
        let second = calib.inner(&s, &s).value;
        if matches!(self.shape, ScoreShape::Custom { .. }) && mean.value.abs() > 3.0 * mean.mc_se + 1e-12 {
            return Err(Error::InvalidScore(format!(
                "mean {} is not zero (se {})",
                mean.value, mean.mc_se
            )));
        }
        if second > self.mu * self.mu * (1.0 + 1e-6) {
            return Err(Error::InvalidScore(format!(
                "second moment {second} exceeds mu^2 = {}",
                self.mu * self.mu
            )));
        }
        Ok(ScoreCheck {
            mean,
            second_moment: second,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreCheck {
    pub mean: McEstimate,
    pub second_moment: f64,
}

/// Outcome-location score `ε/σ²` of the experiment design, in both arms or
/// the treated arm only. Both leave the checks' population value at zero.
pub fn outcome_shift_score(design: &RctDesign, treated_only: bool) -> MisspecScore {
    let d = design.clone();
    let s2 = d.noise_sd() * d.noise_sd();
    let pi = d.pi();
    let f: ScoreFn = Arc::new(move |row, _| {
        let t = if treated_only { row[1] } else { 1.0 };
        t * d.noise(row) / s2
    });
    let norm_sq = if treated_only { pi / s2 } else { 1.0 / s2 };
    MisspecScore {
        mu: norm_sq.sqrt(),
        shape: ScoreShape::Custom { f, scale: 1.0 },
    }
}

/// Largest `|s|/√n` over a pilot of [`PILOT_DRAWS`] draws from `P₀`.
pub fn weight_pilot(
    design: &dyn BaseDesign,
    scores: &[&MisspecScore],
    n: usize,
    seed: u64,
) -> Result<f64> {
    if scores.iter().all(|s| matches!(s.shape, ScoreShape::Zero)) {
        return Ok(0.0);
    }
    let (rows, infl) = draw_with_influence(design, PILOT_DRAWS, seed, tag::WEIGHT_PILOT);
    let sqrt_n = (n as f64).sqrt();
    let mut ratio = 0.0f64;
    for s in scores {
        for (r, f) in rows.iter().zip(infl.iter()) {
            ratio = ratio.max(s.eval(r, f).abs() / sqrt_n);
        }
    }
    if ratio >= 1.0 {
        return Err(Error::WeightUnderflow { ratio });
    }
    Ok(ratio)
}

/// `n` sorted uniforms on `(0, 1)` from normalized exponential spacings.
fn sorted_uniforms(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut acc = 0.0;
    let mut u: Vec<f64> = (0..n)
        .map(|_| {
            acc += rng.sample::<f64, _>(Exp1);
            acc
        })
        .collect();
    let total = acc + rng.sample::<f64, _>(Exp1);
    for v in &mut u {
        *v /= total;
    }
    u
}

/// Multinomial resampling by inverting the cumulative weights at sorted
/// uniforms.
fn resample(weights: &[f64], uniforms: &[f64], out: &mut Vec<usize>) -> Result<()> {
    let mut total = 0.0;
    for &w in weights {
        if !(w >= 0.0) {
            return Err(Error::WeightUnderflow { ratio: 1.0 - w });
        }
        total += w;
    }
    out.clear();
    let mut cum = weights[0];
    let mut k = 0;
    for &u in uniforms {
        let target = u * total;
        while cum < target && k + 1 < weights.len() {
            k += 1;
            cum += weights[k];
        }
        out.push(k);
    }
    Ok(())
}

struct Pool {
    rows: Rows,
    /// Influence values, kept only when some score is not linear in them.
    infl: Option<Rows>,
    /// Running sums of the influence columns, row-major.
    prefix: Vec<f64>,
    k: usize,
}

impl Pool {
    fn draw(
        design: &dyn BaseDesign,
        m: usize,
        keep_influence: bool,
        rng: &mut crate::exec::StreamRng,
    ) -> Self {
        let rows = design.draw_sample(m, rng);
        let k = design.p_gamma() + 1;
        let mut prefix = vec![0.0; k * m];
        let mut buf = vec![0.0; k];
        let mut run = vec![0.0; k];
        for (r, p) in rows.iter().zip(prefix.chunks_exact_mut(k)) {
            design.influence(r, &mut buf);
            for j in 0..k {
                run[j] += buf[j];
                p[j] = run[j];
            }
        }
        let infl = keep_influence.then(|| influence_of(design, &rows));
        Self {
            rows,
            infl,
            prefix,
            k,
        }
    }

    fn perturbed(
        &self,
        score: &MisspecScore,
        n: usize,
        uniforms: &[f64],
        weights: &mut Vec<f64>,
        idx: &mut Vec<usize>,
    ) -> Result<Rows> {
        let inv = 1.0 / (n as f64).sqrt();
        let m = self.rows.n();
        match score.linear_coefficients(self.k) {
            // Weights are affine in the influence, so the cumulative weight at
            // position k is read off the prefix sums. The pilot bound keeps it
            // increasing.
            Some(a) => {
                let kd = a.len();
                let a: Vec<f64> = a.iter().map(|v| v * inv).collect();
                let prefix = &self.prefix[..m * kd];
                let cum = |k: usize| -> f64 {
                    let mut acc = (k + 1) as f64;
                    for (x, y) in a.iter().zip(&prefix[k * kd..k * kd + kd]) {
                        acc += x * y;
                    }
                    acc
                };
                let total = cum(m - 1);
                // coarse drift table; searches then start independently
                const BLOCK: usize = 64;
                let drift: Vec<f64> = (0..m)
                    .step_by(BLOCK)
                    .map(|k| cum(k) - (k + 1) as f64)
                    .collect();
                idx.clear();
                idx.extend(uniforms.iter().map(|&u| {
                    let target = u * total;
                    let b = ((target as usize) / BLOCK).min(drift.len() - 1);
                    let guess = target - drift[b] - 1.0;
                    let mut k = if guess > 0.0 { (guess as usize).min(m - 1) } else { 0 };
                    while k > 0 && cum(k - 1) >= target {
                        k -= 1;
                    }
                    while k + 1 < m && cum(k) < target {
                        k += 1;
                    }
                    k
                }));
            }
            None => {
                let infl = self.infl.as_ref().expect("influence kept for custom scores");
                weights.clear();
                weights.extend(
                    self.rows
                        .iter()
                        .zip(infl.iter())
                        .map(|(r, f)| 1.0 + score.eval(r, f) * inv),
                );
                resample(weights, uniforms, idx)?;
            }
        }
        let mut out = Rows::with_capacity(self.rows.dim(), n);
        for &i in idx.iter() {
            out.push(self.rows.row(i));
        }
        Ok(out)
    }
}

/// `n` draws from `P_n` via sampling-importance-resampling from a pool of
/// `oversample · n` draws from `P₀`.
pub fn sample_perturbed(
    design: &dyn BaseDesign,
    score: &MisspecScore,
    n: usize,
    oversample: usize,
    seed: u64,
) -> Result<Rows> {
    if n == 0 || oversample == 0 {
        return Err(Error::InvalidConfig("n and oversample must be positive".into()));
    }
    weight_pilot(design, &[score], n, seed)?;
    let mut rng = stream_rng(seed, tag::SAMPLER, 0);
    let keep = score.linear_coefficients(1).is_none();
    let pool = Pool::draw(design, oversample * n, keep, &mut rng);
    let u = sorted_uniforms(n, &mut rng);
    pool.perturbed(score, n, &u, &mut Vec::new(), &mut Vec::new())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MisspecEstimator {
    Short,
    Long,
    /// Plug-in `Λ̂` from each sample.
    Residualized,
    /// Fixed coefficient `λ`.
    Adjusted { lambda: Vec<f64> },
}

impl MisspecEstimator {
    pub fn label(&self) -> String {
        match self {
            MisspecEstimator::Short => "short".into(),
            MisspecEstimator::Long => "long".into(),
            MisspecEstimator::Residualized => "residualized".into(),
            MisspecEstimator::Adjusted { lambda } => format!("adjusted{lambda:?}"),
        }
    }

    /// Population coefficient whose `ψ_λ` is this estimator's influence.
    pub fn population_lambda(&self, design: &dyn BaseDesign) -> Vec<f64> {
        match self {
            MisspecEstimator::Short => vec![0.0; design.p_gamma()],
            MisspecEstimator::Long => design.beta_long(),
            MisspecEstimator::Residualized => design.lambda(),
            MisspecEstimator::Adjusted { lambda } => lambda.clone(),
        }
    }

    fn evaluate(&self, fit: &SampleFit) -> f64 {
        match self {
            MisspecEstimator::Short => fit.c_short,
            MisspecEstimator::Long => fit.long.map_or(f64::NAN, |l| l.0),
            MisspecEstimator::Residualized => fit.c_resid(),
            MisspecEstimator::Adjusted { lambda } => fit.c_adjusted(lambda),
        }
    }
}

/// One perturbation and the estimators measured under it.
#[derive(Debug, Clone)]
pub struct BiasCase {
    pub label: String,
    pub score: MisspecScore,
    pub estimators: Vec<MisspecEstimator>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisspecConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub oversample: usize,
    /// Upper bound on `reps · n`.
    pub max_draws: u64,
}

impl MisspecConfig {
    pub fn new(n: usize, reps: usize, seed: u64) -> Self {
        Self {
            n,
            reps,
            seed,
            oversample: DEFAULT_OVERSAMPLE,
            max_draws: DEFAULT_MAX_DRAWS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.reps < 2 || self.oversample == 0 {
            return Err(Error::InvalidConfig(
                "n and reps must be at least 2, oversample positive".into(),
            ));
        }
        if (self.n as u64).saturating_mul(self.reps as u64) > self.max_draws {
            return Err(Error::InvalidConfig(format!(
                "reps * n = {} exceeds the budget of {}",
                self.n as u64 * self.reps as u64,
                self.max_draws
            )));
        }
        Ok(())
    }

    /// Variance inflation of resampled means from a finite pool.
    pub fn sir_inflation(&self) -> f64 {
        1.0 + 1.0 / self.oversample as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasMeasurement {
    pub case: String,
    pub estimator: String,
    pub mu: f64,
    /// `√n (mean estimate − c₀)`.
    pub sqrt_n_bias: McEstimate,
    /// First-order prediction `E₀[ψ_λ s]`.
    pub predicted: McEstimate,
    /// `n · mean (estimate − c₀)²`.
    pub sqrt_n_mse: McEstimate,
    /// `‖ψ_λ‖²` on the calibration sample.
    pub psi_norm_sq: f64,
    /// `predicted² + ‖ψ_λ‖²·(1 + n/m)`, the MSE expected from the resampler.
    pub predicted_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasGrid {
    pub n: usize,
    pub reps: usize,
    pub pool_size: usize,
    pub calibration_size: usize,
    pub pilot_ratio: f64,
    pub measurements: Vec<BiasMeasurement>,
}

impl BiasGrid {
    pub fn find(&self, case: &str, estimator: &str) -> Option<&BiasMeasurement> {
        self.measurements
            .iter()
            .find(|m| m.case == case && m.estimator == estimator)
    }
}

/// Measure every case's estimators on shared per-replication pools and
/// shared resampling uniforms.
pub fn measure_bias_grid(
    design: &dyn BaseDesign,
    calib: &Calibration,
    cases: &[BiasCase],
    cfg: &MisspecConfig,
) -> Result<BiasGrid> {
    cfg.validate()?;
    for c in cases {
        c.score.validate(calib)?;
    }
    let scores: Vec<&MisspecScore> = cases.iter().map(|c| &c.score).collect();
    let pilot_ratio = weight_pilot(design, &scores, cfg.n, cfg.seed)?;

    let n = cfg.n;
    let m = cfg.oversample * n;
    let sqrt_n = (n as f64).sqrt();
    let c0 = design.truth();
    let width: usize = cases.iter().map(|c| c.estimators.len()).sum();
    let keep = cases.iter().any(|c| c.score.linear_coefficients(1).is_none());
    let records = try_replicate(cfg.reps, |i| -> Result<Vec<f64>> {
        let mut rng = stream_rng(cfg.seed, tag::REPLICATION, i as u64);
        let pool = Pool::draw(design, m, keep, &mut rng);
        let u = sorted_uniforms(n, &mut rng);
        let (mut w, mut idx) = (Vec::with_capacity(m), Vec::with_capacity(n));
        let mut out = Vec::with_capacity(width);
        for c in cases {
            let sample = pool.perturbed(&c.score, n, &u, &mut w, &mut idx)?;
            let with_long = c.estimators.contains(&MisspecEstimator::Long);
            let fit = design.fit(&sample, with_long)?;
            out.extend(c.estimators.iter().map(|e| sqrt_n * (e.evaluate(&fit) - c0)));
        }
        Ok(out)
    })?;

    let mut measurements = Vec::with_capacity(width);
    let mut col = 0;
    for c in cases {
        let s = calib.score_values(&c.score);
        for e in &c.estimators {
            let psi = calib.psi(&e.population_lambda(design));
            let predicted = calib.inner(&psi, &s);
            let psi_norm_sq = calib.inner(&psi, &psi).value;
            let k = col;
            let bias = batch_estimate(&records, MC_BATCHES, |r| {
                Some(stats::mean(&r.iter().map(|x| x[k]).collect::<Vec<_>>()))
            });
            let mse = batch_estimate(&records, MC_BATCHES, |r| {
                Some(stats::mean(&r.iter().map(|x| x[k] * x[k]).collect::<Vec<_>>()))
            });
            measurements.push(BiasMeasurement {
                case: c.label.clone(),
                estimator: e.label(),
                mu: c.score.mu,
                sqrt_n_bias: bias,
                predicted,
                sqrt_n_mse: mse,
                psi_norm_sq,
                predicted_mse: predicted.value.powi(2) + psi_norm_sq * cfg.sir_inflation(),
            });
            col += 1;
        }
    }
    Ok(BiasGrid {
        n,
        reps: cfg.reps,
        pool_size: m,
        calibration_size: calib.len(),
        pilot_ratio,
        measurements,
    })
}

pub fn measure_bias(
    design: &dyn BaseDesign,
    calib: &Calibration,
    estimator: MisspecEstimator,
    score: MisspecScore,
    cfg: &MisspecConfig,
) -> Result<BiasMeasurement> {
    let case = BiasCase {
        label: "case".into(),
        score,
        estimators: vec![estimator],
    };
    let mut grid = measure_bias_grid(design, calib, std::slice::from_ref(&case), cfg)?;
    Ok(grid.measurements.remove(0))
}

/// `{0, Λ/2, Λ, 2Λ, β_L}` with labels.
pub fn default_lambda_grid(design: &dyn BaseDesign) -> Vec<(String, Vec<f64>)> {
    let l = design.lambda();
    let scaled = |k: f64| l.iter().map(|v| k * v).collect::<Vec<_>>();
    vec![
        ("zero".into(), vec![0.0; l.len()]),
        ("half_lambda".into(), scaled(0.5)),
        ("lambda".into(), l.clone()),
        ("double_lambda".into(), scaled(2.0)),
        ("beta_long".into(), design.beta_long()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub label: String,
    pub lambda: Vec<f64>,
    pub measured: BiasMeasurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxRow {
    pub mu: f64,
    pub entries: Vec<GridEntry>,
    /// Plug-in residualized estimator under `s*(Λ)`.
    pub residualized: BiasMeasurement,
    pub argmin_bias: String,
    pub argmin_mse: String,
    /// `μ σ_c √(1 − 𝓘)` and `(1 + μ²) σ_R²`.
    pub minimax_bias: f64,
    pub minimax_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxReport {
    pub n: usize,
    pub reps: usize,
    pub pool_size: usize,
    pub calibration_size: usize,
    pub rows: Vec<MinimaxRow>,
}

fn argmin_by(entries: &[GridEntry], key: impl Fn(&GridEntry) -> f64) -> String {
    entries
        .iter()
        .min_by(|a, b| key(a).total_cmp(&key(b)))
        .map(|e| e.label.clone())
        .unwrap_or_default()
}

/// For every `μ`, measure each grid coefficient's estimator under its own
/// worst-case score, plus the plug-in residualized estimator under `s*(Λ)`.
pub fn minimax_grid(
    design: &dyn BaseDesign,
    calib: &Calibration,
    mus: &[f64],
    grid: &[(String, Vec<f64>)],
    cfg: &MisspecConfig,
) -> Result<MinimaxReport> {
    let lambda = design.lambda();
    let mut cases = Vec::new();
    for &mu in mus {
        for (label, l) in grid {
            let mut estimators = vec![MisspecEstimator::Adjusted { lambda: l.clone() }];
            if *l == lambda {
                estimators.push(MisspecEstimator::Residualized);
            }
            cases.push(BiasCase {
                label: format!("mu={mu}/{label}"),
                score: MisspecScore::worst_case(calib, l, mu)?,
                estimators,
            });
        }
        if !grid.iter().any(|(_, l)| *l == lambda) {
            cases.push(BiasCase {
                label: format!("mu={mu}/residualized"),
                score: MisspecScore::worst_case(calib, &lambda, mu)?,
                estimators: vec![MisspecEstimator::Residualized],
            });
        }
    }
    let res = measure_bias_grid(design, calib, &cases, cfg)?;
    let pop = design.population();
    let mut rows = Vec::with_capacity(mus.len());
    let mut it = res.measurements.into_iter();
    for &mu in mus {
        let mut residualized = None;
        let mut entries = Vec::with_capacity(grid.len());
        for (label, l) in grid {
            entries.push(GridEntry {
                label: label.clone(),
                lambda: l.clone(),
                measured: it.next().expect("one measurement per estimator"),
            });
            if *l == lambda {
                residualized = it.next();
            }
        }
        let residualized = match residualized {
            Some(r) => r,
            None => it.next().expect("residualized case"),
        };
        let b = model::misspec_bounds(&pop, mu, &[])?;
        rows.push(MinimaxRow {
            mu,
            argmin_bias: argmin_by(&entries, |e| e.measured.sqrt_n_bias.value),
            argmin_mse: argmin_by(&entries, |e| e.measured.sqrt_n_mse.value),
            entries,
            residualized,
            minimax_bias: b.minimax_bias,
            minimax_mse: b.minimax_mse,
        });
    }
    Ok(MinimaxReport {
        n: res.n,
        reps: res.reps,
        pool_size: res.pool_size,
        calibration_size: res.calibration_size,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDecomposition {
    /// `E₀[ψ_λ (s_h + s_z)]`, the shift of the estimator.
    pub total_bias: McEstimate,
    /// `E₀[φ_c s_h]`, the shift of the target.
    pub target_shift: McEstimate,
    /// `total − target = E₀[ψ_λ s_z] − λ'E₀[φ_γ s_h]`.
    pub net_bias: McEstimate,
    pub psi_sz: McEstimate,
    pub phi_gamma_sh: Vec<McEstimate>,
}

pub fn bias_decomposition_check(
    calib: &Calibration,
    s_h: &MisspecScore,
    s_z: &MisspecScore,
    lambda: &[f64],
) -> Result<BiasDecomposition> {
    let p = calib.influence.dim() - 1;
    if lambda.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: lambda.len(),
        });
    }
    let h = calib.score_values(s_h);
    let z = calib.score_values(s_z);
    let psi = calib.psi(lambda);
    let phi_c = calib.influence.column(0);
    let total: Vec<f64> = psi.iter().zip(h.iter().zip(&z)).map(|(p, (a, b))| p * (a + b)).collect();
    let target: Vec<f64> = phi_c.iter().zip(&h).map(|(f, a)| f * a).collect();
    let net: Vec<f64> = total.iter().zip(&target).map(|(t, s)| t - s).collect();
    Ok(BiasDecomposition {
        total_bias: calib.expectation(&total),
        target_shift: calib.expectation(&target),
        net_bias: calib.expectation(&net),
        psi_sz: calib.inner(&psi, &z),
        phi_gamma_sh: (1..=p)
            .map(|j| calib.inner(&calib.influence.column(j), &h))
            .collect(),
    })
}

/// Closed-form `μ‖ψ_λ‖` for comparison with measured worst-case bias.
pub fn predicted_worst_case(sigma: &JointCovariance, lambda: &[f64], mu: f64) -> Result<f64> {
    let b = model::misspec_bounds(sigma, mu, &[lambda.to_vec()])?;
    Ok(b.worst_case_bias_at[0].worst_case_bias)
}
