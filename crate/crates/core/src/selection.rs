//! Selective-reporting laboratory.
//!
//! Simulates a design, applies a pass/fail reporting rule to the
//! standardized checks in every replication, and accumulates the conditional
//! behaviour of the short, long and residualized estimators. The
//! closed-form truncated-Gaussian moments serve as the oracle for the
//! one-check case.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{BaseDesign, SampleFit};
use crate::error::{Error, Result};
use crate::exec::{stream_rng, tag, try_replicate};
use crate::stats::{self, batch_estimate, McEstimate, MC_BATCHES};

/// Closed-form moments of a standardized bivariate normal `(Z_S, Z_γ)` with
/// correlation `rho`, conditional on `|Z_γ| ≤ t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedMoments {
    pub rho: f64,
    pub t: f64,
    pub pass_probability: f64,
    pub cond_var_zgamma: f64,
    pub cond_var_zs: f64,
    pub cond_mean_zs: f64,
    /// Residualized estimator's conditional variance, `1 − ρ²`.
    pub cond_var_zr: f64,
}

pub fn truncated_oracle(rho: f64, t: f64) -> Result<TruncatedMoments> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::DomainError(format!("rho = {rho} outside (-1, 1)")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::DomainError(format!("threshold t = {t} must be positive")));
    }
    let mass = 2.0 * stats::norm_cdf(t) - 1.0;
    let var_g = 1.0 - 2.0 * t * stats::norm_pdf(t) / mass;
    let r2 = rho * rho;
    Ok(TruncatedMoments {
        rho,
        t,
        pass_probability: mass,
        cond_var_zgamma: var_g,
        cond_var_zs: (1.0 - r2) + r2 * var_g,
        cond_mean_zs: 0.0,
        cond_var_zr: 1.0 - r2,
    })
}

/// Statistic applied to the checks before thresholding.
#[derive(Clone)]
pub enum RuleKind {
    /// `|t_j|`, the marginal t-statistic of check `j`.
    TwoSidedT(usize),
    /// `T_n'T_n = n γ_hat' Σ_γγ⁻¹ γ_hat`.
    Wald,
    /// `max_j |t_j|`.
    MaxAbs,
    /// Any continuous function of the whitened check `T_n`.
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleKind::TwoSidedT(j) => write!(f, "TwoSidedT({j})"),
            RuleKind::Wald => write!(f, "Wald"),
            RuleKind::MaxAbs => write!(f, "MaxAbs"),
            RuleKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Which covariance standardizes the checks inside the rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSigma {
    /// Per-replication plug-in estimate.
    #[default]
    Feasible,
    /// The design's population covariance.
    Oracle,
}

/// Pass when `q(T_n) ≤ threshold`.
#[derive(Debug, Clone)]
pub struct ReportingRule {
    pub kind: RuleKind,
    pub threshold: f64,
}

impl ReportingRule {
    pub fn new(kind: RuleKind, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::DomainError("rule threshold must be finite".into()));
        }
        if !matches!(kind, RuleKind::Custom(_)) && threshold <= 0.0 {
            // every built-in statistic is non-negative with a continuous law
            return Err(Error::DomainError(format!(
                "threshold {threshold} makes the rule fail with probability one"
            )));
        }
        Ok(Self { kind, threshold })
    }

    /// Pass probability under `T_n ~ N(0, I)`, where it has a closed form.
    pub fn null_pass_probability(&self, p_gamma: usize) -> Option<f64> {
        match self.kind {
            RuleKind::TwoSidedT(_) => Some(2.0 * stats::norm_cdf(self.threshold) - 1.0),
            RuleKind::Wald => Some(stats::chi2_cdf(self.threshold, p_gamma)),
            _ => None,
        }
    }

    /// Statistic value from the whitened check and the marginal t-statistics.
    pub fn statistic(&self, whitened: &[f64], marginal_t: &[f64]) -> f64 {
        match &self.kind {
            RuleKind::TwoSidedT(j) => marginal_t[*j].abs(),
            RuleKind::Wald => whitened.iter().map(|v| v * v).sum(),
            RuleKind::MaxAbs => marginal_t.iter().fold(0.0, |m, v| m.max(v.abs())),
            RuleKind::Custom(q) => q(whitened),
        }
    }

    pub fn passes(&self, whitened: &[f64], marginal_t: &[f64]) -> bool {
        self.statistic(whitened, marginal_t) <= self.threshold
    }

    fn validate_for(&self, p_gamma: usize) -> Result<()> {
        if let RuleKind::TwoSidedT(j) = self.kind {
            if j >= p_gamma {
                return Err(Error::DimensionMismatch {
                    expected: p_gamma,
                    found: j + 1,
                });
            }
        }
        Ok(())
    }
}

/// Serializable rule description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleSpec {
    TwoSidedT {
        #[serde(default)]
        index: usize,
    },
    Wald,
    MaxAbs,
}

impl RuleSpec {
    pub fn build(&self, threshold: f64) -> Result<ReportingRule> {
        let kind = match self {
            RuleSpec::TwoSidedT { index } => RuleKind::TwoSidedT(*index),
            RuleSpec::Wald => RuleKind::Wald,
            RuleSpec::MaxAbs => RuleKind::MaxAbs,
        };
        ReportingRule::new(kind, threshold)
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "two_sided_t" | "t" => Ok(RuleSpec::TwoSidedT { index: 0 }),
            "wald" => Ok(RuleSpec::Wald),
            "max_abs" => Ok(RuleSpec::MaxAbs),
            other => match other.strip_prefix("two_sided_t:") {
                Some(j) => j
                    .parse()
                    .map(|index| RuleSpec::TwoSidedT { index })
                    .map_err(|_| Error::InvalidConfig(format!("bad rule `{other}`"))),
                None => Err(Error::InvalidConfig(format!("unknown rule `{other}`"))),
            },
        }
    }
}

/// One replication's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub pass: bool,
    /// Standardized errors `√n(est − c)/σ_c` for short, long, residualized.
    pub z: [f64; 3],
    /// Whether each nominal interval covers the truth.
    pub covered: [bool; 3],
    /// `√n γ_hat / σ_γ,j` per check (population scale).
    pub z_gamma: Vec<f64>,
}

pub const ESTIMATOR_NAMES: [&str; 3] = ["short", "long", "residualized"];

/// Behaviour of one estimator on one subset of replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: McEstimate,
    pub variance: McEstimate,
    pub coverage: McEstimate,
    pub rejection_rate: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStats {
    pub estimator: String,
    pub unconditional: Moments,
    pub pass: Moments,
    pub fail: Moments,
    /// Difference of conditional variances, pass minus fail (paired batches).
    pub variance_gap: McEstimate,
    /// Correlation across replications with each standardized check.
    pub corr_with_checks: Vec<McEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalStats {
    pub reps: usize,
    pub pass_count: usize,
    pub pass_rate: McEstimate,
    pub fail_rate: f64,
    pub pilot_pass_rate: f64,
    pub nominal_level: f64,
    pub estimators: Vec<EstimatorStats>,
}

impl ConditionalStats {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorStats> {
        self.estimators.iter().find(|e| e.estimator == name)
    }

    pub fn short(&self) -> &EstimatorStats {
        &self.estimators[0]
    }

    pub fn long(&self) -> &EstimatorStats {
        &self.estimators[1]
    }

    pub fn residualized(&self) -> &EstimatorStats {
        &self.estimators[2]
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub rule: ReportingRule,
    pub rule_sigma: RuleSigma,
    /// Nominal non-coverage of the reported intervals.
    pub alpha: f64,
}

pub const MIN_REPS: usize = 1000;
pub const PILOT_REPS: usize = 1000;
pub const PILOT_BOUNDS: (f64, f64) = (0.02, 0.98);

fn whiten(
    fit: &SampleFit,
    oracle: Option<&Cholesky<f64, nalgebra::Dyn>>,
    oracle_diag: &[f64],
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sqrt_n = (n as f64).sqrt();
    let g = DVector::from_column_slice(&fit.gamma_hat) * sqrt_n;
    let (l, diag) = match oracle {
        Some(c) => (c.l(), oracle_diag.to_vec()),
        None => {
            let gg = fit.sigma.sigma_gamma_gamma();
            (
                fit.sigma.check_factor()?,
                (0..gg.nrows()).map(|j| gg[(j, j)]).collect(),
            )
        }
    };
    let whitened = l
        .solve_lower_triangular(&g)
        .ok_or(Error::SingularCheckCovariance { rcond: 0.0 })?;
    let marginal = g.iter().zip(&diag).map(|(v, d)| v / d.sqrt()).collect();
    Ok((whitened.as_slice().to_vec(), marginal))
}

fn one_replication(
    design: &dyn BaseDesign,
    cfg: &ExperimentConfig,
    stream_tag: u64,
    index: usize,
    oracle: Option<&Cholesky<f64, nalgebra::Dyn>>,
    oracle_diag: &[f64],
    sigma_c: f64,
    sigma_gamma: &[f64],
    crit: f64,
) -> Result<ReplicationRecord> {
    let mut rng = stream_rng(cfg.seed, stream_tag, index as u64);
    let sample = design.draw_sample(cfg.n, &mut rng);
    let fit = design.fit(&sample, true)?;
    let (whitened, marginal) = whiten(&fit, oracle, oracle_diag, cfg.n)?;
    let pass = cfg.rule.passes(&whitened, &marginal);

    let n = cfg.n as f64;
    let sqrt_n = n.sqrt();
    let c0 = design.truth();
    let (c_long, var_long) = fit.long.unwrap_or((f64::NAN, f64::NAN));
    let est = [fit.c_short, c_long, fit.c_resid()];
    let se = [
        (fit.sigma.sigma_c_sq() / n).sqrt(),
        (var_long / n).sqrt(),
        fit.sigma.se_residualized()?,
    ];
    let mut z = [0.0; 3];
    let mut covered = [false; 3];
    for k in 0..3 {
        z[k] = sqrt_n * (est[k] - c0) / sigma_c;
        covered[k] = (est[k] - c0).abs() <= crit * se[k];
    }
    let z_gamma = fit
        .gamma_hat
        .iter()
        .zip(sigma_gamma)
        .map(|(g, s)| sqrt_n * g / s)
        .collect();
    Ok(ReplicationRecord {
        pass,
        z,
        covered,
        z_gamma,
    })
}

/// Simulate all replications and return the raw records (index order).
pub fn simulate_records(
    design: &dyn BaseDesign,
    cfg: &ExperimentConfig,
    stream_tag: u64,
    reps: usize,
) -> Result<Vec<ReplicationRecord>> {
    cfg.rule.validate_for(design.p_gamma())?;
    let pop = design.population();
    let gg = pop.sigma_gamma_gamma().clone();
    let oracle_diag: Vec<f64> = (0..gg.nrows()).map(|j| gg[(j, j)]).collect();
    let oracle = match cfg.rule_sigma {
        RuleSigma::Oracle => Some(
            Cholesky::new(gg.clone()).ok_or(Error::SingularCheckCovariance { rcond: 0.0 })?,
        ),
        RuleSigma::Feasible => None,
    };
    let sigma_c = pop.sigma_c_sq().sqrt();
    let sigma_gamma: Vec<f64> = oracle_diag.iter().map(|v| v.sqrt()).collect();
    let crit = stats::z_crit(cfg.alpha);
    try_replicate(reps, |i| {
        one_replication(
            design,
            cfg,
            stream_tag,
            i,
            oracle.as_ref(),
            &oracle_diag,
            sigma_c,
            &sigma_gamma,
            crit,
        )
    })
}

/// Pass rate of the rule on a pilot of [`PILOT_REPS`] replications drawn
/// from a stream separate from the main run.
pub fn pilot_pass_rate(design: &dyn BaseDesign, cfg: &ExperimentConfig) -> Result<f64> {
    let pilot = simulate_records(design, cfg, tag::PILOT, PILOT_REPS)?;
    Ok(pilot.iter().filter(|r| r.pass).count() as f64 / pilot.len() as f64)
}

pub fn run_conditional_experiment(
    design: &dyn BaseDesign,
    cfg: &ExperimentConfig,
) -> Result<ConditionalStats> {
    if cfg.reps < MIN_REPS {
        return Err(Error::InvalidConfig(format!(
            "reps = {} is below the minimum of {MIN_REPS}",
            cfg.reps
        )));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidConfig("alpha must lie in (0, 1)".into()));
    }
    let pilot = pilot_pass_rate(design, cfg)?;
    if !(PILOT_BOUNDS.0..=PILOT_BOUNDS.1).contains(&pilot) {
        return Err(Error::DegenerateRule { pass_rate: pilot });
    }
    let records = simulate_records(design, cfg, tag::REPLICATION, cfg.reps)?;
    Ok(summarize(&records, pilot, cfg.alpha))
}

fn moments(records: &[ReplicationRecord], k: usize, keep: impl Fn(&ReplicationRecord) -> bool + Copy) -> Moments {
    let zs = move |r: &[ReplicationRecord]| -> Vec<f64> {
        r.iter().filter(|x| keep(x)).map(|x| x.z[k]).collect()
    };
    let mean = batch_estimate(records, MC_BATCHES, |r| {
        let v = zs(r);
        (!v.is_empty()).then(|| stats::mean(&v))
    });
    let variance = batch_estimate(records, MC_BATCHES, |r| {
        let v = zs(r);
        (v.len() >= 2).then(|| stats::variance(&v))
    });
    let coverage = batch_estimate(records, MC_BATCHES, |r| {
        let sel: Vec<bool> = r.iter().filter(|x| keep(x)).map(|x| x.covered[k]).collect();
        (!sel.is_empty()).then(|| sel.iter().filter(|c| **c).count() as f64 / sel.len() as f64)
    });
    Moments {
        count: records.iter().filter(|x| keep(x)).count(),
        mean,
        variance,
        rejection_rate: McEstimate {
            value: 1.0 - coverage.value,
            mc_se: coverage.mc_se,
        },
        coverage,
    }
}

/// Accumulate conditional statistics from replication records.
pub fn summarize(records: &[ReplicationRecord], pilot_pass_rate: f64, alpha: f64) -> ConditionalStats {
    let reps = records.len();
    let pass_count = records.iter().filter(|r| r.pass).count();
    let pass_rate = batch_estimate(records, MC_BATCHES, |r| {
        Some(r.iter().filter(|x| x.pass).count() as f64 / r.len() as f64)
    });
    let p_gamma = records.first().map_or(0, |r| r.z_gamma.len());
    let estimators = (0..3)
        .map(|k| {
            let cond_var = |r: &[ReplicationRecord], want: bool| -> Option<f64> {
                let v: Vec<f64> = r.iter().filter(|x| x.pass == want).map(|x| x.z[k]).collect();
                (v.len() >= 2).then(|| stats::variance(&v))
            };
            EstimatorStats {
                estimator: ESTIMATOR_NAMES[k].to_string(),
                unconditional: moments(records, k, |_| true),
                pass: moments(records, k, |r| r.pass),
                fail: moments(records, k, |r| !r.pass),
                variance_gap: stats::batch_difference(
                    records,
                    MC_BATCHES,
                    |r| cond_var(r, true),
                    |r| cond_var(r, false),
                ),
                corr_with_checks: (0..p_gamma)
                    .map(|j| {
                        batch_estimate(records, MC_BATCHES, |r| {
                            let a: Vec<f64> = r.iter().map(|x| x.z[k]).collect();
                            let b: Vec<f64> = r.iter().map(|x| x.z_gamma[j]).collect();
                            Some(stats::correlation(&a, &b))
                        })
                    })
                    .collect(),
            }
        })
        .collect();
    ConditionalStats {
        reps,
        pass_count,
        fail_rate: 1.0 - pass_rate.value,
        pass_rate,
        pilot_pass_rate,
        nominal_level: 1.0 - alpha,
        estimators,
    }
}

/// Flat CSV rendering: one row per estimator and subset.
pub fn to_csv(stats: &ConditionalStats) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "estimator",
        "subset",
        "count",
        "mean",
        "mean_se",
        "variance",
        "variance_se",
        "coverage",
        "coverage_se",
        "rejection_rate",
        "rejection_rate_se",
    ])?;
    for e in &stats.estimators {
        for (subset, m) in [
            ("all", &e.unconditional),
            ("pass", &e.pass),
            ("fail", &e.fail),
        ] {
            w.write_record([
                e.estimator.clone(),
                subset.to_string(),
                m.count.to_string(),
                m.mean.value.to_string(),
                m.mean.mc_se.to_string(),
                m.variance.value.to_string(),
                m.variance.mc_se.to_string(),
                m.coverage.value.to_string(),
                m.coverage.mc_se.to_string(),
                m.rejection_rate.value.to_string(),
                m.rejection_rate.mc_se.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
