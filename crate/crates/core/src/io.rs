//! File-level workflows: CSV ingestion, analysis reports, simulation configs
//! and report rendering.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::misspec::{self, Calibration, MinimaxReport, MisspecConfig};
use crate::model::{self, ResidualizationResult, DEFAULT_FLAG_THRESHOLD};
use crate::rct::{self, RctDataset};
use crate::selection::{
    self, ConditionalStats, ExperimentConfig, RuleKind, RuleSigma, RuleSpec, TruncatedMoments,
};
use crate::stats::{self, fmt_sig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    #[default]
    Iid,
    Cluster,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
    Text,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "text" => Ok(Self::Text),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub outcome: String,
    pub treatment: String,
    /// `None` takes every column not assigned another role.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub cluster: Option<String>,
    #[serde(default)]
    pub strata: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub input: PathBuf,
    pub roles: ColumnRoles,
    #[serde(default)]
    pub mode: CovarianceMode,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: ReportFormat,
}

impl AnalyzeConfig {
    pub fn new(input: impl Into<PathBuf>, outcome: &str, treatment: &str) -> Self {
        Self {
            input: input.into(),
            roles: ColumnRoles {
                outcome: outcome.into(),
                treatment: treatment.into(),
                covariates: None,
                cluster: None,
                strata: None,
            },
            mode: CovarianceMode::Iid,
            output: None,
            format: ReportFormat::Json,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.roles;
        if let Some(c) = &r.covariates {
            if c.is_empty() {
                return Err(Error::InvalidConfig("covariate list is empty".into()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        let named = [Some(&r.outcome), Some(&r.treatment), r.cluster.as_ref(), r.strata.as_ref()];
        for name in named.into_iter().flatten().chain(r.covariates.iter().flatten()) {
            if !seen.insert(name) {
                return Err(Error::InvalidConfig(format!(
                    "column `{name}` is assigned more than one role"
                )));
            }
        }
        match (self.mode, &r.cluster) {
            (CovarianceMode::Cluster, None) => Err(Error::InvalidConfig(
                "cluster mode needs a cluster column".into(),
            )),
            (CovarianceMode::Iid, Some(_)) => Err(Error::InvalidConfig(
                "a cluster column was given but the mode is iid".into(),
            )),
            _ => Ok(()),
        }
    }
}

fn intern(labels: Vec<String>) -> Vec<usize> {
    let mut map = HashMap::new();
    labels
        .into_iter()
        .map(|l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonFiniteValue {
            row,
            column: column.into(),
            value: raw.into(),
        }),
    }
}

/// Read the configured columns. Row numbers in errors count data rows from 1.
pub fn load_dataset(config: &AnalyzeConfig) -> Result<RctDataset> {
    config.validate()?;
    let mut text = String::new();
    File::open(&config.input)?.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let r = &config.roles;
    let y_col = col(&r.outcome)?;
    let t_col = col(&r.treatment)?;
    let cluster_col = r.cluster.as_deref().map(col).transpose()?;
    let strata_col = r.strata.as_deref().map(col).transpose()?;
    let covariates: Vec<String> = match &r.covariates {
        Some(c) => c.clone(),
        None => {
            let taken = [Some(&r.outcome), Some(&r.treatment), r.cluster.as_ref(), r.strata.as_ref()];
            header
                .iter()
                .filter(|h| !taken.iter().flatten().any(|t| t == h))
                .cloned()
                .collect()
        }
    };
    if covariates.is_empty() {
        return Err(Error::InvalidConfig("no covariate columns".into()));
    }
    let x_cols = covariates.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;

    let (mut y, mut t, mut x) = (Vec::new(), Vec::new(), Vec::new());
    let (mut clusters, mut strata) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |j: usize| record.get(j).unwrap_or("");
        y.push(parse_number(field(y_col), row, &r.outcome)?);
        let raw_t = field(t_col);
        t.push(match raw_t.trim().parse::<f64>() {
            Ok(v) if v == 1.0 => true,
            Ok(v) if v == 0.0 => false,
            _ => {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: raw_t.into(),
                })
            }
        });
        for (&j, name) in x_cols.iter().zip(&covariates) {
            x.push(parse_number(field(j), row, name)?);
        }
        if let Some(j) = cluster_col {
            clusters.push(field(j).trim().to_string());
        }
        if let Some(j) = strata_col {
            strata.push(field(j).trim().to_string());
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyFile);
    }
    let n = y.len();
    let x = DMatrix::from_row_slice(n, covariates.len(), &x);
    let mut data = RctDataset::with_names(y, t, x, covariates)?;
    if cluster_col.is_some() {
        data = data.with_clusters(intern(clusters))?;
    }
    if strata_col.is_some() {
        data = data.with_strata(intern(strata))?;
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimator: String,
    pub estimate: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl EstimateRow {
    fn new(estimator: &str, estimate: f64, se: f64) -> Self {
        let t = estimate / se;
        let z = stats::z_crit(0.05);
        Self {
            estimator: estimator.into(),
            estimate,
            se,
            t_stat: t,
            p_value: stats::two_sided_p(t),
            ci_low: estimate - z * se,
            ci_high: estimate + z * se,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsPanel {
    pub informativeness: f64,
    pub bias_reduction_factor: f64,
    pub variance_reduction_pct: f64,
    pub correction: f64,
    pub equiv_sample_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub covariate: String,
    pub lambda: f64,
    pub gamma: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityPanel {
    pub wald_stat: f64,
    pub dof: usize,
    pub wald_p_value: f64,
    pub sigma_c_gamma_norm: f64,
    pub flag: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualizationReport {
    pub n: usize,
    pub p_gamma: usize,
    pub covariance: CovarianceMode,
    pub clusters: Option<usize>,
    pub estimates: Vec<EstimateRow>,
    pub diagnostics: DiagnosticsPanel,
    pub decomposition: Vec<DecompositionRow>,
    pub orthogonality: OrthogonalityPanel,
}

impl ResidualizationReport {
    pub fn estimate(&self, name: &str) -> Option<&EstimateRow> {
        self.estimates.iter().find(|e| e.estimator == name)
    }
}

pub fn analyze_dataset(data: &RctDataset, mode: CovarianceMode) -> Result<ResidualizationReport> {
    let triple = rct::residualized_estimator(data)?;
    let sigma = &triple.sigma;
    let res = ResidualizationResult::compute(sigma, triple.c_short, &triple.gamma_hat)?;
    let diag = model::diagnostics(sigma)?;
    let orth = model::orthogonality_stat(sigma, triple.c_short, &triple.gamma_hat, DEFAULT_FLAG_THRESHOLD)?;
    let n = data.n();
    let estimates = vec![
        EstimateRow::new("original", res.c_hat, res.se_c),
        EstimateRow::new("residualized", res.c_r, res.se_r),
        EstimateRow::new("long", triple.c_long, (triple.long_variance / n as f64).sqrt()),
    ];
    let decomposition = data
        .covariate_names()
        .iter()
        .zip(&res.lambda)
        .zip(&res.gamma_hat)
        .zip(&res.decomposition)
        .map(|(((name, l), g), c)| DecompositionRow {
            covariate: name.clone(),
            lambda: *l,
            gamma: *g,
            contribution: *c,
        })
        .collect();
    let clusters = data.clusters().map(|c| {
        let mut ids = c.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    });
    Ok(ResidualizationReport {
        n,
        p_gamma: data.p_gamma(),
        covariance: mode,
        clusters,
        estimates,
        diagnostics: DiagnosticsPanel {
            informativeness: diag.informativeness,
            bias_reduction_factor: diag.bias_reduction_factor,
            variance_reduction_pct: diag.variance_reduction_pct,
            correction: res.correction,
            equiv_sample_increase: diag.equiv_sample_increase,
        },
        decomposition,
        orthogonality: OrthogonalityPanel {
            wald_stat: orth.wald_stat,
            dof: orth.dof,
            wald_p_value: orth.wald_p_value,
            sigma_c_gamma_norm: orth.sigma_c_gamma_norm,
            flag: orth.flag,
            note: orth.note,
        },
    })
}

pub fn run_analyze(config: &AnalyzeConfig) -> Result<ResidualizationReport> {
    let data = load_dataset(config)?;
    analyze_dataset(&data, config.mode)
}

/// Per-covariate contributions recovered from a saved report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTable {
    pub rows: Vec<DecompositionRow>,
    pub total: f64,
    pub correction: f64,
    pub original: f64,
    pub residualized: f64,
}

pub fn decompose(report: &ResidualizationReport) -> DecompositionTable {
    let total = stats::sum(report.decomposition.iter().map(|r| r.lambda * r.gamma));
    let est = |name| report.estimate(name).map_or(f64::NAN, |e| e.estimate);
    DecompositionTable {
        rows: report.decomposition.clone(),
        total,
        correction: report.diagnostics.correction,
        original: est("original"),
        residualized: est("residualized"),
    }
}

pub fn read_report(path: &Path) -> Result<ResidualizationReport> {
    let text = std::fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(serde_json::from_str(&text)?)
}

pub const MIN_SIM_N: usize = 50;
pub const MIN_SIM_REPS: usize = 1000;

fn default_alpha() -> f64 {
    0.05
}

fn default_mus() -> Vec<f64> {
    vec![1.0]
}

fn default_oversample() -> usize {
    misspec::DEFAULT_OVERSAMPLE
}

fn default_calibration() -> usize {
    misspec::DEFAULT_CALIBRATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    pub design: DesignSpec,
    pub rule: RuleSpec,
    pub threshold: f64,
    #[serde(default)]
    pub rule_sigma: RuleSigma,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLambda {
    pub label: String,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisspecSpec {
    pub design: DesignSpec,
    #[serde(default = "default_mus")]
    pub mus: Vec<f64>,
    /// Coefficient grid; the default is `{0, Λ/2, Λ, 2Λ, β_L}`.
    #[serde(default)]
    pub lambdas: Option<Vec<NamedLambda>>,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default = "default_calibration")]
    pub calibration_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "lab", rename_all = "snake_case")]
pub enum SimulateConfig {
    Selection(SelectionSpec),
    Misspec(MisspecSpec),
}

/// Command-line values that replace those in a config file.
#[derive(Debug, Clone, Default)]
pub struct SimulateOverrides {
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub rule: Option<RuleSpec>,
    pub threshold: Option<f64>,
    pub mu: Option<f64>,
}

impl SimulateConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        match v.get("lab") {
            Some(Value::String(lab)) if lab == "selection" || lab == "misspec" => {}
            Some(Value::String(lab)) => return Err(Error::UnknownLab(lab.clone())),
            Some(_) => return Err(Error::InvalidConfig("`lab` must be a string".into())),
            None => return Err(Error::InvalidConfig("missing `lab`".into())),
        }
        serde_json::from_value(v).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim().is_empty() {
            return Err(Error::EmptyFile);
        }
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &SimulateOverrides) {
        match self {
            SimulateConfig::Selection(s) => {
                s.n = o.n.unwrap_or(s.n);
                s.reps = o.reps.unwrap_or(s.reps);
                s.seed = o.seed.unwrap_or(s.seed);
                s.threshold = o.threshold.unwrap_or(s.threshold);
                if let Some(r) = &o.rule {
                    s.rule = r.clone();
                }
            }
            SimulateConfig::Misspec(m) => {
                m.n = o.n.unwrap_or(m.n);
                m.reps = o.reps.unwrap_or(m.reps);
                m.seed = o.seed.unwrap_or(m.seed);
                if let Some(mu) = o.mu {
                    m.mus = vec![mu];
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, reps) = match self {
            SimulateConfig::Selection(s) => (s.n, s.reps),
            SimulateConfig::Misspec(m) => (m.n, m.reps),
        };
        if n < MIN_SIM_N {
            return Err(Error::InvalidConfig(format!("n = {n} is below {MIN_SIM_N}")));
        }
        if reps < MIN_SIM_REPS {
            return Err(Error::InvalidConfig(format!(
                "reps = {reps} is below {MIN_SIM_REPS}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutput {
    pub stats: ConditionalStats,
    /// Closed-form comparison values when there is a single check.
    pub oracle: Option<TruncatedMoments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "lab", rename_all = "snake_case")]
pub enum LabOutput {
    Selection(SelectionOutput),
    Misspec(MinimaxReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateOutput {
    pub config: SimulateConfig,
    pub result: LabOutput,
}

fn selection_oracle(spec: &SelectionSpec, rule: &RuleKind, sigma: &model::JointCovariance) -> Option<TruncatedMoments> {
    if sigma.p_gamma() != 1 {
        return None;
    }
    let t = match rule {
        RuleKind::TwoSidedT(_) | RuleKind::MaxAbs => spec.threshold,
        RuleKind::Wald => spec.threshold.sqrt(),
        RuleKind::Custom(_) => return None,
    };
    let rho = sigma.sigma_c_gamma()[0]
        / (sigma.sigma_c_sq() * sigma.sigma_gamma_gamma()[(0, 0)]).sqrt();
    selection::truncated_oracle(rho, t).ok()
}

pub fn run_simulate(config: &SimulateConfig) -> Result<SimulateOutput> {
    config.validate()?;
    let result = match config {
        SimulateConfig::Selection(s) => {
            let design = s.design.build()?;
            let rule = s.rule.build(s.threshold)?;
            let cfg = ExperimentConfig {
                n: s.n,
                reps: s.reps,
                seed: s.seed,
                rule: rule.clone(),
                rule_sigma: s.rule_sigma,
                alpha: s.alpha,
            };
            let stats = selection::run_conditional_experiment(design.as_base(), &cfg)?;
            let oracle = selection_oracle(s, &rule.kind, &design.as_base().population());
            LabOutput::Selection(SelectionOutput { stats, oracle })
        }
        SimulateConfig::Misspec(m) => {
            let design = m.design.build()?;
            let base = design.as_base();
            let calib = Calibration::draw(base, m.calibration_size, m.seed)?;
            let grid = match &m.lambdas {
                Some(ls) => ls.iter().map(|l| (l.label.clone(), l.lambda.clone())).collect(),
                None => misspec::default_lambda_grid(base),
            };
            let cfg = MisspecConfig {
                oversample: m.oversample,
                ..MisspecConfig::new(m.n, m.reps, m.seed)
            };
            LabOutput::Misspec(misspec::minimax_grid(base, &calib, &m.mus, &grid, &cfg)?)
        }
    };
    Ok(SimulateOutput {
        config: config.clone(),
        result,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                flatten(&key(k), x, out);
            }
        }
        Value::Array(items) => {
            for (i, x) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), x, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn scalar_text(v: &Value, sig: bool) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(x) if sig && !x.is_i64() && !x.is_u64() => {
            fmt_sig(x.as_f64().unwrap_or(f64::NAN), 6)
        }
        other => other.to_string(),
    }
}

/// `key,value` rows with dotted keys.
pub fn to_flat_csv<T: Serialize>(value: &T) -> Result<String> {
    let mut rows = Vec::new();
    flatten("", &serde_json::to_value(value)?, &mut rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["key", "value"])?;
    for (k, v) in rows {
        w.write_record([k, scalar_text(&v, false)])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `key = value` lines, six significant digits.
pub fn to_flat_text<T: Serialize>(value: &T) -> Result<String> {
    let mut rows = Vec::new();
    flatten("", &serde_json::to_value(value)?, &mut rows);
    Ok(rows
        .into_iter()
        .map(|(k, v)| format!("{k} = {}\n", scalar_text(&v, true)))
        .collect())
}

pub fn report_text(r: &ResidualizationReport) -> String {
    let f = |x: f64| fmt_sig(x, 6);
    let mut s = String::new();
    s.push_str(&format!(
        "n = {}, checks = {}, covariance = {}\n\n",
        r.n,
        r.p_gamma,
        match r.covariance {
            CovarianceMode::Iid => "iid".to_string(),
            CovarianceMode::Cluster => format!("cluster ({} groups)", r.clusters.unwrap_or(0)),
        }
    ));
    s.push_str("Estimates\n");
    s.push_str(&format!(
        "{:<14}{:>14}{:>14}{:>14}{:>14}{:>14}{:>14}\n",
        "estimator", "estimate", "se", "t", "p", "ci_low", "ci_high"
    ));
    for e in &r.estimates {
        s.push_str(&format!(
            "{:<14}{:>14}{:>14}{:>14}{:>14}{:>14}{:>14}\n",
            e.estimator,
            f(e.estimate),
            f(e.se),
            f(e.t_stat),
            f(e.p_value),
            f(e.ci_low),
            f(e.ci_high)
        ));
    }
    let d = &r.diagnostics;
    s.push_str("\nDiagnostics\n");
    s.push_str(&format!("informativeness          {}\n", f(d.informativeness)));
    s.push_str(&format!("bias reduction factor    {}\n", f(d.bias_reduction_factor)));
    s.push_str(&format!("variance reduction (%)   {}\n", f(d.variance_reduction_pct)));
    s.push_str(&format!("correction               {}\n", f(d.correction)));
    s.push_str(&format!("equiv. sample increase   {}\n", f(d.equiv_sample_increase)));
    s.push('\n');
    s.push_str(&decomposition_text(&r.decomposition));
    let o = &r.orthogonality;
    s.push_str(&format!(
        "\nOrthogonality\nwald = {} (dof {}), p = {}, |Sigma_c_gamma| = {}, flag = {}\n",
        f(o.wald_stat),
        o.dof,
        f(o.wald_p_value),
        f(o.sigma_c_gamma_norm),
        o.flag
    ));
    if let Some(note) = &o.note {
        s.push_str(&format!("note: {note}\n"));
    }
    s
}

fn decomposition_text(rows: &[DecompositionRow]) -> String {
    let f = |x: f64| fmt_sig(x, 6);
    let width = rows.iter().map(|r| r.covariate.len()).max().unwrap_or(0).max(9) + 2;
    let mut s = format!(
        "{:<width$}{:>14}{:>14}{:>14}\n",
        "covariate", "lambda", "gamma", "contribution"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<width$}{:>14}{:>14}{:>14}\n",
            r.covariate,
            f(r.lambda),
            f(r.gamma),
            f(r.contribution)
        ));
    }
    s
}

pub fn decomposition_table_text(t: &DecompositionTable) -> String {
    let f = |x: f64| fmt_sig(x, 6);
    let mut s = decomposition_text(&t.rows);
    s.push_str(&format!(
        "\ntotal = {}, reported correction = {}\noriginal = {}, residualized = {}\n",
        f(t.total),
        f(t.correction),
        f(t.original),
        f(t.residualized)
    ));
    s
}

pub fn render_report(r: &ResidualizationReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => to_json(r),
        ReportFormat::Csv => to_flat_csv(r),
        ReportFormat::Text => Ok(report_text(r)),
    }
}

pub fn render<T: Serialize>(value: &T, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => to_json(value),
        ReportFormat::Csv => to_flat_csv(value),
        ReportFormat::Text => to_flat_text(value),
    }
}

/// Machine-readable error object written to stderr by the binary.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    })
    .to_string()
}
