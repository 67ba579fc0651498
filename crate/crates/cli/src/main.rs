use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use residualize::design::DesignSpec;
use residualize::exec;
use residualize::io::{
    self, AnalyzeConfig, CovarianceMode, MisspecSpec, ReportFormat, SelectionSpec,
    SimulateConfig, SimulateOverrides,
};
use residualize::selection::{self, RuleSigma, RuleSpec};
use residualize::{Error, Result};

#[derive(Parser)]
#[command(name = "resid", version, about = "Residualized estimation against robustness checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutputArgs {
    /// Write to this file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// json, csv or text.
    #[arg(long, default_value = "json", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Residualize the treatment effect estimate in an experiment CSV.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "y")]
        outcome: String,
        #[arg(long, default_value = "t")]
        treatment: String,
        /// Comma-separated; defaults to every unassigned column.
        #[arg(long, value_delimiter = ',')]
        covariates: Option<Vec<String>>,
        /// Use cluster-robust covariance grouped by this column.
        #[arg(long)]
        cluster_col: Option<String>,
        #[arg(long)]
        strata_col: Option<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run a Monte Carlo lab from a JSON config or from flags.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// selection or misspec, when no config file is given.
        #[arg(long)]
        lab: Option<String>,
        /// Correlation of the Gaussian design, when no config file is given.
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// two_sided_t, two_sided_t:j, wald or max_abs.
        #[arg(long, value_parser = parse_rule)]
        rule: Option<RuleSpec>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        mu: Option<f64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Closed-form moments of the estimators given a passed two-sided test.
    Oracle {
        #[arg(long, allow_hyphen_values = true)]
        rho: f64,
        #[arg(long, default_value_t = 1.96)]
        threshold: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Per-covariate contributions to the correction from a saved JSON report.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_rule(s: &str) -> std::result::Result<RuleSpec, String> {
    RuleSpec::parse(s).map_err(|e| e.to_string())
}

fn emit(out: &OutputArgs, text: &str) -> Result<()> {
    match &out.output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn config_from_flags(lab: Option<&str>, rho: f64, o: &SimulateOverrides) -> Result<SimulateConfig> {
    let seed = o
        .seed
        .ok_or_else(|| Error::InvalidConfig("a seed is required".into()))?;
    let design = DesignSpec::Gaussian {
        rho,
        beta_long: residualize::design::DEFAULT_BETA_LONG,
    };
    let missing = |flag: &str| Error::InvalidConfig(format!("--{flag} is required"));
    match lab {
        Some("selection") => Ok(SimulateConfig::Selection(SelectionSpec {
            design,
            rule: o.rule.clone().unwrap_or(RuleSpec::TwoSidedT { index: 0 }),
            threshold: o.threshold.unwrap_or(1.96),
            rule_sigma: RuleSigma::Feasible,
            n: o.n.ok_or_else(|| missing("n"))?,
            reps: o.reps.ok_or_else(|| missing("reps"))?,
            seed,
            alpha: 0.05,
        })),
        Some("misspec") => Ok(SimulateConfig::Misspec(MisspecSpec {
            design,
            mus: vec![o.mu.unwrap_or(1.0)],
            lambdas: None,
            n: o.n.ok_or_else(|| missing("n"))?,
            reps: o.reps.ok_or_else(|| missing("reps"))?,
            seed,
            oversample: residualize::misspec::DEFAULT_OVERSAMPLE,
            calibration_size: residualize::misspec::DEFAULT_CALIBRATION,
        })),
        Some(other) => Err(Error::UnknownLab(other.into())),
        None => Err(Error::InvalidConfig("give --config or --lab".into())),
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = exec::threads_from_env()?;
    match cli.command {
        Command::Analyze {
            input,
            outcome,
            treatment,
            covariates,
            cluster_col,
            strata_col,
            out,
        } => {
            let mut config = AnalyzeConfig::new(input, &outcome, &treatment);
            config.roles.covariates = covariates;
            config.mode = if cluster_col.is_some() {
                CovarianceMode::Cluster
            } else {
                CovarianceMode::Iid
            };
            config.roles.cluster = cluster_col;
            config.roles.strata = strata_col;
            config.output = out.output.clone();
            config.format = out.format;
            let report = io::run_analyze(&config)?;
            emit(&out, &io::render_report(&report, out.format)?)
        }
        Command::Simulate {
            config,
            lab,
            rho,
            n,
            reps,
            seed,
            rule,
            threshold,
            mu,
            out,
        } => {
            let overrides = SimulateOverrides {
                n,
                reps,
                seed,
                rule,
                threshold,
                mu,
            };
            let config = match config {
                Some(path) => {
                    let mut c = SimulateConfig::from_path(&path)?;
                    c.apply(&overrides);
                    c
                }
                None => config_from_flags(lab.as_deref(), rho, &overrides)?,
            };
            let result = exec::with_threads(threads, || io::run_simulate(&config))??;
            emit(&out, &io::render(&result, out.format)?)
        }
        Command::Oracle {
            rho,
            threshold,
            out,
        } => {
            let moments = selection::truncated_oracle(rho, threshold)?;
            emit(&out, &io::render(&moments, out.format)?)
        }
        Command::Decompose { input, out } => {
            let table = io::decompose(&io::read_report(&input)?);
            let text = match out.format {
                ReportFormat::Text => io::decomposition_table_text(&table),
                f => io::render(&table, f)?,
            };
            emit(&out, &text)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", io::error_json(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
