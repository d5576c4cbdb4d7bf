use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use modalmix::bma::{
    coverage_diagnostic, empirical_allocation_posterior, renormalized_allocation_posterior,
    AllocationPosterior, DEFAULT_COVERAGE_THRESHOLD,
};
use modalmix::engine::QuadratureConfig;
use modalmix::sampler::{enumerate_exact, run_modal_gibbs, SamplerConfig};
use modalmix::select::{analyze_trace, select_k, ModelComparisonReport};
use modalmix::{Family, Observations, PoissonPriorKind, PriorSpec};

use crate::data::{builtin, load_csv, write_csv};
use crate::error::CliError;
use crate::report::{write_densities, DiagnoseReport, OracleReport, Report, SamplerEcho};
use crate::simulate::{simulate, SimSpec};

/// Largest K accepted on the command line.
pub const MAX_K: usize = 10;
/// Largest n accepted by the oracle command.
pub const ORACLE_MAX_N: usize = 12;

#[derive(Debug, Parser)]
#[command(name = "mixctl", version, about = "Finite mixture fitting by modal Gibbs sampling over allocations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one K and report evidences and averaged summaries
    Fit(RunArgs),
    /// Fit a range of K and compare them
    Select(RunArgs),
    /// Compare the frequency and renormalized allocation posteriors at one K
    Diagnose(RunArgs),
    /// Check a small dataset against exact enumeration
    Oracle(RunArgs),
    /// Generate a synthetic mixture sample
    Simulate(SimArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoissonPriorArg {
    Gamma,
    Lognormal,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// CSV file with a column named "y"
    #[arg(long, conflicts_with = "builtin")]
    pub data: Option<PathBuf>,
    /// Packaged dataset: galaxies or earthquakes
    #[arg(long)]
    pub builtin: Option<String>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// One precision shared by all Gaussian components
    #[arg(long)]
    pub shared_precision: bool,
    #[arg(long, value_enum)]
    pub poisson_prior: Option<PoissonPriorArg>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Symmetric Dirichlet concentration
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 200)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 10_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory (created if missing)
    #[arg(long, default_value = "mixctl-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// Comma-separated component means (Poisson rates)
    #[arg(long, value_delimiter = ',', required = true)]
    pub means: Vec<f64>,
    /// Comma-separated precisions (Gaussian only)
    #[arg(long, value_delimiter = ',')]
    pub precisions: Vec<f64>,
    /// Comma-separated component sizes
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolved inputs for a fitting command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub label: String,
    pub observations: Observations,
    pub family: Family,
    pub priors: PriorSpec,
    pub k_range: Vec<usize>,
    pub sampler: SamplerConfig,
    pub quadrature: QuadratureConfig,
    pub out: PathBuf,
}

impl RunArgs {
    pub fn resolve(&self, command: &str) -> Result<RunConfig, CliError> {
        let (label, values, default_family) = match (&self.data, &self.builtin) {
            (Some(path), None) => (path.display().to_string(), load_csv(path)?, None),
            (None, Some(name)) => {
                let b = builtin(name)?;
                (b.name.to_string(), b.values, Some(b.default_family))
            }
            _ => return Err(CliError::Config("exactly one of --data or --builtin is required".into())),
        };
        let family = match self.family {
            Some(FamilyArg::Gaussian) => Family::Gaussian { shared_precision: self.shared_precision },
            Some(FamilyArg::Poisson) => Family::Poisson {
                prior: match self.poisson_prior.unwrap_or(PoissonPriorArg::Lognormal) {
                    PoissonPriorArg::Gamma => PoissonPriorKind::GammaConjugate,
                    PoissonPriorArg::Lognormal => PoissonPriorKind::LogNormal,
                },
            },
            None => default_family.ok_or_else(|| CliError::Config("--family is required with --data".into()))?,
        };
        if self.shared_precision && !family.is_gaussian() {
            return Err(CliError::Config("--shared-precision applies to the Gaussian family only".into()));
        }
        if self.poisson_prior.is_some() && family.is_gaussian() {
            return Err(CliError::Config("--poisson-prior applies to the Poisson family only".into()));
        }
        let k_range = self.k_range(command)?;
        let observations = Observations::new(values, &family)?;
        let mut priors = PriorSpec::new(1);
        priors.alpha = vec![self.alpha];
        priors.validate(&family)?;
        let sampler = SamplerConfig {
            burn_in: self.burn_in,
            iterations: self.iters,
            thin: self.thin,
            seed: self.seed,
            ..Default::default()
        };
        sampler.validate()?;
        Ok(RunConfig {
            label,
            observations,
            family,
            priors,
            k_range,
            sampler,
            quadrature: QuadratureConfig::default(),
            out: self.out.clone(),
        })
    }

    fn k_range(&self, command: &str) -> Result<Vec<usize>, CliError> {
        let range: Vec<usize> = match (self.k, self.k_min, self.k_max) {
            (Some(k), None, None) => vec![k],
            (Some(_), _, _) => return Err(CliError::Config("use either --k or --k-min/--k-max".into())),
            (None, lo, hi) if command == "select" => (lo.unwrap_or(1)..=hi.unwrap_or(4)).collect(),
            (None, _, _) => return Err(CliError::Config(format!("{command} needs --k"))),
        };
        if range.is_empty() || range.iter().any(|&k| k == 0 || k > MAX_K) {
            return Err(CliError::Config(format!("K must lie in 1..={MAX_K}")));
        }
        Ok(range)
    }
}

fn priors_for(base: &PriorSpec, k: usize) -> Result<PriorSpec, CliError> {
    Ok(base.for_components(k)?)
}

fn base_report(cfg: &RunConfig, command: &str, cmp: Option<&ModelComparisonReport>) -> Report {
    Report {
        command: command.to_string(),
        data: cfg.label.clone(),
        n: cfg.observations.len(),
        family: cfg.family,
        seed: cfg.sampler.seed,
        sampler: SamplerEcho {
            burn_in: cfg.sampler.burn_in,
            iterations: cfg.sampler.iterations,
            thin: cfg.sampler.thin,
        },
        models: cmp.map(Report::models_from).unwrap_or_default(),
        diagnostic: None,
        oracle: None,
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::Io(format!("{}: {e}", cfg.out.display())))
}

fn compare(cfg: &RunConfig) -> Result<ModelComparisonReport, CliError> {
    Ok(select_k(&cfg.observations, &cfg.family, &cfg.priors, &cfg.k_range, &cfg.sampler, &cfg.quadrature)?)
}

/// `fit` and `select`: evidences, model probabilities, averaged summaries
/// and density files for every K.
pub fn cmd_select(cfg: &RunConfig, command: &str) -> Result<Report, CliError> {
    prepare_out(cfg)?;
    let cmp = compare(cfg)?;
    for row in &cmp.rows {
        write_densities(&cfg.out, row)?;
    }
    let report = base_report(cfg, command, Some(&cmp));
    report.write_json(&cfg.out)?;
    Ok(report)
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<Report, CliError> {
    cmd_select(cfg, "fit")
}

/// Coverage diagnostic at a single K.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<Report, CliError> {
    prepare_out(cfg)?;
    let cmp = compare(cfg)?;
    let row = &cmp.rows[0];
    let max_abs_log_ratio = row
        .diagnostic
        .log_ratios
        .values()
        .flatten()
        .map(|r| r.abs())
        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
    let mut report = base_report(cfg, "diagnose", Some(&cmp));
    report.diagnostic = Some(DiagnoseReport {
        k: row.k,
        tv_distance: row.diagnostic.tv_distance,
        threshold: row.diagnostic.threshold,
        flagged: row.diagnostic.flagged,
        chib_g_minus_i: row.log_evidence_chib_g - row.log_evidence_i,
        max_abs_log_ratio,
    });
    report.write_json(&cfg.out)?;
    Ok(report)
}

fn tv_against_exact(post: &AllocationPosterior, exact: &AllocationPosterior) -> f64 {
    coverage_diagnostic(post, exact, DEFAULT_COVERAGE_THRESHOLD).tv_distance
}

/// Runs modal Gibbs at one K and compares both allocation posterior
/// estimates with exact enumeration.
pub fn cmd_oracle(cfg: &RunConfig) -> Result<Report, CliError> {
    let n = cfg.observations.len();
    if n > ORACLE_MAX_N {
        return Err(CliError::Config(format!("oracle needs n <= {ORACLE_MAX_N}, got {n}")));
    }
    prepare_out(cfg)?;
    let k = cfg.k_range[0];
    let priors = priors_for(&cfg.priors, k)?;
    let y = &cfg.observations;
    let exact = enumerate_exact(y, k, &cfg.family, &priors, &cfg.quadrature, ORACLE_MAX_N)?;
    let start = std::time::Instant::now();
    let trace = run_modal_gibbs(y, k, &cfg.family, &priors, &cfg.quadrature, &cfg.sampler)?;
    let pg = empirical_allocation_posterior(&trace)?;
    let pi = renormalized_allocation_posterior(&trace, &priors.alpha)?;
    let exact_post = AllocationPosterior {
        entries: exact.classes.iter().map(|(key, c)| (key.clone(), c.prob)).collect(),
        estimator: modalmix::bma::Estimator::EvidenceRenormalized,
    };
    let tv_g = tv_against_exact(&pg, &exact_post);
    let tv_i = tv_against_exact(&pi, &exact_post);
    let visited_exact_mass = trace.table.keys().map(|key| exact_post.prob(key)).sum();

    let mut row = analyze_trace(trace, &priors.alpha, &cfg.family)?;
    row.prob_i = 1.0;
    row.prob_g = 1.0;
    row.prob_m = 1.0;
    row.runtime_ms = start.elapsed().as_millis();
    let cmp = ModelComparisonReport { family: cfg.family, seed: cfg.sampler.seed, rows: vec![row] };
    let mut report = base_report(cfg, "oracle", Some(&cmp));
    report.oracle = Some(OracleReport {
        k,
        exact_log_evidence: exact.log_evidence,
        log_evidence_i: cmp.rows[0].log_evidence_i,
        tv_gibbs_vs_exact: tv_g,
        tv_renormalized_vs_exact: tv_i,
        max_tv: tv_g.max(tv_i),
        visited_exact_mass,
    });
    report.write_json(&cfg.out)?;
    Ok(report)
}

pub fn cmd_simulate(args: &SimArgs) -> Result<Vec<f64>, CliError> {
    let spec = match args.family {
        FamilyArg::Gaussian => SimSpec::Gaussian {
            means: args.means.clone(),
            precisions: if args.precisions.is_empty() { vec![1.0; args.means.len()] } else { args.precisions.clone() },
            sizes: args.sizes.clone(),
        },
        FamilyArg::Poisson => {
            if !args.precisions.is_empty() {
                return Err(CliError::Config("--precisions applies to the Gaussian family only".into()));
            }
            SimSpec::Poisson { means: args.means.clone(), sizes: args.sizes.clone() }
        }
    };
    let values = simulate(&spec, args.seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    write_csv(&args.out, &values)?;
    Ok(values)
}

/// Runs one parsed command, printing a short summary to stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(args) => {
            let values = cmd_simulate(args)?;
            println!("wrote {} rows to {}", values.len(), args.out.display());
        }
        Command::Fit(args) => print_models(&cmd_fit(&args.resolve("fit")?)?),
        Command::Select(args) => print_models(&cmd_select(&args.resolve("select")?, "select")?),
        Command::Diagnose(args) => {
            let report = cmd_diagnose(&args.resolve("diagnose")?)?;
            print_models(&report);
            if let Some(d) = &report.diagnostic {
                println!(
                    "K={} tv={:.4} flagged={} chib_G-I={:.3}",
                    d.k, d.tv_distance, d.flagged, d.chib_g_minus_i
                );
            }
        }
        Command::Oracle(args) => {
            let report = cmd_oracle(&args.resolve("oracle")?)?;
            if let Some(o) = &report.oracle {
                println!(
                    "K={} exact log p(y)={:.6} log_evidence_I={:.6} max TV={:.4} (G {:.4}, I {:.4})",
                    o.k, o.exact_log_evidence, o.log_evidence_i, o.max_tv, o.tv_gibbs_vs_exact,
                    o.tv_renormalized_vs_exact
                );
            }
        }
    }
    Ok(())
}

fn print_models(report: &Report) {
    println!("{:>4} {:>12} {:>12} {:>12} {:>7} {:>7} {:>7} {:>7}", "K", "logI", "chibG", "chibM", "pI", "pG", "pM", "tv");
    for m in &report.models {
        println!(
            "{:>4} {:>12.3} {:>12.3} {:>12.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
            m.k, m.log_evidence_i, m.log_evidence_chib_g, m.log_evidence_chib_m, m.prob_i, m.prob_g, m.prob_m,
            m.diagnostic_tv
        );
    }
}
