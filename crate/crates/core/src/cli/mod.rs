//! Command-line front end: reads CSV data, fits models, and writes JSON and
//! CSV artifacts.
//!
//! Exit codes: 0 success, 1 internal or output failure, 2 usage or formula
//! parse error, 3 data error, 4 non-convergence (artifacts are still
//! written and flag the failure).

mod artifacts;
mod summary;

pub use artifacts::{
    finite, write_json, write_latents_csv, write_ordination_csv, write_ranksweep_csv, BootstrapArtifact, Convergence,
    FitArtifact, FixedEffect, GroupCount, ParameterEstimate, RestartEntry, RunConfig, StoredFit, VarCorrArtifact,
    SCHEMA_VERSION,
};
pub use summary::{format_p, format_summary, sci, signif_stars};

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::family::Family;
use crate::formula::{build_design, parse_formula, Column, DataTable, ModelSpec};
use crate::inference::{
    bootstrap_from_fits, check_nested, coefficient_table, conditional_modes, first_rr_term, information_criteria,
    observed_information, ordination, rank_sweep, rr_terms, simulate_fit, var_corr,
};
use crate::laplace::JointModel;
use crate::optimize::{fit_model, rng_stream, FitResult, StartMethod};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NO_CONVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "rrglmm", version, about = "Mixed models with reduced-rank random effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write fit.json, varcorr.json, ordination.csv, latents.csv.
    Fit(CommonArgs),
    /// Repeat the fit recorded in a fit.json.
    Refit(RefitArgs),
    /// Parametric bootstrap likelihood-ratio test of a null against --formula.
    Bootstrap(BootstrapArgs),
    /// Refit over a range of ranks of one reduced-rank term.
    Ranksweep(RankSweepArgs),
    /// Simulate a response from the model recorded in a fit.json.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub formula: String,
    #[arg(long, default_value = "gaussian")]
    pub family: Family,
    /// Columns to read as categorical even if numeric (repeatable or comma separated).
    #[arg(long = "factor", value_delimiter = ',')]
    pub factors: Vec<String>,
    #[arg(long, default_value = "zero")]
    pub start_method: StartMethod,
    #[arg(long, default_value_t = 0.0)]
    pub jitter_sd: f64,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub outer_tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_outer_iter: usize,
    /// Worker threads for restarts and bootstrap replicates.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

impl CommonArgs {
    pub fn config(&self, command: &str) -> RunConfig {
        RunConfig {
            command: command.into(),
            data: self.data.display().to_string(),
            formula: self.formula.clone(),
            family: self.family.name().into(),
            factors: self.factors.clone(),
            start_method: self.start_method,
            jitter_sd: self.jitter_sd,
            restarts: self.restarts,
            seed: self.seed,
            outer_tol: self.outer_tol,
            max_outer_iter: self.max_outer_iter,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RefitArgs {
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Formula of the null model; --formula is the alternative.
    #[arg(long)]
    pub null: String,
    /// Number of bootstrap replicates.
    #[arg(long = "R", default_value_t = 1000)]
    pub r: usize,
    /// Skip the nesting check.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RankSweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Ranks as `a..b` (inclusive) or a comma-separated list.
    #[arg(long = "d", default_value = "0..4", value_parser = parse_ranks)]
    pub d: std::vec::Vec<usize>,
    /// Zero-based index of the random term to vary; defaults to the first rr term.
    #[arg(long)]
    pub term: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// A fit.json written by `fit`.
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Data file to use instead of the one recorded in fit.json.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Parses `a..b` or `a,b,c` into a rank list.
pub fn parse_ranks(s: &str) -> std::result::Result<Vec<usize>, String> {
    let bad = |_| format!("invalid rank list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(bad)?;
        let b: usize = b.trim().parse().map_err(bad)?;
        if a > b {
            return Err(format!("empty rank range `{s}`"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(bad)).collect()
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } | Error::InvalidArgument(_) => EXIT_USAGE,
        Error::MissingColumn(_)
        | Error::Data(_)
        | Error::Domain(_)
        | Error::Dimension(_)
        | Error::InvalidRank { .. }
        | Error::RankDeficient(_)
        | Error::Csv(_) => EXIT_DATA,
        Error::NoConvergence { .. } => EXIT_NO_CONVERGENCE,
        Error::Numerical(_) | Error::Io(_) | Error::Json(_) => EXIT_INTERNAL,
    }
}

fn load_data(path: &str, factors: &[String]) -> std::result::Result<DataTable, (i32, Error)> {
    DataTable::from_csv_path(path, factors).map_err(|e| {
        let code = match e {
            Error::Io(_) => EXIT_DATA,
            ref other => exit_code(other),
        };
        (code, e)
    })
}

type Outcome = std::result::Result<i32, (i32, Error)>;

fn coded<T>(r: Result<T>) -> std::result::Result<T, (i32, Error)> {
    r.map_err(|e| (exit_code(&e), e))
}

fn output<T>(r: Result<T>) -> std::result::Result<T, (i32, Error)> {
    r.map_err(|e| (EXIT_INTERNAL, e))
}

struct Prepared {
    spec: ModelSpec,
    data: DataTable,
    family: Family,
    model: JointModel,
}

fn prepare(config: &RunConfig) -> std::result::Result<Prepared, (i32, Error)> {
    let family: Family = coded(config.family.parse())?;
    let spec = coded(parse_formula(&config.formula))?;
    let data = load_data(&config.data, &config.factors)?;
    let model = coded(build_design(&spec, &data).and_then(|d| JointModel::new(d, family)))?;
    Ok(Prepared {
        spec,
        data,
        family,
        model,
    })
}

/// Fit, keeping the best non-converged run when no restart converged.
fn fit_or_best(model: &JointModel, config: &RunConfig) -> std::result::Result<FitResult, (i32, Error)> {
    match fit_model(model, &config.control()) {
        Ok(f) => Ok(f),
        Err(Error::NoConvergence { best: Some(b), .. }) => Ok(*b),
        Err(e) => Err((exit_code(&e), e)),
    }
}

/// Builds the `fit.json` contents for a fitted model.
pub fn fit_artifact(config: &RunConfig, model: &JointModel, fit: &FitResult) -> FitArtifact {
    let info = observed_information(model, fit);
    let se = info.standard_errors();
    let p = model.param_layout().n_beta;
    let ic = information_criteria(fit.loglik(), model.n_params(), model.n_obs());
    let coefs = coefficient_table(&model.design.x_names, &fit.psi_hat.beta, &se[..p]);
    let parameters = model
        .param_names()
        .into_iter()
        .zip(fit.psi_hat.pack())
        .zip(&se)
        .map(|((name, estimate), &s)| ParameterEstimate {
            name,
            estimate,
            std_error: finite(s),
        })
        .collect();
    FitArtifact {
        schema_version: SCHEMA_VERSION.into(),
        config: config.clone(),
        family: model.family.name().into(),
        link: model.link.name().into(),
        n_obs: model.n_obs(),
        n_params: model.n_params(),
        groups: model
            .random()
            .iter()
            .map(|r| GroupCount {
                term: r.label(),
                group: r.group_name().to_string(),
                levels: r.n_groups(),
            })
            .collect(),
        loglik: finite(ic.loglik),
        aic: finite(ic.aic),
        bic: finite(ic.bic),
        deviance: finite(ic.deviance),
        df_resid: model.n_obs() as i64 - model.n_params() as i64,
        convergence: Convergence {
            converged: fit.converged,
            message: fit.message.clone(),
            outer_iterations: fit.n_outer_iter,
            evaluations: fit.n_evaluations,
            gradient_norm: finite(fit.gradient_norm),
            start_nll: finite(fit.start_nll),
            best_restart: fit.best_restart,
            information_positive_definite: info.positive_definite,
        },
        fixed_effects: coefs.iter().map(FixedEffect::from).collect(),
        parameters,
        restarts: fit.restarts.iter().map(RestartEntry::from).collect(),
    }
}

fn create_out(dir: &Path) -> std::result::Result<(), (i32, Error)> {
    output(std::fs::create_dir_all(dir).map_err(Error::from))
}

fn csv_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs `fit` for a recorded configuration and writes all artifacts.
pub fn run_fit(config: &RunConfig, out: &Path) -> Outcome {
    let prep = prepare(config)?;
    let model = &prep.model;
    let fit = fit_or_best(model, config)?;
    create_out(out)?;
    let artifact = fit_artifact(config, model, &fit);
    let vc = var_corr(model, &fit.psi_hat);
    output(write_json(&out.join("fit.json"), &artifact))?;
    output(write_json(
        &out.join("varcorr.json"),
        &VarCorrArtifact {
            schema_version: SCHEMA_VERSION.into(),
            report: vc.clone(),
        },
    ))?;
    let rr = rr_terms(model);
    if !rr.is_empty() {
        let ords = coded(rr.iter().map(|&t| ordination(model, &fit, t)).collect::<Result<Vec<_>>>())?;
        output(csv_file(&out.join("ordination.csv")).and_then(|f| write_ordination_csv(f, &ords)))?;
    }
    let modes = coded(conditional_modes(model, &fit))?;
    output(csv_file(&out.join("latents.csv")).and_then(|f| write_latents_csv(f, &modes)))?;
    let text = format_summary(&artifact, &vc);
    output(std::fs::write(out.join("summary.txt"), &text).map_err(Error::from))?;
    print!("{text}");
    Ok(if fit.converged { EXIT_OK } else { EXIT_NO_CONVERGENCE })
}

fn read_stored(path: &Path) -> std::result::Result<StoredFit, (i32, Error)> {
    let text = std::fs::read_to_string(path).map_err(|e| (EXIT_DATA, Error::from(e)))?;
    let stored: StoredFit = serde_json::from_str(&text).map_err(|e| (EXIT_DATA, Error::from(e)))?;
    if stored.schema_version.split('.').next() != SCHEMA_VERSION.split('.').next() {
        return Err((
            EXIT_DATA,
            Error::Data(format!("unsupported fit.json schema version {}", stored.schema_version)),
        ));
    }
    Ok(stored)
}

/// Writes `bootstrap.json` for the null formula against `config.formula`.
pub fn run_bootstrap(config: &RunConfig, null_formula: &str, r: usize, force: bool, out: &Path) -> Outcome {
    let alt = prepare(config)?;
    let null_spec = coded(parse_formula(null_formula))?;
    let null = coded(build_design(&null_spec, &alt.data).and_then(|d| JointModel::new(d, alt.family)))?;
    if !force {
        coded(check_nested(&null, &alt.model))?;
    }
    let null_fit = fit_or_best(&null, config)?;
    let alt_fit = fit_or_best(&alt.model, config)?;
    let b = coded(bootstrap_from_fits(
        &null,
        &null_fit,
        &alt.model,
        &alt_fit,
        r,
        &config.control(),
    ))?;
    create_out(out)?;
    let converged = (null_fit.converged, alt_fit.converged);
    let artifact = BootstrapArtifact::new(config.clone(), null_formula.into(), config.formula.clone(), b, converged);
    output(write_json(&out.join("bootstrap.json"), &artifact))?;
    println!(
        "LR = {:.4}, p = {:.4} ({} of {} replicates used)",
        artifact.lr_obs, artifact.p_value, artifact.r_used, artifact.r_requested
    );
    Ok(if converged.0 && converged.1 { EXIT_OK } else { EXIT_NO_CONVERGENCE })
}

/// Writes `ranksweep.csv` with one row per requested rank.
pub fn run_ranksweep(config: &RunConfig, d: &[usize], term: Option<usize>, out: &Path) -> Outcome {
    let prep = prepare(config)?;
    let term = match term.or_else(|| first_rr_term(&prep.spec)) {
        Some(t) => t,
        None => {
            return Err((
                EXIT_USAGE,
                Error::InvalidArgument("formula has no rr term; pass --term".into()),
            ))
        }
    };
    let rows = coded(rank_sweep(&prep.spec, &prep.data, prep.family, term, d, &config.control()))?;
    create_out(out)?;
    let rows: Vec<_> = rows.into_iter().map(|(row, _)| row).collect();
    output(csv_file(&out.join("ranksweep.csv")).and_then(|f| write_ranksweep_csv(f, &rows)))?;
    for r in &rows {
        println!("d = {}: logLik = {:.4} {}", r.d, r.loglik, r.message);
    }
    let failed = rows.iter().any(|r| r.valid && !r.converged);
    Ok(if failed { EXIT_NO_CONVERGENCE } else { EXIT_OK })
}

/// Writes `simulated.csv`: the recorded data with the response replaced by
/// a draw from the fitted model.
pub fn run_simulate(stored: &StoredFit, data: Option<&Path>, seed: u64, out: &Path) -> Outcome {
    let mut config = stored.config.clone();
    if let Some(d) = data {
        config.data = d.display().to_string();
    }
    let prep = prepare(&config)?;
    let names = prep.model.param_names();
    let values: Vec<f64> = names
        .iter()
        .map(|n| {
            stored
                .parameters
                .iter()
                .find(|p| &p.name == n)
                .map(|p| p.estimate)
                .ok_or_else(|| (EXIT_DATA, Error::Data(format!("fit.json has no parameter `{n}`"))))
        })
        .collect::<std::result::Result<_, _>>()?;
    let psi = coded(prep.model.unpack(&values))?;
    let y = coded(simulate_fit(&prep.model, &psi, &mut rng_stream(seed, 0)))?;
    let mut data = prep.data;
    coded(data.push_column(&prep.spec.response, Column::Numeric(y.into_iter().map(Some).collect())))?;
    create_out(out)?;
    output(csv_file(&out.join("simulated.csv")).and_then(|f| data.write_csv(f)))?;
    Ok(EXIT_OK)
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Fit(a) => run_fit(&a.config("fit"), &a.out),
        Command::Refit(a) => {
            let stored = read_stored(&a.from)?;
            run_fit(&stored.config, &a.out)
        }
        Command::Bootstrap(a) => run_bootstrap(&a.common.config("bootstrap"), &a.null, a.r, a.force, &a.common.out),
        Command::Ranksweep(a) => run_ranksweep(&a.common.config("ranksweep"), &a.d, a.term, &a.common.out),
        Command::Simulate(a) => {
            let stored = read_stored(&a.from)?;
            run_simulate(&stored, a.data.as_deref(), a.seed, &a.out)
        }
    }
}

fn jobs(command: &Command) -> usize {
    match command {
        Command::Fit(a) => a.jobs,
        Command::Refit(a) => a.jobs,
        Command::Bootstrap(a) => a.common.jobs,
        Command::Ranksweep(a) => a.common.jobs,
        Command::Simulate(_) => 1,
    }
}

/// Parses arguments, runs the command in a pool of `--jobs` threads, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs(&cli.command).max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_INTERNAL;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(code) => code,
        Err((code, e)) => {
            eprintln!("error: {e}");
            code
        }
    }
}
