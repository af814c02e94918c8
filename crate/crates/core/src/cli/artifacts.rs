use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::inference::{BootstrapResult, Coefficient, LatentMode, Ordination, RankSweepRow, VarCorrReport};
use crate::optimize::{FitControl, RestartRecord, StartMethod};

/// Version tag written into every JSON artifact.
pub const SCHEMA_VERSION: &str = "1.0.0";

/// Everything needed to repeat a run. Written into `fit.json` and
/// `bootstrap.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub data: String,
    pub formula: String,
    pub family: String,
    pub factors: Vec<String>,
    pub start_method: StartMethod,
    pub jitter_sd: f64,
    pub restarts: usize,
    pub seed: u64,
    pub outer_tol: f64,
    pub max_outer_iter: usize,
}

impl RunConfig {
    pub fn control(&self) -> FitControl {
        FitControl {
            start_method: self.start_method,
            jitter_sd: self.jitter_sd,
            restarts: self.restarts,
            outer_tol: self.outer_tol,
            max_outer_iter: self.max_outer_iter,
            seed: self.seed,
        }
    }
}

/// `None` for non-finite values, which JSON cannot carry.
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffect {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub z_value: Option<f64>,
    pub p_value: Option<f64>,
}

impl From<&Coefficient> for FixedEffect {
    fn from(c: &Coefficient) -> Self {
        Self {
            name: c.name.clone(),
            estimate: c.estimate,
            std_error: finite(c.std_error),
            z_value: finite(c.z_value),
            p_value: finite(c.p_value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    pub term: String,
    pub group: String,
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub message: String,
    pub outer_iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: Option<f64>,
    pub start_nll: Option<f64>,
    pub best_restart: usize,
    pub information_positive_definite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartEntry {
    pub restart: usize,
    pub stream: u64,
    pub nll: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl From<&RestartRecord> for RestartEntry {
    fn from(r: &RestartRecord) -> Self {
        Self {
            restart: r.restart,
            stream: r.stream,
            nll: finite(r.nll),
            converged: r.converged,
            iterations: r.iterations,
        }
    }
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitArtifact {
    pub schema_version: String,
    pub config: RunConfig,
    pub family: String,
    pub link: String,
    pub n_obs: usize,
    pub n_params: usize,
    pub groups: Vec<GroupCount>,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub deviance: Option<f64>,
    pub df_resid: i64,
    pub convergence: Convergence,
    pub fixed_effects: Vec<FixedEffect>,
    pub parameters: Vec<ParameterEstimate>,
    pub restarts: Vec<RestartEntry>,
}

/// The part of `fit.json` read back by `simulate` and `refit`.
#[derive(Debug, Clone, Deserialize)]
pub struct StoredFit {
    pub schema_version: String,
    pub config: RunConfig,
    pub parameters: Vec<ParameterEstimate>,
}

/// Contents of `varcorr.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarCorrArtifact {
    pub schema_version: String,
    #[serde(flatten)]
    pub report: VarCorrReport,
}

/// Contents of `bootstrap.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapArtifact {
    pub schema_version: String,
    pub config: RunConfig,
    pub null_formula: String,
    pub alt_formula: String,
    pub lr_obs: f64,
    pub p_value: f64,
    pub r_requested: usize,
    pub r_used: usize,
    pub n_failed: usize,
    pub null_loglik: f64,
    pub alt_loglik: f64,
    pub null_converged: bool,
    pub alt_converged: bool,
    pub replicates: Vec<Option<f64>>,
}

impl BootstrapArtifact {
    pub fn new(
        config: RunConfig,
        null_formula: String,
        alt_formula: String,
        b: BootstrapResult,
        converged: (bool, bool),
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            config,
            null_formula,
            alt_formula,
            lr_obs: b.lr_obs,
            p_value: b.p_value,
            r_requested: b.r_requested,
            r_used: b.r_used,
            n_failed: b.n_failed,
            null_loglik: b.null_loglik,
            alt_loglik: b.alt_loglik,
            null_converged: converged.0,
            alt_converged: converged.1,
            replicates: b.replicates.iter().map(|r| r.and_then(finite)).collect(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

/// Wide ordination table: `term,kind,label,LV1..LVd`, score rows then
/// loading rows per reduced-rank term. Terms of lower rank leave the
/// trailing axes empty.
pub fn write_ordination_csv<W: Write>(writer: W, ords: &[Ordination]) -> Result<()> {
    let d = ords.iter().map(|o| o.axes.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["term".to_string(), "kind".into(), "label".into()];
    header.extend((1..=d).map(|k| format!("LV{k}")));
    w.write_record(&header)?;
    for o in ords {
        let blocks = [("score", &o.groups, &o.scores), ("loading", &o.variables, &o.loadings)];
        for (kind, labels, values) in blocks {
            for (label, row) in labels.iter().zip(values) {
                let mut rec = vec![o.term.clone(), kind.to_string(), label.clone()];
                rec.extend((0..d).map(|k| row.get(k).map(|&x| num(x)).unwrap_or_default()));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Long table `term,group,coordinate,mode,cond_sd` of the latent modes.
pub fn write_latents_csv<W: Write>(writer: W, modes: &[LatentMode]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "group", "coordinate", "mode", "cond_sd"])?;
    for m in modes {
        w.write_record([
            m.term.clone(),
            m.group.clone(),
            m.coordinate.clone(),
            num(m.mode),
            num(m.cond_sd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per rank: fit summary, then estimate, standard error, and 95%
/// interval of each fixed effect.
pub fn write_ranksweep_csv<W: Write>(writer: W, rows: &[RankSweepRow]) -> Result<()> {
    let mut names: Vec<String> = Vec::new();
    for r in rows {
        for f in &r.fixed {
            if !names.contains(&f.coef.name) {
                names.push(f.coef.name.clone());
            }
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["d", "valid", "converged", "loglik", "aic", "bic", "df"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for n in &names {
        for suffix in ["estimate", "std_error", "ci_lower", "ci_upper"] {
            header.push(format!("{n}.{suffix}"));
        }
    }
    header.push("message".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.d.to_string(),
            r.valid.to_string(),
            r.converged.to_string(),
            num(r.loglik),
            num(r.aic),
            num(r.bic),
            if r.valid && r.loglik.is_finite() { r.df.to_string() } else { String::new() },
        ];
        for n in &names {
            match r.fixed.iter().find(|f| &f.coef.name == n) {
                Some(f) => rec.extend([
                    num(f.coef.estimate),
                    num(f.coef.std_error),
                    num(f.ci_lower),
                    num(f.ci_upper),
                ]),
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        rec.push(r.message.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
