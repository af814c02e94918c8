//! Outer maximization of the Laplace likelihood.

mod bfgs;
mod irls;
mod start;

pub use bfgs::{fd_gradient, fd_step, outer_minimize, Objective, OuterControl, OuterResult};
pub use irls::{check_full_rank, irls_glm, GlmFit};
pub use start::{
    factor_residuals, jitter_latents, jittered_start, loadings_for_latents, residual_matrix, start_values,
    unit_loading_theta, StartMethod, StartPoint,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::Family;
use crate::formula::{build_design, DataTable, ModelSpec};
use crate::laplace::{laplace_nll, JointModel, LatentState, ParamVector};

/// Stream reserved for the residual draws of the res start. Restart `r`
/// uses stream `r`.
pub const START_STREAM: u64 = u64::MAX;

/// Random generator for stream `stream` of the master seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitControl {
    pub start_method: StartMethod,
    pub jitter_sd: f64,
    pub restarts: usize,
    pub outer_tol: f64,
    pub max_outer_iter: usize,
    pub seed: u64,
}

impl Default for FitControl {
    fn default() -> Self {
        Self {
            start_method: StartMethod::Zero,
            jitter_sd: 0.0,
            restarts: 1,
            outer_tol: 1e-5,
            max_outer_iter: 500,
            seed: 1,
        }
    }
}

impl FitControl {
    fn outer(&self) -> OuterControl {
        OuterControl {
            tol: self.outer_tol,
            max_iter: self.max_outer_iter,
            ..OuterControl::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        if !(self.jitter_sd >= 0.0) || !self.jitter_sd.is_finite() {
            return Err(Error::InvalidArgument(format!("jitter sd must be nonnegative, got {}", self.jitter_sd)));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::InvalidArgument("outer tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// One entry of the multi-start log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart: usize,
    pub stream: u64,
    pub nll: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub psi_hat: ParamVector,
    pub v_hat: LatentState,
    pub nll: f64,
    /// Objective at the start point of the selected restart.
    pub start_nll: f64,
    pub converged: bool,
    pub n_outer_iter: usize,
    pub n_evaluations: usize,
    pub gradient: Vec<f64>,
    pub gradient_norm: f64,
    pub message: String,
    pub restarts: Vec<RestartRecord>,
    pub best_restart: usize,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        -self.nll
    }
}

/// The Laplace objective over packed parameters, warm-starting each inner
/// solve from the mode at the current iterate.
pub struct LaplaceObjective<'a> {
    model: &'a JointModel,
    anchor: LatentState,
    last: Option<(Vec<f64>, LatentState)>,
}

impl<'a> LaplaceObjective<'a> {
    pub fn new(model: &'a JointModel, v0: LatentState) -> Self {
        Self {
            model,
            anchor: v0,
            last: None,
        }
    }

    pub fn mode(&self) -> &LatentState {
        &self.anchor
    }
}

impl Objective for LaplaceObjective<'_> {
    fn value(&mut self, x: &[f64]) -> f64 {
        let Ok(psi) = self.model.unpack(x) else {
            return f64::INFINITY;
        };
        let e = laplace_nll(self.model, &psi, Some(&self.anchor));
        self.last = Some((x.to_vec(), e.v_hat));
        e.nll
    }

    fn accept(&mut self, x: &[f64]) {
        match self.last.take() {
            Some((lx, v)) if lx == x => self.anchor = v,
            _ => {
                if let Ok(psi) = self.model.unpack(x) {
                    self.anchor = laplace_nll(self.model, &psi, Some(&self.anchor)).v_hat;
                }
            }
        }
    }
}

/// A single optimization run from a given start.
pub fn fit_from(model: &JointModel, psi0: &ParamVector, v0: &LatentState, control: &FitControl) -> FitResult {
    let mut obj = LaplaceObjective::new(model, v0.clone());
    let x0 = psi0.pack();
    let r = outer_minimize(&mut obj, &x0, &control.outer());
    let start_nll = if r.iterations == 0 && r.evaluations == 1 { r.value } else { f64::NAN };
    let psi_hat = model.unpack(&r.x).expect("optimizer keeps the parameter length");
    let v_hat = obj.mode().clone();
    FitResult {
        psi_hat,
        v_hat,
        nll: r.value,
        start_nll,
        converged: r.converged && r.value.is_finite(),
        n_outer_iter: r.iterations,
        n_evaluations: r.evaluations,
        gradient_norm: r.gradient_norm,
        gradient: r.gradient,
        message: r.message,
        restarts: Vec::new(),
        best_restart: 0,
    }
}

fn run_restart(model: &JointModel, start: &StartPoint, control: &FitControl, r: usize) -> FitResult {
    let mut rng = rng_stream(control.seed, r as u64);
    let s = jittered_start(model, start, control.jitter_sd, &mut rng);
    let start_nll = laplace_nll(model, &s.psi, Some(&s.v)).nll;
    let mut fit = fit_from(model, &s.psi, &s.v, control);
    fit.start_nll = start_nll;
    fit
}

/// Fits a model: start values, `restarts` jittered runs, best converged run.
pub fn fit_model(model: &JointModel, control: &FitControl) -> Result<FitResult> {
    control.validate()?;
    check_full_rank(&model.design.x)?;
    let mut start = start_values(model, control.start_method, &mut rng_stream(control.seed, START_STREAM))?;
    if !laplace_nll(model, &start.psi, Some(&start.v)).nll.is_finite() && control.start_method != StartMethod::Zero {
        log::warn!("objective not finite at the res start; using zero starts");
        start = start_values(model, StartMethod::Zero, &mut rng_stream(control.seed, START_STREAM))?;
    }
    fit_with_start(model, &start, control)
}

/// Multi-start fit from a prepared start point.
pub fn fit_with_start(model: &JointModel, start: &StartPoint, control: &FitControl) -> Result<FitResult> {
    control.validate()?;
    let runs: Vec<FitResult> = if control.restarts > 1 {
        (0..control.restarts)
            .into_par_iter()
            .map(|r| run_restart(model, start, control, r))
            .collect()
    } else {
        vec![run_restart(model, start, control, 0)]
    };
    let log: Vec<RestartRecord> = runs
        .iter()
        .enumerate()
        .map(|(r, f)| RestartRecord {
            restart: r,
            stream: r as u64,
            nll: f.nll,
            converged: f.converged,
            iterations: f.n_outer_iter,
        })
        .collect();
    let pick = |only_converged: bool| {
        runs.iter()
            .enumerate()
            .filter(|(_, f)| f.nll.is_finite() && (!only_converged || f.converged))
            .min_by(|a, b| a.1.nll.total_cmp(&b.1.nll).then(a.0.cmp(&b.0)))
            .map(|(r, _)| r)
    };
    match pick(true) {
        Some(r) => {
            let mut best = runs[r].clone();
            best.restarts = log;
            best.best_restart = r;
            Ok(best)
        }
        None => {
            let best = pick(false).map(|r| {
                let mut b = runs[r].clone();
                b.restarts = log.clone();
                b.best_restart = r;
                Box::new(b)
            });
            Err(Error::NoConvergence {
                n: control.restarts,
                best,
            })
        }
    }
}

/// Builds the model from a formula and data and fits it.
pub fn fit(spec: &ModelSpec, data: &DataTable, family: Family, control: &FitControl) -> Result<FitResult> {
    let model = JointModel::new(build_design(spec, data)?, family)?;
    fit_model(&model, control)
}
