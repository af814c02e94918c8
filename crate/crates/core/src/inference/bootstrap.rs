use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covstruct::CovKind;
use crate::error::{Error, Result};
use crate::family::simulate_response;
use crate::laplace::{JointModel, LatentState, ParamVector, Prepared};
use crate::optimize::{fit_from, fit_model, rng_stream, start_values, FitControl, FitResult, StartMethod};

/// Draws a response vector from the model at `psi`: fresh latents from their
/// priors, then responses given the linear predictor.
pub fn simulate_fit<R: Rng + ?Sized>(model: &JointModel, psi: &ParamVector, rng: &mut R) -> Result<Vec<f64>> {
    let prep = Prepared::new(model, psi)?;
    let layout = model.latent_layout();
    let mut v = LatentState::zeros(layout);
    for (t, info) in model.terms().iter().enumerate() {
        let root = match info.kind {
            CovKind::Rr { .. } => None,
            _ => Some(
                model
                    .term_cov(psi, t)
                    .cholesky()
                    .ok_or_else(|| Error::Numerical("random-effect covariance is not positive definite".into()))?
                    .l(),
            ),
        };
        for g in 0..info.m {
            let z: Vec<f64> = (0..info.k).map(|_| StandardNormal.sample(rng)).collect();
            let coords: Vec<f64> = match &root {
                None => z,
                Some(l) => (0..info.k).map(|r| (0..=r).map(|c| l[(r, c)] * z[c]).sum()).collect(),
            };
            v.set(layout, t, g, &coords);
        }
    }
    let eta = prep.linear_predictor(&v.values);
    let phi = psi.phi();
    Ok(eta
        .iter()
        .map(|&e| simulate_response(model.family, model.link, e, phi, rng))
        .collect())
}

/// `(#{replicates >= lr_obs} + 1) / (R_used + 1)` over the successful
/// replicates. Returns the p-value and `R_used`.
pub fn bootstrap_p_value(lr_obs: f64, replicates: &[Option<f64>]) -> (f64, usize) {
    let used: Vec<f64> = replicates.iter().filter_map(|r| *r).filter(|r| !r.is_nan()).collect();
    let k = used.iter().filter(|&&r| r >= lr_obs).count();
    ((k as f64 + 1.0) / (used.len() as f64 + 1.0), used.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub lr_obs: f64,
    pub p_value: f64,
    pub r_requested: usize,
    pub r_used: usize,
    pub n_failed: usize,
    pub null_loglik: f64,
    pub alt_loglik: f64,
    /// One entry per replicate; `None` marks a failed refit.
    pub replicates: Vec<Option<f64>>,
}

/// Heuristic nesting check: the null has no more parameters, its fixed
/// columns are a subset of the alternative's, and each of its random terms
/// has a counterpart on the same grouping factor with at least as many
/// columns.
pub fn check_nested(null: &JointModel, alt: &JointModel) -> Result<()> {
    if null.n_params() > alt.n_params() {
        return Err(Error::InvalidArgument(format!(
            "null model has {} parameters, alternative only {}",
            null.n_params(),
            alt.n_params()
        )));
    }
    if let Some(name) = null.design.x_names.iter().find(|n| !alt.design.x_names.contains(n)) {
        return Err(Error::InvalidArgument(format!(
            "fixed column `{name}` of the null model is missing from the alternative"
        )));
    }
    for r in null.random() {
        let ok = alt
            .random()
            .iter()
            .any(|a| a.group_name() == r.group_name() && a.q() >= r.q());
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "random term {} of the null model has no counterpart in the alternative",
                r.label()
            )));
        }
    }
    if null.family != alt.family || null.design.y != alt.design.y {
        return Err(Error::InvalidArgument("models must share the family and the response".into()));
    }
    Ok(())
}

/// Parameters of `to` taking values from `from` where the names agree and
/// from `default` elsewhere.
pub fn map_by_name(from: &JointModel, from_psi: &ParamVector, to: &JointModel, default: &ParamVector) -> ParamVector {
    let names_from = from.param_names();
    let values_from = from_psi.pack();
    let mut values = default.pack();
    for (i, name) in to.param_names().iter().enumerate() {
        if let Some(j) = names_from.iter().position(|n| n == name) {
            values[i] = values_from[j];
        }
    }
    to.unpack(&values).expect("length from the target model")
}

/// Parametric bootstrap of the likelihood ratio between two fitted nested
/// models. Replicate `r` simulates from the fitted null with stream `r` of
/// the control seed and refits both models from their fitted parameters.
pub fn bootstrap_from_fits(
    null: &JointModel,
    null_fit: &FitResult,
    alt: &JointModel,
    alt_fit: &FitResult,
    r: usize,
    control: &FitControl,
) -> Result<BootstrapResult> {
    let mut alt_fit = alt_fit.clone();
    let mut lr_obs = 2.0 * (null_fit.nll - alt_fit.nll);
    if lr_obs < -1e-6 {
        log::warn!("negative likelihood ratio {lr_obs:.3e}; refitting the alternative from the null solution");
        let default = start_values(alt, StartMethod::Zero, &mut rng_stream(control.seed, 0))?.psi;
        let psi0 = map_by_name(null, &null_fit.psi_hat, alt, &default);
        let refit = fit_from(alt, &psi0, &LatentState::zeros(alt.latent_layout()), control);
        if refit.converged && refit.nll < alt_fit.nll {
            alt_fit = refit;
            lr_obs = 2.0 * (null_fit.nll - alt_fit.nll);
        }
    }
    let replicates: Vec<Option<f64>> = (0..r)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_stream(control.seed, k as u64);
            let y = simulate_fit(null, &null_fit.psi_hat, &mut rng).ok()?;
            let null_k = null.with_response(y.clone()).ok()?;
            let alt_k = alt.with_response(y).ok()?;
            let f0 = fit_from(&null_k, &null_fit.psi_hat, &null_fit.v_hat, control);
            let f1 = fit_from(&alt_k, &alt_fit.psi_hat, &alt_fit.v_hat, control);
            (f0.converged && f1.converged).then(|| 2.0 * (f0.nll - f1.nll))
        })
        .collect();
    let (p_value, r_used) = bootstrap_p_value(lr_obs, &replicates);
    Ok(BootstrapResult {
        lr_obs,
        p_value,
        r_requested: r,
        r_used,
        n_failed: r - r_used,
        null_loglik: -null_fit.nll,
        alt_loglik: -alt_fit.nll,
        replicates,
    })
}

/// Fits both models and runs [`bootstrap_from_fits`].
pub fn bootstrap_lrt(
    null: &JointModel,
    alt: &JointModel,
    r: usize,
    control: &FitControl,
    force: bool,
) -> Result<BootstrapResult> {
    if !force {
        check_nested(null, alt)?;
    }
    let null_fit = fit_model(null, control)?;
    let alt_fit = fit_model(alt, control)?;
    bootstrap_from_fits(null, &null_fit, alt, &alt_fit, r, control)
}
