//! Starting values for the outer optimization.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::covstruct::{lower_trapezoid_rotation, CovKind, LoadingMatrix};
use crate::error::Result;
use crate::family::{deviance_residual, quantile_residual, Family};
use crate::laplace::{JointModel, LatentState, ParamVector};

use super::irls::irls_glm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StartMethod {
    /// All parameters zero, except a unit diagonal in each loading matrix.
    #[default]
    Zero,
    /// GLM coefficients and a factor decomposition of the GLM residuals.
    Res,
}

impl std::str::FromStr for StartMethod {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(StartMethod::Zero),
            "res" => Ok(StartMethod::Res),
            other => Err(crate::error::Error::InvalidArgument(format!("unknown start method `{other}`"))),
        }
    }
}

/// A start point together with the residual matrices it was derived from,
/// which jittered restarts reuse.
#[derive(Debug, Clone)]
pub struct StartPoint {
    pub psi: ParamVector,
    pub v: LatentState,
    /// Per random term: the group-by-column residual matrix (rr terms under
    /// the res method only).
    pub residuals: Vec<Option<DMatrix<f64>>>,
}

/// Loading parameters with ones on the diagonal and zeros elsewhere. An
/// all-zero loading matrix is a stationary point of the likelihood (the
/// objective is even in each column), so it cannot serve as a start.
pub fn unit_loading_theta(q: usize, d: usize) -> Vec<f64> {
    LoadingMatrix::new(DMatrix::from_fn(q, d, |i, j| if i == j { 1.0 } else { 0.0 }))
        .expect("lower trapezoid by construction")
        .to_theta()
}

fn zero_start(model: &JointModel) -> ParamVector {
    let layout = model.param_layout();
    let theta = model
        .terms()
        .iter()
        .map(|t| match t.kind {
            CovKind::Rr { rank } => unit_loading_theta(t.q, rank),
            _ => vec![0.0; covstruct_len(t.kind, t.q)],
        })
        .collect();
    ParamVector {
        beta: vec![0.0; layout.n_beta],
        theta,
        log_phi: layout.has_log_phi.then_some(0.0),
    }
}

fn covstruct_len(kind: CovKind, q: usize) -> usize {
    crate::covstruct::num_params(kind, q).expect("validated when the model was built")
}

/// Per-observation GLM residuals: randomized quantile residuals for discrete
/// families, deviance residuals for the gaussian.
fn glm_residuals<R: Rng + ?Sized>(family: Family, y: &[f64], mu: &[f64], phi: f64, rng: &mut R) -> Vec<f64> {
    y.iter()
        .zip(mu)
        .map(|(&yi, &mi)| match family {
            Family::Gaussian => deviance_residual(family, yi, mi, phi),
            _ => quantile_residual(family, yi, mi, phi, rng),
        })
        .collect()
}

/// Averages residuals into an `m x q` matrix: entry `(g, c)` is the least
/// squares coefficient of the residuals on column `c` of `Z` within group `g`
/// (the group mean for indicator columns).
pub fn residual_matrix(model: &JointModel, term: usize, resid: &[f64]) -> DMatrix<f64> {
    let info = &model.terms()[term];
    let r = &model.random()[term];
    let mut num: DMatrix<f64> = DMatrix::zeros(info.m, info.q);
    let mut den: DMatrix<f64> = DMatrix::zeros(info.m, info.q);
    for (i, &e) in resid.iter().enumerate() {
        let g = r.group_index[i];
        for c in 0..info.q {
            let z = r.z[(i, c)];
            num[(g, c)] += z * e;
            den[(g, c)] += z * z;
        }
    }
    num.zip_map(&den, |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 })
}

/// Rank-`d` factorization of a residual matrix, `R ~ U D V'`, split as
/// latents `U D^{1/2}` and loadings `V D^{1/2}` and rotated so the loadings
/// are lower trapezoidal. Returns `(loadings q x d, latents m x d)`.
pub fn factor_residuals(r: &DMatrix<f64>, d: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let (m, q) = r.shape();
    if d == 0 || m < d || q < d {
        return None;
    }
    let svd = r.clone().svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut lat = DMatrix::zeros(m, d);
    let mut load = DMatrix::zeros(q, d);
    for (k, &idx) in order.iter().take(d).enumerate() {
        let s = svd.singular_values[idx].sqrt();
        for g in 0..m {
            lat[(g, k)] = u[(g, idx)] * s;
        }
        for c in 0..q {
            load[(c, k)] = vt[(idx, c)] * s;
        }
    }
    let (rotated, rot) = lower_trapezoid_rotation(&load);
    Some((rotated, lat * rot))
}

/// Least-squares loadings for given latents, `R ~ U L'`, rotated to the
/// lower trapezoid. Returns `(loadings, rotated latents)`.
pub fn loadings_for_latents(r: &DMatrix<f64>, lat: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let utu = lat.transpose() * lat;
    let chol = utu.cholesky()?;
    let load = chol.solve(&(lat.transpose() * r)).transpose();
    let (rotated, rot) = lower_trapezoid_rotation(&load);
    Some((rotated, lat * rot))
}

/// Start values for the chosen method. The rng drives the randomized
/// quantile residuals.
pub fn start_values<R: Rng + ?Sized>(model: &JointModel, method: StartMethod, rng: &mut R) -> Result<StartPoint> {
    let mut psi = zero_start(model);
    let mut v = LatentState::zeros(model.latent_layout());
    let mut residuals = vec![None; model.terms().len()];
    if method == StartMethod::Zero {
        return Ok(StartPoint { psi, v, residuals });
    }
    let glm = irls_glm(&model.design.x, &model.design.y, model.family, model.link)?;
    psi.beta = glm.beta.clone();
    if let Some(lp) = psi.log_phi.as_mut() {
        *lp = glm.phi.ln();
    }
    let resid = glm_residuals(model.family, &model.design.y, &glm.mu, glm.phi, rng);
    let layout = model.latent_layout().clone();
    for (t, info) in model.terms().iter().enumerate() {
        let CovKind::Rr { rank } = info.kind else { continue };
        let r = residual_matrix(model, t, &resid);
        if r.iter().all(|&x| x == 0.0) {
            continue;
        }
        match factor_residuals(&r, rank) {
            Some((load, lat)) => {
                psi.theta[t] = LoadingMatrix::new(load).expect("rotated to lower trapezoid").to_theta();
                for g in 0..info.m {
                    let row: Vec<f64> = lat.row(g).iter().copied().collect();
                    v.set(&layout, t, g, &row);
                }
                residuals[t] = Some(r);
            }
            None => {
                log::warn!(
                    "term {} has {} groups for rank {rank}; using zero starts",
                    model.random()[t].label(),
                    info.m
                );
            }
        }
    }
    Ok(StartPoint { psi, v, residuals })
}

/// Adds independent `N(0, sd^2)` noise to the rr latent coordinates.
pub fn jitter_latents<R: Rng + ?Sized>(model: &JointModel, v0: &LatentState, sd: f64, rng: &mut R) -> LatentState {
    let mut v = v0.clone();
    if sd <= 0.0 {
        return v;
    }
    let normal = Normal::new(0.0, sd).expect("positive sd");
    let layout = model.latent_layout();
    for (t, info) in model.terms().iter().enumerate() {
        if !matches!(info.kind, CovKind::Rr { .. }) {
            continue;
        }
        for g in 0..info.m {
            for c in 0..info.k {
                v.values[layout.index(t, g, c)] += normal.sample(rng);
            }
        }
    }
    v
}

/// A jittered start: latents are perturbed and, because the inner problem
/// has a unique mode, the perturbation is carried into the loadings. Under
/// the res method the loadings are refit to the jittered latents; otherwise
/// the loading parameters themselves receive the same noise.
pub fn jittered_start<R: Rng + ?Sized>(model: &JointModel, start: &StartPoint, sd: f64, rng: &mut R) -> StartPoint {
    let mut out = start.clone();
    if sd <= 0.0 {
        return out;
    }
    out.v = jitter_latents(model, &start.v, sd, rng);
    let normal = Normal::new(0.0, sd).expect("positive sd");
    let layout = model.latent_layout().clone();
    for (t, info) in model.terms().iter().enumerate() {
        if !matches!(info.kind, CovKind::Rr { .. }) {
            continue;
        }
        let refit = start.residuals[t].as_ref().and_then(|r| {
            let lat = DMatrix::from_fn(info.m, info.k, |g, c| out.v.values[layout.index(t, g, c)]);
            loadings_for_latents(r, &lat)
        });
        match refit {
            Some((load, lat)) => {
                out.psi.theta[t] = LoadingMatrix::new(load).expect("lower trapezoid").to_theta();
                for g in 0..info.m {
                    let row: Vec<f64> = lat.row(g).iter().copied().collect();
                    out.v.set(&layout, t, g, &row);
                }
            }
            None => out.psi.theta[t].iter_mut().for_each(|x| *x += normal.sample(rng)),
        }
    }
    out
}
