use std::f64::consts::PI;

use crate::covstruct::CovKind;
use crate::error::{Error, Result};

use super::hessian::{cholesky_in_place, BlockFactor, BlockHessian};
use super::model::{JointModel, LatentState, ParamVector};

/// Default relative gradient tolerance of the inner solve.
pub const INNER_TOL: f64 = 1e-8;
/// Default iteration cap of the inner solve.
pub const INNER_MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const POLISH_STEPS: usize = 3;

/// Per-term quantities that depend on the parameters only.
#[derive(Debug, Clone)]
struct TermState {
    k: usize,
    /// Row-major `n x k` effective design rows (`Z Lambda` for rr, `Z` otherwise).
    zt: Vec<f64>,
    /// Row-major `k x k` prior precision; `None` means identity.
    precision: Option<Vec<f64>>,
    /// `log det Sigma` of the latent prior (zero for rr).
    logdet_prior: f64,
}

/// The model evaluated at a fixed parameter vector.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    model: &'a JointModel,
    phi: f64,
    eta_fixed: Vec<f64>,
    terms: Vec<TermState>,
}

impl<'a> Prepared<'a> {
    pub fn new(model: &'a JointModel, psi: &ParamVector) -> Result<Self> {
        let layout = model.param_layout();
        if psi.beta.len() != layout.n_beta
            || psi.theta.len() != layout.theta_lens.len()
            || psi.theta.iter().zip(&layout.theta_lens).any(|(t, &l)| t.len() != l)
            || psi.log_phi.is_some() != layout.has_log_phi
        {
            return Err(Error::Dimension("parameter vector does not match the model".into()));
        }
        let n = model.n_obs();
        let phi = psi.phi();
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::Numerical(format!("dispersion {phi} is not usable")));
        }
        let eta_fixed = model.fixed_predictor(&psi.beta);
        let mut terms = Vec::with_capacity(model.terms().len());
        for (t, info) in model.terms().iter().enumerate() {
            let (q, k) = (info.q, info.k);
            let state = match info.kind {
                CovKind::Rr { rank } => {
                    let lam = model
                        .covariance_structure(psi, t)
                        .loading()
                        .ok_or_else(|| Error::Dimension("bad loading parameters".into()))?;
                    let lam = lam.values();
                    let mut zt = vec![0.0; n * rank];
                    for i in 0..n {
                        let z = model.z_row(t, i);
                        for c in 0..rank {
                            zt[i * rank + c] = (0..q).map(|r| z[r] * lam[(r, c)]).sum();
                        }
                    }
                    TermState {
                        k,
                        zt,
                        precision: None,
                        logdet_prior: 0.0,
                    }
                }
                CovKind::Diag | CovKind::Us => {
                    let sigma = model.term_cov(psi, t);
                    let mut l: Vec<f64> = (0..q * q).map(|x| sigma[(x / q, x % q)]).collect();
                    cholesky_in_place(&mut l, q)?;
                    let logdet = 2.0 * (0..q).map(|i| l[i * q + i].ln()).sum::<f64>();
                    let precision = inverse_from_cholesky(&l, q);
                    let mut zt = Vec::with_capacity(n * q);
                    for i in 0..n {
                        zt.extend_from_slice(model.z_row(t, i));
                    }
                    TermState {
                        k,
                        zt,
                        precision: Some(precision),
                        logdet_prior: logdet,
                    }
                }
            };
            terms.push(state);
        }
        Ok(Self {
            model,
            phi,
            eta_fixed,
            terms,
        })
    }

    pub fn model(&self) -> &JointModel {
        self.model
    }

    /// `eta = X beta + sum_t Z_t b_t` with `b = Lambda u` for rr terms.
    pub fn linear_predictor(&self, v: &[f64]) -> Vec<f64> {
        let layout = self.model.latent_layout();
        let mut eta = self.eta_fixed.clone();
        for (t, ts) in self.terms.iter().enumerate() {
            let k = ts.k;
            for (i, e) in eta.iter_mut().enumerate() {
                let base = layout.index(t, self.model.group_of(t, i), 0);
                let row = &ts.zt[i * k..(i + 1) * k];
                *e += row.iter().zip(&v[base..base + k]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        eta
    }

    /// Negative conditional log-likelihood `-sum_i log f(y_i | eta_i)`.
    fn neg_loglik(&self, eta: &[f64]) -> f64 {
        let fam = self.model.family;
        let y = self.model.y();
        let yc = self.model.y_const();
        -eta.iter()
            .enumerate()
            .map(|(i, &e)| fam.log_kernel(y[i], e, self.phi) + yc[i])
            .sum::<f64>()
    }

    /// `(1/2) v' P v` plus the normalizing constants of the latent prior.
    fn prior_term(&self, v: &[f64]) -> f64 {
        let layout = self.model.latent_layout();
        let mut total = 0.0;
        for (t, ts) in self.terms.iter().enumerate() {
            let (k, m) = layout.term_shape(t);
            total += 0.5 * m as f64 * (k as f64 * (2.0 * PI).ln() + ts.logdet_prior);
            for g in 0..m {
                let base = layout.index(t, g, 0);
                let x = &v[base..base + k];
                total += 0.5
                    * match &ts.precision {
                        None => x.iter().map(|a| a * a).sum::<f64>(),
                        Some(p) => quad_form(p, x),
                    };
            }
        }
        total
    }

    /// Joint negative log-density of `(y, v)`.
    pub fn joint_neg_logdensity(&self, v: &[f64]) -> f64 {
        let eta = self.linear_predictor(v);
        self.neg_loglik(&eta) + self.prior_term(v)
    }

    /// Gradient of the joint negative log-density.
    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let eta = self.linear_predictor(v);
        let mut g = vec![0.0; v.len()];
        self.accumulate(v, &eta, &mut g, None);
        g
    }

    /// Hessian of the joint negative log-density, `Z~' W Z~ + P`.
    pub fn hessian(&self, v: &[f64]) -> BlockHessian {
        let eta = self.linear_predictor(v);
        let mut g = vec![0.0; v.len()];
        let mut h = self.empty_hessian();
        self.accumulate(v, &eta, &mut g, Some(&mut h));
        h
    }

    fn empty_hessian(&self) -> BlockHessian {
        let layout = self.model.latent_layout();
        BlockHessian::zeros(layout.n_blocks, layout.block_size, layout.n_secondary)
    }

    /// Adds the gradient (and optionally the Hessian) at `v` into the buffers.
    fn accumulate(&self, v: &[f64], eta: &[f64], g: &mut [f64], mut h: Option<&mut BlockHessian>) {
        let layout = self.model.latent_layout();
        let fam = self.model.family;
        let y = self.model.y();
        let nt = self.terms.len();
        let mut idx: Vec<usize> = Vec::new();
        let mut val: Vec<f64> = Vec::new();
        for (i, &e) in eta.iter().enumerate() {
            let (d1, d2) = fam.derivs(y[i], e, self.phi);
            idx.clear();
            val.clear();
            for t in 0..nt {
                let ts = &self.terms[t];
                let base = layout.index(t, self.model.group_of(t, i), 0);
                for c in 0..ts.k {
                    let z = ts.zt[i * ts.k + c];
                    g[base + c] += d1 * z;
                    idx.push(base + c);
                    val.push(z);
                }
            }
            if let Some(h) = h.as_deref_mut() {
                for a in 0..idx.len() {
                    let wa = d2 * val[a];
                    if wa == 0.0 {
                        continue;
                    }
                    for b in 0..idx.len() {
                        h.add(idx[a], idx[b], wa * val[b]);
                    }
                }
            }
        }
        for (t, ts) in self.terms.iter().enumerate() {
            let (k, m) = layout.term_shape(t);
            for grp in 0..m {
                let base = layout.index(t, grp, 0);
                match &ts.precision {
                    None => {
                        for c in 0..k {
                            g[base + c] += v[base + c];
                            if let Some(h) = h.as_deref_mut() {
                                h.add(base + c, base + c, 1.0);
                            }
                        }
                    }
                    Some(p) => {
                        for r in 0..k {
                            let mut s = 0.0;
                            for c in 0..k {
                                s += p[r * k + c] * v[base + c];
                                if let Some(h) = h.as_deref_mut() {
                                    h.add(base + r, base + c, p[r * k + c]);
                                }
                            }
                            g[base + r] += s;
                        }
                    }
                }
            }
        }
    }
}

fn quad_form(p: &[f64], x: &[f64]) -> f64 {
    let k = x.len();
    let mut s = 0.0;
    for r in 0..k {
        for c in 0..k {
            s += x[r] * p[r * k + c] * x[c];
        }
    }
    s
}

/// `(L L')^{-1}` from a row-major lower Cholesky factor.
fn inverse_from_cholesky(l: &[f64], q: usize) -> Vec<f64> {
    // Invert L by forward substitution, then form L^{-T} L^{-1}.
    let mut li = vec![0.0; q * q];
    for j in 0..q {
        li[j * q + j] = 1.0 / l[j * q + j];
        for i in j + 1..q {
            let s: f64 = (j..i).map(|k| l[i * q + k] * li[k * q + j]).sum();
            li[i * q + j] = -s / l[i * q + i];
        }
    }
    let mut out = vec![0.0; q * q];
    for r in 0..q {
        for c in 0..=r {
            let s: f64 = (r..q).map(|k| li[k * q + r] * li[k * q + c]).sum();
            out[r * q + c] = s;
            out[c * q + r] = s;
        }
    }
    out
}

fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Result of the inner mode search.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub v_hat: LatentState,
    /// Joint negative log-density at the mode.
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub hessian: BlockHessian,
    pub factor: BlockFactor,
}

/// Safeguarded Newton search for the mode of the joint density in the latent
/// coordinates. Steps are halved until the objective decreases.
pub fn inner_newton(
    model: &JointModel,
    psi: &ParamVector,
    v0: &LatentState,
    tol: f64,
    max_iter: usize,
) -> Result<InnerSolution> {
    let prep = Prepared::new(model, psi)?;
    prep.inner_newton(v0, tol, max_iter)
}

impl Prepared<'_> {
    pub fn inner_newton(&self, v0: &LatentState, tol: f64, max_iter: usize) -> Result<InnerSolution> {
        let dim = self.model.latent_layout().dim();
        if v0.values.len() != dim {
            return Err(Error::Dimension(format!(
                "latent state has length {}, model expects {dim}",
                v0.values.len()
            )));
        }
        let mut v = v0.values.clone();
        let mut obj = self.joint_neg_logdensity(&v);
        if !obj.is_finite() {
            v = vec![0.0; dim];
            obj = self.joint_neg_logdensity(&v);
            if !obj.is_finite() {
                return Err(Error::Numerical("joint density is not finite at the prior mode".into()));
            }
        }
        let mut h = self.empty_hessian();
        let mut g = vec![0.0; dim];
        let mut converged = false;
        let mut polish = 0;
        let mut iterations = 0;
        let mut last_gnorm = f64::INFINITY;
        loop {
            let eta = self.linear_predictor(&v);
            g.iter_mut().for_each(|x| *x = 0.0);
            h.clear();
            self.accumulate(&v, &eta, &mut g, Some(&mut h));
            let gnorm = sup_norm(&g);
            let factor = h.factor()?;
            let done_polish = converged && (polish >= POLISH_STEPS || gnorm >= last_gnorm);
            if !converged && gnorm <= tol * obj.abs().max(1.0) {
                converged = true;
            }
            if dim == 0 || done_polish || gnorm == 0.0 || (!converged && iterations >= max_iter) {
                return Ok(InnerSolution {
                    v_hat: LatentState { values: v },
                    objective: obj,
                    gradient_norm: gnorm,
                    iterations,
                    converged,
                    hessian: h,
                    factor,
                });
            }
            if converged {
                polish += 1;
            }
            last_gnorm = gnorm;
            let step = factor.solve(&g);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let trial: Vec<f64> = v.iter().zip(&step).map(|(a, s)| a - t * s).collect();
                let f = self.joint_neg_logdensity(&trial);
                // Once converged, allow rounding-level ties so the polish steps
                // can reach machine precision in the gradient.
                let slack = if converged { 1e-13 * obj.abs().max(1.0) } else { 0.0 };
                if f.is_finite() && f <= obj + slack {
                    v = trial;
                    obj = f;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            iterations += 1;
            if !accepted {
                if converged {
                    // Nothing left to gain; report the current point.
                    polish = POLISH_STEPS;
                    last_gnorm = 0.0;
                    continue;
                }
                return Err(Error::Numerical("inner line search failed".into()));
            }
        }
    }

    /// Laplace negative log-likelihood from a solved mode.
    pub fn laplace_from(&self, sol: &InnerSolution) -> f64 {
        let dim = self.model.latent_layout().dim() as f64;
        sol.objective + 0.5 * sol.factor.logdet() - 0.5 * dim * (2.0 * PI).ln()
    }
}

/// Laplace approximation to the marginal negative log-likelihood.
#[derive(Debug, Clone)]
pub struct LaplaceEval {
    /// `+inf` when the inner solve failed.
    pub nll: f64,
    pub v_hat: LatentState,
    pub inner_converged: bool,
    pub inner_iterations: usize,
}

/// Evaluates the Laplace objective. Inner failures yield a non-finite `nll`
/// instead of an error so that outer line searches can back off.
pub fn laplace_nll(model: &JointModel, psi: &ParamVector, warm_start: Option<&LatentState>) -> LaplaceEval {
    let zero = LatentState::zeros(model.latent_layout());
    let start = warm_start
        .filter(|w| w.values.len() == zero.values.len())
        .unwrap_or(&zero);
    let failed = |v: LatentState| LaplaceEval {
        nll: f64::INFINITY,
        v_hat: v,
        inner_converged: false,
        inner_iterations: 0,
    };
    let prep = match Prepared::new(model, psi) {
        Ok(p) => p,
        Err(_) => return failed(start.clone()),
    };
    let mut sol = prep.inner_newton(start, INNER_TOL, INNER_MAX_ITER);
    if !matches!(&sol, Ok(s) if s.converged) && warm_start.is_some() {
        sol = prep.inner_newton(&zero, INNER_TOL, INNER_MAX_ITER);
    }
    match sol {
        Ok(s) if s.converged => {
            let nll = prep.laplace_from(&s);
            LaplaceEval {
                nll: if nll.is_finite() { nll } else { f64::INFINITY },
                v_hat: s.v_hat,
                inner_converged: true,
                inner_iterations: s.iterations,
            }
        }
        Ok(s) => failed(s.v_hat),
        Err(_) => failed(start.clone()),
    }
}

/// `eta` at the given parameters and latent state.
pub fn linear_predictor(model: &JointModel, psi: &ParamVector, v: &LatentState) -> Result<Vec<f64>> {
    Ok(Prepared::new(model, psi)?.linear_predictor(&v.values))
}

/// Joint negative log-density at the given parameters and latent state.
pub fn joint_neg_logdensity(model: &JointModel, psi: &ParamVector, v: &LatentState) -> Result<f64> {
    Ok(Prepared::new(model, psi)?.joint_neg_logdensity(&v.values))
}
