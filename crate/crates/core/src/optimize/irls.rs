use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::{Family, Link};

const MAX_ITER: usize = 50;
const GRAD_TOL: f64 = 1e-10;
/// Coefficients beyond this magnitude on the logit scale indicate separation.
const SEPARATION_CAP: f64 = 30.0;

/// Maximum-likelihood fit of a generalized linear model.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    /// Residual mean square for the gaussian family, 1 otherwise.
    pub phi: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when coefficients were capped because of separation.
    pub separated: bool,
}

/// Errors when `x` does not have full column rank.
pub fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let p = x.ncols();
    if p == 0 {
        return Ok(());
    }
    if x.nrows() < p {
        return Err(Error::RankDeficient(format!("{} rows for {p} columns", x.nrows())));
    }
    let r = x.clone().qr().r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if let Some(j) = (0..p).find(|&i| r[(i, i)].abs() <= 1e-10 * scale.max(1e-300)) {
        return Err(Error::RankDeficient(format!("column {j} is a linear combination of earlier columns")));
    }
    Ok(())
}

/// Iteratively reweighted least squares for a canonical-link GLM.
pub fn irls_glm(x: &DMatrix<f64>, y: &[f64], family: Family, link: Link) -> Result<GlmFit> {
    family.check_link(link)?;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows but y has {}", y.len())));
    }
    for &v in y {
        family.check_response(v)?;
    }
    check_full_rank(x)?;

    let mut mu: Vec<f64> = match family {
        Family::Gaussian => y.to_vec(),
        Family::Poisson => y.iter().map(|v| v + 0.1).collect(),
        Family::Bernoulli => y.iter().map(|v| (v + 0.5) / 2.0).collect(),
    };
    let mut eta: Vec<f64> = mu.iter().map(|&m| link.link(m)).collect();
    let mut beta = vec![0.0; p];
    let mut converged = p == 0;
    let mut separated = false;
    let mut iterations = 0;
    while !converged && iterations < MAX_ITER {
        iterations += 1;
        let w: Vec<f64> = mu.iter().map(|&m| family.variance(m).max(1e-12)).collect();
        let z: Vec<f64> = (0..n).map(|i| eta[i] + (y[i] - mu[i]) / w[i]).collect();
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        for i in 0..n {
            for a in 0..p {
                let xa = x[(i, a)] * w[i];
                xtwz[a] += xa * z[i];
                for b in 0..=a {
                    xtwx[(a, b)] += xa * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        let chol = xtwx
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("weighted cross-product is singular".into()))?;
        let mut next: Vec<f64> = chol.solve(&xtwz).iter().copied().collect();
        if family == Family::Bernoulli && next.iter().any(|b| b.abs() > SEPARATION_CAP) {
            log::warn!("possible separation: coefficients capped at +/-{SEPARATION_CAP}");
            separated = true;
            next.iter_mut().for_each(|b| *b = b.clamp(-SEPARATION_CAP, SEPARATION_CAP));
        }
        beta = next;
        eta = (0..n).map(|i| (0..p).map(|j| x[(i, j)] * beta[j]).sum()).collect();
        mu = eta.iter().map(|&e| link.inverse(e)).collect();
        let grad = (0..p)
            .map(|j| (0..n).map(|i| x[(i, j)] * (y[i] - mu[i])).sum::<f64>().abs())
            .fold(0.0, f64::max);
        if grad <= GRAD_TOL * (n as f64).max(1.0) || separated {
            converged = !separated;
            break;
        }
    }
    if p == 0 {
        mu = vec![link.inverse(0.0); n];
    }
    let phi = match family {
        Family::Gaussian => {
            let rss: f64 = y.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum();
            let dof = if n > p { n - p } else { n.max(1) };
            (rss / dof as f64).max(1e-12)
        }
        _ => 1.0,
    };
    Ok(GlmFit {
        beta,
        mu,
        phi,
        iterations,
        converged,
        separated,
    })
}
