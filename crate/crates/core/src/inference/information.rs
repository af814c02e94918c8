use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::laplace::{laplace_nll, JointModel, LatentState};
use crate::optimize::{fd_step, FitResult};

/// Observed information of the Laplace likelihood and its inverse.
#[derive(Debug, Clone)]
pub struct Information {
    pub matrix: DMatrix<f64>,
    /// Inverse of `matrix`, or its pseudo-inverse when not positive definite.
    pub covariance: DMatrix<f64>,
    pub positive_definite: bool,
}

impl Information {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.covariance.nrows())
            .map(|i| {
                let v = self.covariance[(i, i)];
                if v > 0.0 {
                    v.sqrt()
                } else {
                    f64::NAN
                }
            })
            .collect()
    }
}

/// Step for the second differences at coordinate value `x`.
fn hess_step(x: f64) -> f64 {
    1e-4 * x.abs().max(1.0)
}

/// Central second differences of `f` at `x`, symmetrized.
pub fn numeric_hessian<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64]) -> DMatrix<f64> {
    let p = x.len();
    let f0 = f(x);
    let mut h = DMatrix::zeros(p, p);
    let mut probe = x.to_vec();
    let steps: Vec<f64> = x.iter().map(|&v| hess_step(v)).collect();
    for i in 0..p {
        probe[i] = x[i] + steps[i];
        let fp = f(&probe);
        probe[i] = x[i] - steps[i];
        let fm = f(&probe);
        probe[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
        for j in 0..i {
            let mut at = |si: f64, sj: f64| {
                probe[i] = x[i] + si * steps[i];
                probe[j] = x[j] + sj * steps[j];
                let v = f(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let v = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * steps[i] * steps[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Inverse of a symmetric matrix, falling back to the eigenvalue
/// pseudo-inverse. The flag reports positive definiteness.
pub fn invert_information(info: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let p = info.nrows();
    if p == 0 {
        return (DMatrix::zeros(0, 0), true);
    }
    if let Some(chol) = info.clone().cholesky() {
        return (chol.inverse(), true);
    }
    let eig = SymmetricEigen::new(info.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut inv = DMatrix::zeros(p, p);
    for k in 0..p {
        let l = eig.eigenvalues[k];
        if l > 1e-10 * max {
            let v = eig.eigenvectors.column(k);
            inv += (&v * v.transpose()) / l;
        }
    }
    (inv, false)
}

/// Numeric Hessian of the Laplace negative log-likelihood at the fitted
/// parameters, with the latent modes profiled out.
pub fn observed_information(model: &JointModel, fit: &FitResult) -> Information {
    let x = fit.psi_hat.pack();
    let anchor: LatentState = fit.v_hat.clone();
    let mut f = |p: &[f64]| match model.unpack(p) {
        Ok(psi) => laplace_nll(model, &psi, Some(&anchor)).nll,
        Err(_) => f64::INFINITY,
    };
    let matrix = numeric_hessian(&mut f, &x);
    let (covariance, positive_definite) = invert_information(&matrix);
    if !positive_definite {
        log::warn!("observed information is not positive definite; standard errors use a pseudo-inverse");
    }
    Information {
        matrix,
        covariance,
        positive_definite,
    }
}

/// Central-difference Jacobian of `transform` at `x`.
pub fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(transform: &F, x: &[f64]) -> DMatrix<f64> {
    let f0 = transform(x);
    let mut j = DMatrix::zeros(f0.len(), x.len());
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        let h = fd_step(x[k]);
        probe[k] = x[k] + h;
        let fp = transform(&probe);
        probe[k] = x[k] - h;
        let fm = transform(&probe);
        probe[k] = x[k];
        for r in 0..f0.len() {
            j[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

/// Delta-method standard errors `sqrt(diag(J V J'))` of `transform` at `x`.
pub fn delta_se<F: Fn(&[f64]) -> Vec<f64>>(x: &[f64], covariance: &DMatrix<f64>, transform: F) -> Vec<f64> {
    let j = jacobian(&transform, x);
    let v = &j * covariance * j.transpose();
    (0..v.nrows())
        .map(|i| if v[(i, i)] >= 0.0 { v[(i, i)].sqrt() } else { f64::NAN })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub aic: f64,
    pub bic: f64,
    pub loglik: f64,
    pub deviance: f64,
    pub df: usize,
}

/// `AIC = 2k - 2l`, `BIC = k log n - 2l`, deviance `-2l`.
pub fn information_criteria(loglik: f64, k: usize, n: usize) -> InformationCriteria {
    let kf = k as f64;
    InformationCriteria {
        aic: 2.0 * kf - 2.0 * loglik,
        bic: kf * (n as f64).ln() - 2.0 * loglik,
        loglik,
        deviance: -2.0 * loglik,
        df: k,
    }
}

/// Coefficient table row: estimate, standard error, Wald z and two-sided p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_value: f64,
}

pub fn coefficient_table(names: &[String], estimates: &[f64], se: &[f64]) -> Vec<Coefficient> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    names
        .iter()
        .zip(estimates.iter().zip(se))
        .map(|(name, (&estimate, &std_error))| {
            let z_value = estimate / std_error;
            let p_value = if z_value.is_finite() {
                2.0 * normal.sf(z_value.abs())
            } else {
                f64::NAN
            };
            Coefficient {
                name: name.clone(),
                estimate,
                std_error,
                z_value,
                p_value,
            }
        })
        .collect()
}
