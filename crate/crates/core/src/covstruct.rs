//! Random-effect covariance structures.
//!
//! Each structure maps an unconstrained vector `theta` to a `q x q`
//! covariance matrix:
//!
//! * `diag`: `theta` holds log standard deviations.
//! * `us`: `q` log standard deviations followed by `q(q-1)/2` entries of a
//!   unit-diagonal lower-triangular factor, listed row by row. Each row of the
//!   factor is normalized to unit length, giving the Cholesky root of the
//!   correlation matrix.
//! * `rr`: the free entries of a `q x d` loading matrix `L` whose entries above
//!   the diagonal are zero, listed column by column; the covariance is `L L^T`.
//!
//! Raw rr loadings are only identified up to the sign of each column (and a
//! rotation when the triangular pattern is not enforced). Anything reported
//! from `L L^T` is invariant to that ambiguity; raw loadings are not.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are treated as zero when forming correlations.
pub const SD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovKind {
    Diag,
    Us,
    Rr { rank: usize },
}

impl CovKind {
    pub fn name(self) -> &'static str {
        match self {
            CovKind::Diag => "diag",
            CovKind::Us => "us",
            CovKind::Rr { .. } => "rr",
        }
    }

    pub fn rank(self) -> Option<usize> {
        match self {
            CovKind::Rr { rank } => Some(rank),
            _ => None,
        }
    }

    /// Number of latent coordinates per group: `d` for rr, `q` otherwise.
    pub fn latent_dim(self, q: usize) -> usize {
        match self {
            CovKind::Rr { rank } => rank,
            _ => q,
        }
    }
}

/// Length of `theta` for a structure of dimension `q`.
pub fn num_params(kind: CovKind, q: usize) -> Result<usize> {
    if q == 0 {
        return Err(Error::InvalidArgument("covariance dimension must be at least 1".into()));
    }
    Ok(match kind {
        CovKind::Diag => q,
        CovKind::Us => q * (q + 1) / 2,
        CovKind::Rr { rank: d } => {
            if d == 0 || d > q {
                return Err(Error::InvalidRank { rank: d, q });
            }
            d * q - d * (d - 1) / 2
        }
    })
}

/// A `q x d` loading matrix with zeros above the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrix {
    values: DMatrix<f64>,
}

impl LoadingMatrix {
    /// Wraps `values`, rejecting nonzero entries above the diagonal.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (q, d) = values.shape();
        if d > q {
            return Err(Error::InvalidRank { rank: d, q });
        }
        for j in 0..d {
            for i in 0..j {
                if values[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "loading entry ({i}, {j}) above the diagonal must be zero"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn q(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Inverse of [`theta_to_loading`].
    pub fn to_theta(&self) -> Vec<f64> {
        let (q, d) = self.values.shape();
        let mut theta = Vec::with_capacity(d * q - d * (d.saturating_sub(1)) / 2);
        for j in 0..d {
            for i in j..q {
                theta.push(self.values[(i, j)]);
            }
        }
        theta
    }
}

/// Fills the lower trapezoid of a `q x d` matrix column by column.
pub fn theta_to_loading(theta: &[f64], q: usize, d: usize) -> Result<LoadingMatrix> {
    let expected = num_params(CovKind::Rr { rank: d }, q)?;
    if theta.len() != expected {
        return Err(Error::Dimension(format!(
            "rr(q={q}, d={d}) needs {expected} parameters, got {}",
            theta.len()
        )));
    }
    let mut values = DMatrix::zeros(q, d);
    let mut k = 0;
    for j in 0..d {
        for i in j..q {
            values[(i, j)] = theta[k];
            k += 1;
        }
    }
    Ok(LoadingMatrix { values })
}

/// `L L^T`.
pub fn loading_to_cov(loading: &LoadingMatrix) -> DMatrix<f64> {
    let l = &loading.values;
    l * l.transpose()
}

/// A covariance structure together with its parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStructure {
    pub kind: CovKind,
    pub q: usize,
    pub theta: Vec<f64>,
}

impl CovarianceStructure {
    pub fn new(kind: CovKind, q: usize, theta: Vec<f64>) -> Result<Self> {
        let n = num_params(kind, q)?;
        if theta.len() != n {
            return Err(Error::Dimension(format!(
                "{} structure with q={q} needs {n} parameters, got {}",
                kind.name(),
                theta.len()
            )));
        }
        Ok(Self { kind, q, theta })
    }

    pub fn cov(&self) -> DMatrix<f64> {
        theta_to_cov(self)
    }

    /// Loading matrix for rr structures.
    pub fn loading(&self) -> Option<LoadingMatrix> {
        match self.kind {
            CovKind::Rr { rank } => theta_to_loading(&self.theta, self.q, rank).ok(),
            _ => None,
        }
    }
}

/// Correlation Cholesky factor of the `us` parameterization.
fn us_corr_factor(corr_theta: &[f64], q: usize) -> DMatrix<f64> {
    let mut l = DMatrix::identity(q, q);
    let mut k = 0;
    for i in 1..q {
        for j in 0..i {
            l[(i, j)] = corr_theta[k];
            k += 1;
        }
    }
    for i in 0..q {
        let norm = l.row(i).norm();
        for j in 0..=i {
            l[(i, j)] /= norm;
        }
    }
    l
}

pub fn theta_to_cov(cs: &CovarianceStructure) -> DMatrix<f64> {
    let q = cs.q;
    match cs.kind {
        CovKind::Diag => DMatrix::from_fn(q, q, |i, j| if i == j { (2.0 * cs.theta[i]).exp() } else { 0.0 }),
        CovKind::Us => {
            let sd: Vec<f64> = cs.theta[..q].iter().map(|t| t.exp()).collect();
            let l = us_corr_factor(&cs.theta[q..], q);
            let corr = &l * l.transpose();
            DMatrix::from_fn(q, q, |i, j| if i == j { sd[i] * sd[i] } else { sd[i] * sd[j] * corr[(i, j)] })
        }
        CovKind::Rr { rank } => {
            let loading = theta_to_loading(&cs.theta, q, rank).expect("theta length checked at construction");
            loading_to_cov(&loading)
        }
    }
}

/// Standard deviations and correlations of a covariance matrix.
pub fn cov_to_sd_corr(s: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let q = s.nrows();
    let sd: Vec<f64> = (0..q).map(|i| s[(i, i)].max(0.0).sqrt()).collect();
    let corr = DMatrix::from_fn(q, q, |i, j| {
        if sd[i] < SD_FLOOR || sd[j] < SD_FLOOR {
            0.0
        } else if i == j {
            1.0
        } else {
            (s[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    });
    (sd, corr)
}

/// Rotates the rows of `loading` so the result has zeros above the diagonal.
/// Returns the rotated matrix and the orthogonal `d x d` rotation `Q`, with
/// `rotated = loading * Q`.
pub fn lower_trapezoid_rotation(loading: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (q, d) = loading.shape();
    debug_assert!(d <= q);
    // loading^T = Q R  =>  loading Q = R^T, which is lower trapezoidal.
    let qr = loading.transpose().qr();
    let rot = qr.q();
    let r = qr.r();
    let mut lower = r.transpose();
    for j in 0..d {
        for i in 0..j.min(q) {
            lower[(i, j)] = 0.0;
        }
    }
    debug_assert_eq!(rot.shape(), (d, d));
    (lower, rot)
}

/// A parameter vector whose realized covariance approximates `s`: exact for
/// diag (on the diagonal) and us (for positive-definite `s`), the best
/// rank-`d` approximation for rr.
pub fn cov_to_theta(kind: CovKind, s: &DMatrix<f64>) -> Result<Vec<f64>> {
    let q = s.nrows();
    if s.ncols() != q {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    match kind {
        CovKind::Diag => Ok((0..q).map(|i| 0.5 * s[(i, i)].max(1e-16).ln()).collect()),
        CovKind::Us => {
            let (sd, corr) = cov_to_sd_corr(s);
            let mut theta: Vec<f64> = sd.iter().map(|v| v.max(1e-8).ln()).collect();
            let mut shrink = 0.0;
            let chol = loop {
                let c = &corr * (1.0 - shrink) + DMatrix::identity(q, q) * shrink;
                if let Some(ch) = c.cholesky() {
                    break ch.l();
                }
                shrink = if shrink == 0.0 { 1e-8 } else { shrink * 10.0 };
                if shrink > 1.0 {
                    return Err(Error::Numerical("correlation matrix is not positive definite".into()));
                }
            };
            for i in 1..q {
                for j in 0..i {
                    theta.push(chol[(i, j)] / chol[(i, i)]);
                }
            }
            Ok(theta)
        }
        CovKind::Rr { rank } => {
            num_params(kind, q)?;
            let eig = SymmetricEigen::new(s.clone());
            let mut order: Vec<usize> = (0..q).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let mut root = DMatrix::zeros(q, rank);
            for (k, &idx) in order.iter().take(rank).enumerate() {
                let lam = eig.eigenvalues[idx].max(0.0).sqrt();
                for i in 0..q {
                    root[(i, k)] = eig.eigenvectors[(i, idx)] * lam;
                }
            }
            let (lower, _) = lower_trapezoid_rotation(&root);
            Ok(LoadingMatrix { values: lower }.to_theta())
        }
    }
}

/// Human-readable names for the entries of `theta`.
pub fn param_names(kind: CovKind, columns: &[String]) -> Vec<String> {
    let q = columns.len();
    match kind {
        CovKind::Diag => columns.iter().map(|c| format!("log_sd({c})")).collect(),
        CovKind::Us => {
            let mut names: Vec<String> = columns.iter().map(|c| format!("log_sd({c})")).collect();
            for i in 1..q {
                for j in 0..i {
                    names.push(format!("corr_factor({},{})", columns[i], columns[j]));
                }
            }
            names
        }
        CovKind::Rr { rank } => {
            let mut names = Vec::new();
            for j in 0..rank {
                for c in columns.iter().skip(j) {
                    names.push(format!("loading({c},LV{})", j + 1));
                }
            }
            names
        }
    }
}
