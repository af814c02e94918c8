use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covstruct::{cov_to_sd_corr, CovKind};
use crate::error::{Error, Result};
use crate::laplace::{JointModel, ParamVector, Prepared};
use crate::optimize::FitResult;

/// Standard deviations and correlations of one random term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarCorrTerm {
    pub group: String,
    pub label: String,
    pub structure: String,
    pub rank: Option<usize>,
    pub names: Vec<String>,
    pub sd: Vec<f64>,
    pub corr: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarCorrReport {
    pub terms: Vec<VarCorrTerm>,
    /// Residual standard deviation (gaussian family only).
    pub residual_sd: Option<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Per-term standard deviations and correlations of the realized covariance.
pub fn var_corr(model: &JointModel, psi: &ParamVector) -> VarCorrReport {
    let terms = model
        .random()
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let (sd, corr) = cov_to_sd_corr(&model.term_cov(psi, t));
            VarCorrTerm {
                group: r.group_name().to_string(),
                label: r.label(),
                structure: r.structure().name().to_string(),
                rank: r.structure().rank(),
                names: r.z_names.clone(),
                sd,
                corr: rows(&corr),
            }
        })
        .collect();
    VarCorrReport {
        terms,
        residual_sd: psi.log_phi.map(|lp| (0.5 * lp).exp()),
    }
}

/// Latent scores and loadings of a reduced-rank term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ordination {
    pub term: String,
    pub groups: Vec<String>,
    pub variables: Vec<String>,
    pub axes: Vec<String>,
    /// `m x d`, row-major.
    pub scores: Vec<Vec<f64>>,
    /// `q x d`, row-major.
    pub loadings: Vec<Vec<f64>>,
}

impl Ordination {
    pub fn scores_matrix(&self) -> DMatrix<f64> {
        let d = self.axes.len();
        DMatrix::from_fn(self.scores.len(), d, |i, j| self.scores[i][j])
    }

    pub fn loadings_matrix(&self) -> DMatrix<f64> {
        let d = self.axes.len();
        DMatrix::from_fn(self.loadings.len(), d, |i, j| self.loadings[i][j])
    }
}

/// Scores (latent modes) and loadings for rr term `term`.
pub fn ordination(model: &JointModel, fit: &FitResult, term: usize) -> Result<Ordination> {
    let r = model
        .random()
        .get(term)
        .ok_or_else(|| Error::InvalidArgument(format!("model has no random term {term}")))?;
    let CovKind::Rr { rank } = r.structure() else {
        return Err(Error::InvalidArgument(format!("term {} is not reduced-rank", r.label())));
    };
    let loading = model
        .covariance_structure(&fit.psi_hat, term)
        .loading()
        .expect("rr term has a loading matrix");
    let layout = model.latent_layout();
    let scores = (0..r.n_groups()).map(|g| fit.v_hat.get(layout, term, g)).collect();
    Ok(Ordination {
        term: r.label(),
        groups: r.group_levels.clone(),
        variables: r.z_names.clone(),
        axes: (1..=rank).map(|k| format!("LV{k}")).collect(),
        scores,
        loadings: rows(loading.values()),
    })
}

/// Indices of the reduced-rank terms.
pub fn rr_terms(model: &JointModel) -> Vec<usize> {
    model
        .random()
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r.structure(), CovKind::Rr { .. }))
        .map(|(t, _)| t)
        .collect()
}

/// Conditional mode of one latent coordinate with its approximate
/// conditional standard deviation from the inverse joint Hessian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMode {
    pub term: String,
    pub group: String,
    pub coordinate: String,
    pub mode: f64,
    pub cond_sd: f64,
}

/// Conditional modes of all latent coordinates. Reduced-rank coordinates
/// are named by axis, others by random-effect column.
pub fn conditional_modes(model: &JointModel, fit: &FitResult) -> Result<Vec<LatentMode>> {
    let prep = Prepared::new(model, &fit.psi_hat)?;
    let factor = prep.hessian(&fit.v_hat.values).factor()?;
    let inv = factor.inverse();
    let layout = model.latent_layout();
    let mut out = Vec::with_capacity(layout.dim());
    for (t, r) in model.random().iter().enumerate() {
        let names: Vec<String> = match r.structure() {
            CovKind::Rr { rank } => (1..=rank).map(|k| format!("LV{k}")).collect(),
            _ => r.z_names.clone(),
        };
        for (g, level) in r.group_levels.iter().enumerate() {
            for (c, name) in names.iter().enumerate() {
                let idx = layout.index(t, g, c);
                out.push(LatentMode {
                    term: r.label(),
                    group: level.clone(),
                    coordinate: name.clone(),
                    mode: fit.v_hat.values[idx],
                    cond_sd: inv[(idx, idx)].max(0.0).sqrt(),
                });
            }
        }
    }
    Ok(out)
}
