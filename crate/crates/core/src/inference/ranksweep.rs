use serde::{Deserialize, Serialize};

use crate::covstruct::CovKind;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::formula::{build_design, DataTable, ModelSpec};
use crate::laplace::{laplace_nll, JointModel, LatentState};
use crate::optimize::{fit_from, fit_model, FitControl, FitResult};

use super::bootstrap::map_by_name;
use super::information::{coefficient_table, information_criteria, observed_information, Coefficient};

/// 95% normal confidence multiplier.
pub const CI_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEstimate {
    #[serde(flatten)]
    pub coef: Coefficient,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// One rank of a sweep. Invalid or failed ranks keep their row with flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSweepRow {
    pub d: usize,
    pub valid: bool,
    pub converged: bool,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub df: usize,
    pub fixed: Vec<FixedEstimate>,
    pub message: String,
}

impl RankSweepRow {
    fn failed(d: usize, valid: bool, message: String) -> Self {
        Self {
            d,
            valid,
            converged: false,
            loglik: f64::NAN,
            aic: f64::NAN,
            bic: f64::NAN,
            df: 0,
            fixed: Vec::new(),
            message,
        }
    }
}

/// The model formula with random term `term` set to rank `d` (`d = 0` drops it).
pub fn with_rank(spec: &ModelSpec, term: usize, d: usize) -> ModelSpec {
    let mut out = spec.clone();
    if d == 0 {
        out.random.remove(term);
    } else {
        out.random[term].structure = CovKind::Rr { rank: d };
    }
    out
}

/// Index of the first reduced-rank term of a spec.
pub fn first_rr_term(spec: &ModelSpec) -> Option<usize> {
    spec.random.iter().position(|r| matches!(r.structure, CovKind::Rr { .. }))
}

/// Latent start for `to` copied from `from` term by term (matched by grouping
/// factor and varying expression), padding new coordinates with zeros.
pub fn embed_latents(from: &JointModel, v: &LatentState, to: &JointModel) -> LatentState {
    let mut out = LatentState::zeros(to.latent_layout());
    for (t, r) in to.random().iter().enumerate() {
        let Some(s) = from
            .random()
            .iter()
            .position(|f| f.group_name() == r.group_name() && f.term.varying == r.term.varying)
        else {
            continue;
        };
        let (k_to, m) = to.latent_layout().term_shape(t);
        let (k_from, m_from) = from.latent_layout().term_shape(s);
        if m != m_from {
            continue;
        }
        for g in 0..m {
            let mut coords = v.get(from.latent_layout(), s, g);
            coords.resize(k_to, 0.0);
            if k_from > k_to {
                coords.truncate(k_to);
            }
            out.set(to.latent_layout(), t, g, &coords);
        }
    }
    out
}

fn summarize(model: &JointModel, fit: &FitResult, d: usize) -> RankSweepRow {
    let info = observed_information(model, fit);
    let se = info.standard_errors();
    let p = model.param_layout().n_beta;
    let ic = information_criteria(fit.loglik(), model.n_params(), model.n_obs());
    let fixed = coefficient_table(&model.design.x_names, &fit.psi_hat.beta, &se[..p])
        .into_iter()
        .map(|coef| FixedEstimate {
            ci_lower: coef.estimate - CI_Z * coef.std_error,
            ci_upper: coef.estimate + CI_Z * coef.std_error,
            coef,
        })
        .collect();
    RankSweepRow {
        d,
        valid: true,
        converged: fit.converged,
        loglik: ic.loglik,
        aic: ic.aic,
        bic: ic.bic,
        df: ic.df,
        fixed,
        message: if info.positive_definite {
            fit.message.clone()
        } else {
            format!("{}; information not positive definite", fit.message)
        },
    }
}

/// Fits the model once per rank of random term `term`, sharing the seed
/// (and therefore the start residuals) across ranks. Each rank is also
/// started from the previous rank's solution with a zero extra column, and
/// the better of the two fits is kept, so the likelihood cannot drop as the
/// rank grows.
pub fn rank_sweep(
    spec: &ModelSpec,
    data: &DataTable,
    family: Family,
    term: usize,
    d_values: &[usize],
    control: &FitControl,
) -> Result<Vec<(RankSweepRow, Option<(JointModel, FitResult)>)>> {
    let base = spec
        .random
        .get(term)
        .ok_or_else(|| Error::InvalidArgument(format!("formula has no random term {term}")))?;
    let q = build_design(
        &ModelSpec {
            random: vec![base.clone()],
            ..spec.clone()
        },
        data,
    )?
    .random[0]
        .q();
    let mut ds = d_values.to_vec();
    ds.sort_unstable();
    ds.dedup();
    let mut out: Vec<(RankSweepRow, Option<(JointModel, FitResult)>)> = Vec::with_capacity(ds.len());
    let mut prev: Option<(JointModel, FitResult)> = None;
    for d in ds {
        if d > q {
            out.push((RankSweepRow::failed(d, false, format!("rank {d} exceeds dimension {q}")), None));
            continue;
        }
        let model = JointModel::new(build_design(&with_rank(spec, term, d), data)?, family)?;
        let direct = fit_model(&model, control);
        let nested = prev.as_ref().map(|(pm, pf)| {
            let default = model.unpack(&vec![0.0; model.n_params()]).expect("length");
            let psi0 = map_by_name(pm, &pf.psi_hat, &model, &default);
            let v0 = embed_latents(pm, &pf.v_hat, &model);
            let mut f = fit_from(&model, &psi0, &v0, control);
            f.start_nll = laplace_nll(&model, &psi0, Some(&v0)).nll;
            f
        });
        let candidates: Vec<FitResult> = match direct {
            Ok(f) => std::iter::once(f).chain(nested).collect(),
            Err(Error::NoConvergence { best, .. }) => best.map(|b| *b).into_iter().chain(nested).collect(),
            Err(e) => {
                out.push((RankSweepRow::failed(d, true, e.to_string()), None));
                continue;
            }
        };
        let best = candidates
            .into_iter()
            .filter(|f| f.nll.is_finite())
            .min_by(|a, b| (!a.converged).cmp(&!b.converged).then(a.nll.total_cmp(&b.nll)));
        match best {
            Some(fit) => {
                out.push((summarize(&model, &fit, d), Some((model.clone(), fit.clone()))));
                if fit.converged {
                    prev = Some((model, fit));
                }
            }
            None => out.push((RankSweepRow::failed(d, true, "no finite fit".into()), None)),
        }
    }
    Ok(out)
}
