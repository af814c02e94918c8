use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covstruct::{self, CovKind, CovarianceStructure};
use crate::error::{Error, Result};
use crate::family::{Family, Link};
use crate::formula::{DesignSet, RandomDesign};

/// Packed positions of the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub n_beta: usize,
    pub theta_lens: Vec<usize>,
    pub has_log_phi: bool,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.n_beta + self.theta_lens.iter().sum::<usize>() + usize::from(self.has_log_phi)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta_offset(&self, term: usize) -> usize {
        self.n_beta + self.theta_lens[..term].iter().sum::<usize>()
    }

    pub fn log_phi_index(&self) -> Option<usize> {
        self.has_log_phi.then(|| self.len() - 1)
    }
}

/// Model parameters: fixed effects, per-term covariance parameters, and the
/// log dispersion (gaussian only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub beta: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub log_phi: Option<f64>,
}

impl ParamVector {
    pub fn pack(&self) -> Vec<f64> {
        let mut out = self.beta.clone();
        for t in &self.theta {
            out.extend_from_slice(t);
        }
        if let Some(lp) = self.log_phi {
            out.push(lp);
        }
        out
    }

    pub fn unpack(layout: &ParamLayout, values: &[f64]) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Dimension(format!(
                "parameter vector has length {}, model expects {}",
                values.len(),
                layout.len()
            )));
        }
        let beta = values[..layout.n_beta].to_vec();
        let mut at = layout.n_beta;
        let theta = layout
            .theta_lens
            .iter()
            .map(|&len| {
                let t = values[at..at + len].to_vec();
                at += len;
                t
            })
            .collect();
        let log_phi = layout.has_log_phi.then(|| values[at]);
        Ok(Self { beta, theta, log_phi })
    }

    pub fn phi(&self) -> f64 {
        self.log_phi.map_or(1.0, f64::exp)
    }
}

/// A random term as seen by the likelihood.
#[derive(Debug, Clone)]
pub struct TermInfo {
    pub kind: CovKind,
    pub q: usize,
    /// Latent coordinates per group (`d` for rr, `q` otherwise).
    pub k: usize,
    pub m: usize,
    /// Whether this term belongs to the block-diagonal part of the Hessian.
    pub primary: bool,
    /// For primary terms: position inside each group block. For secondary
    /// terms: start of this term inside the secondary segment.
    pub inner_offset: usize,
    /// Row-major `n x q` copy of `Z`.
    z: Vec<f64>,
    group_index: Vec<usize>,
}

/// Shape of the stacked latent vector.
///
/// Terms that share the grouping factor with the most levels are "primary":
/// their coordinates for group `g` are stored together in block `g`, giving a
/// block-diagonal Hessian for that part. All other terms follow in one
/// "secondary" segment, term by term and group by group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentLayout {
    /// Number of primary blocks.
    pub n_blocks: usize,
    /// Size of each primary block.
    pub block_size: usize,
    /// Size of the secondary segment.
    pub n_secondary: usize,
    /// `(kind-specific latent dim, groups, primary, inner offset)` per term.
    terms: Vec<(usize, usize, bool, usize)>,
}

impl LatentLayout {
    pub fn dim(&self) -> usize {
        self.n_blocks * self.block_size + self.n_secondary
    }

    pub fn secondary_start(&self) -> usize {
        self.n_blocks * self.block_size
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Index of coordinate `c` of term `t`, group `g`.
    #[inline]
    pub fn index(&self, t: usize, g: usize, c: usize) -> usize {
        let (k, _, primary, inner) = self.terms[t];
        if primary {
            g * self.block_size + inner + c
        } else {
            self.secondary_start() + inner + g * k + c
        }
    }

    /// Latent dimension and group count of term `t`.
    pub fn term_shape(&self, t: usize) -> (usize, usize) {
        (self.terms[t].0, self.terms[t].1)
    }
}

/// Latent coordinates laid out by a [`LatentLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub values: Vec<f64>,
}

impl LatentState {
    pub fn zeros(layout: &LatentLayout) -> Self {
        Self {
            values: vec![0.0; layout.dim()],
        }
    }

    pub fn get(&self, layout: &LatentLayout, t: usize, g: usize) -> Vec<f64> {
        let (k, _) = layout.term_shape(t);
        (0..k).map(|c| self.values[layout.index(t, g, c)]).collect()
    }

    pub fn set(&mut self, layout: &LatentLayout, t: usize, g: usize, coords: &[f64]) {
        for (c, v) in coords.iter().enumerate() {
            self.values[layout.index(t, g, c)] = *v;
        }
    }
}

/// Data, family and random-effect structure of a mixed model.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub family: Family,
    pub link: Link,
    pub design: DesignSet,
    terms: Vec<TermInfo>,
    layout: LatentLayout,
    param_layout: ParamLayout,
    /// Per-observation `log f` constants.
    y_const: Vec<f64>,
    /// Row-major copy of `X`.
    x: Vec<f64>,
}

impl JointModel {
    pub fn new(design: DesignSet, family: Family) -> Result<Self> {
        let n = design.n_obs();
        for &y in &design.y {
            family.check_response(y)?;
        }
        if design.x.nrows() != n {
            return Err(Error::Dimension("X rows do not match the response".into()));
        }

        // The grouping factor with the most levels carries the block-diagonal part.
        let primary_group = design
            .random
            .iter()
            .max_by(|a, b| a.n_groups().cmp(&b.n_groups()).then(std::cmp::Ordering::Greater))
            .map(|r| r.group_name().to_string());

        let mut terms = Vec::with_capacity(design.random.len());
        let mut block_size = 0;
        let mut n_secondary = 0;
        let mut n_blocks = 0;
        for r in &design.random {
            if r.z.nrows() != n || r.group_index.len() != n {
                return Err(Error::Dimension(format!("random term {} has wrong row count", r.label())));
            }
            let q = r.q();
            let kind = r.structure();
            covstruct::num_params(kind, q)?;
            let k = kind.latent_dim(q);
            let m = r.n_groups();
            let primary = Some(r.group_name()) == primary_group.as_deref();
            let inner_offset = if primary {
                n_blocks = m;
                block_size += k;
                block_size - k
            } else {
                n_secondary += k * m;
                n_secondary - k * m
            };
            terms.push(TermInfo {
                kind,
                q,
                k,
                m,
                primary,
                inner_offset,
                z: row_major(&r.z),
                group_index: r.group_index.clone(),
            });
        }
        let layout = LatentLayout {
            n_blocks,
            block_size,
            n_secondary,
            terms: terms.iter().map(|t| (t.k, t.m, t.primary, t.inner_offset)).collect(),
        };
        let param_layout = ParamLayout {
            n_beta: design.x.ncols(),
            theta_lens: terms
                .iter()
                .map(|t| covstruct::num_params(t.kind, t.q))
                .collect::<Result<_>>()?,
            has_log_phi: !family.dispersion_fixed(),
        };
        let y_const = design.y.iter().map(|&y| family.log_density_constant(y)).collect();
        let x = row_major(&design.x);
        Ok(Self {
            family,
            link: family.canonical_link(),
            design,
            terms,
            layout,
            param_layout,
            y_const,
            x,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.design.n_obs()
    }

    /// The same model with a different response vector.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n_obs() {
            return Err(Error::Dimension(format!(
                "response has length {}, model has {} observations",
                y.len(),
                self.n_obs()
            )));
        }
        for &v in &y {
            self.family.check_response(v)?;
        }
        let mut out = self.clone();
        out.y_const = y.iter().map(|&v| self.family.log_density_constant(v)).collect();
        out.design.y = y;
        Ok(out)
    }

    pub fn terms(&self) -> &[TermInfo] {
        &self.terms
    }

    pub fn random(&self) -> &[RandomDesign] {
        &self.design.random
    }

    pub fn latent_layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn param_layout(&self) -> &ParamLayout {
        &self.param_layout
    }

    pub fn n_params(&self) -> usize {
        self.param_layout.len()
    }

    pub fn unpack(&self, values: &[f64]) -> Result<ParamVector> {
        ParamVector::unpack(&self.param_layout, values)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.design.x_names.clone();
        for r in &self.design.random {
            for n in covstruct::param_names(r.structure(), &r.z_names) {
                names.push(format!("{}.{}", r.group_name(), n));
            }
        }
        if self.param_layout.has_log_phi {
            names.push("log_phi".into());
        }
        names
    }

    pub fn covariance_structure(&self, psi: &ParamVector, t: usize) -> CovarianceStructure {
        let term = &self.terms[t];
        CovarianceStructure {
            kind: term.kind,
            q: term.q,
            theta: psi.theta[t].clone(),
        }
    }

    /// Realized covariance of term `t`.
    pub fn term_cov(&self, psi: &ParamVector, t: usize) -> DMatrix<f64> {
        self.covariance_structure(psi, t).cov()
    }

    pub(crate) fn y(&self) -> &[f64] {
        &self.design.y
    }

    pub(crate) fn y_const(&self) -> &[f64] {
        &self.y_const
    }

    /// `X beta`.
    pub fn fixed_predictor(&self, beta: &[f64]) -> Vec<f64> {
        let p = beta.len();
        if p == 0 {
            return vec![0.0; self.n_obs()];
        }
        self.x
            .chunks_exact(p)
            .map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Z_t` row `i` (row-major cache).
    pub(crate) fn z_row(&self, t: usize, i: usize) -> &[f64] {
        let q = self.terms[t].q;
        &self.terms[t].z[i * q..(i + 1) * q]
    }

    pub(crate) fn group_of(&self, t: usize, i: usize) -> usize {
        self.terms[t].group_index[i]
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}
