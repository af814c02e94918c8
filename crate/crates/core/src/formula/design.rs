//! Fixed and random design matrices.
//!
//! Categorical variables use treatment contrasts: a variable inside a term is
//! coded with `k - 1` columns against its first level when the term without
//! that variable is also in the expression (the intercept counts as the empty
//! term), and with `k` indicator columns otherwise. Interaction columns vary
//! the first variable fastest and are named `a<level>:b<level>`.

use nalgebra::DMatrix;

use super::data::{Column, DataTable};
use super::parser::{ModelSpec, RandomTerm, TermExpr};
use crate::covstruct::CovKind;
use crate::error::{Error, Result};

pub const INTERCEPT_NAME: &str = "(Intercept)";

/// Design for one random term.
#[derive(Debug, Clone)]
pub struct RandomDesign {
    pub term: RandomTerm,
    /// `n x q` random-effect covariates.
    pub z: DMatrix<f64>,
    pub z_names: Vec<String>,
    pub group_levels: Vec<String>,
    /// Row to group id.
    pub group_index: Vec<usize>,
}

impl RandomDesign {
    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.group_levels.len()
    }

    pub fn structure(&self) -> CovKind {
        self.term.structure
    }

    pub fn group_name(&self) -> &str {
        &self.term.group
    }

    /// Short label such as `rr(Species | ID)`.
    pub fn label(&self) -> String {
        format!("{}({} | {})", self.term.structure.name(), self.term.varying, self.term.group)
    }
}

#[derive(Debug, Clone)]
pub struct DesignSet {
    pub response: String,
    pub y: Vec<f64>,
    /// `n x p` fixed-effect design.
    pub x: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub random: Vec<RandomDesign>,
}

impl DesignSet {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }
}

struct VarColumns {
    values: Vec<Vec<f64>>,
    names: Vec<String>,
}

fn variable_columns(
    data: &DataTable,
    var: &str,
    contrasts: bool,
) -> Result<VarColumns> {
    let col = data.column(var).ok_or_else(|| Error::MissingColumn(var.to_string()))?;
    check_complete(col, var)?;
    Ok(match col {
        Column::Numeric(v) => VarColumns {
            values: vec![v.iter().map(|x| x.expect("checked")).collect()],
            names: vec![var.to_string()],
        },
        Column::Categorical { levels, codes } => {
            let first = usize::from(contrasts);
            let values = (first..levels.len())
                .map(|l| codes.iter().map(|c| f64::from(u8::from(c.expect("checked") == l))).collect())
                .collect();
            let names = levels[first..].iter().map(|l| format!("{var}{l}")).collect();
            VarColumns { values, names }
        }
    })
}

fn check_complete(col: &Column, var: &str) -> Result<()> {
    if let Some(row) = (0..col.len()).find(|&r| col.is_missing(r)) {
        return Err(Error::Data(format!(
            "missing value in column `{var}` at row {}; incomplete rows are not dropped",
            row + 1
        )));
    }
    Ok(())
}

/// Expands an additive expression into design columns.
fn expand(expr: &TermExpr, data: &DataTable) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let n = data.n_rows();
    let mut columns = Vec::new();
    let mut names = Vec::new();
    if expr.intercept {
        columns.push(vec![1.0; n]);
        names.push(INTERCEPT_NAME.to_string());
    }
    for term in &expr.terms {
        let mut cur_vals: Vec<Vec<f64>> = vec![vec![1.0; n]];
        let mut cur_names: Vec<String> = vec![String::new()];
        for var in term {
            let margin: Vec<String> = term.iter().filter(|v| *v != var).cloned().collect();
            let contrasts = if margin.is_empty() {
                expr.intercept
            } else {
                expr.contains(&margin)
            };
            let vc = variable_columns(data, var, contrasts)?;
            let mut next_vals = Vec::with_capacity(cur_vals.len() * vc.values.len());
            let mut next_names = Vec::with_capacity(next_vals.capacity());
            for (vv, vn) in vc.values.iter().zip(&vc.names) {
                for (cv, cn) in cur_vals.iter().zip(&cur_names) {
                    next_vals.push(cv.iter().zip(vv).map(|(a, b)| a * b).collect());
                    next_names.push(if cn.is_empty() { vn.clone() } else { format!("{cn}:{vn}") });
                }
            }
            cur_vals = next_vals;
            cur_names = next_names;
        }
        columns.extend(cur_vals);
        names.extend(cur_names);
    }
    for (i, a) in names.iter().enumerate() {
        if names[..i].contains(a) {
            return Err(Error::Data(format!("duplicate design column `{a}`")));
        }
    }
    Ok((columns, names))
}

fn to_matrix(columns: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i])
}

fn grouping(data: &DataTable, name: &str) -> Result<(Vec<String>, Vec<usize>)> {
    let col = data.column(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    check_complete(col, name)?;
    let (levels, codes) = col.as_categorical();
    let index: Vec<usize> = codes.into_iter().map(|c| c.expect("checked")).collect();
    let mut counts = vec![0usize; levels.len()];
    for &g in &index {
        counts[g] += 1;
    }
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!(
            "level `{}` of grouping factor `{name}` has no observations",
            levels[l]
        )));
    }
    Ok((levels, index))
}

/// Builds `X`, the response, and one `Z` block per random term.
pub fn build_design(spec: &ModelSpec, data: &DataTable) -> Result<DesignSet> {
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::Data("data table has no rows".into()));
    }
    let y = match data.column(&spec.response) {
        None => return Err(Error::MissingColumn(spec.response.clone())),
        Some(Column::Categorical { .. }) => {
            return Err(Error::Data(format!("response `{}` must be numeric", spec.response)))
        }
        Some(col @ Column::Numeric(v)) => {
            check_complete(col, &spec.response)?;
            v.iter().map(|x| x.expect("checked")).collect()
        }
    };
    // Report every missing column up front, in formula order.
    for var in spec.variables() {
        if data.column(&var).is_none() {
            return Err(Error::MissingColumn(var));
        }
    }
    let (xcols, x_names) = expand(&spec.fixed, data)?;
    let x = to_matrix(&xcols, n);

    let mut random = Vec::with_capacity(spec.random.len());
    for term in &spec.random {
        let (zcols, z_names) = expand(&term.varying, data)?;
        if zcols.is_empty() {
            return Err(Error::Data(format!("random term `{term}` has no columns")));
        }
        if let CovKind::Rr { rank } = term.structure {
            if rank > zcols.len() {
                return Err(Error::InvalidRank { rank, q: zcols.len() });
            }
        }
        let (group_levels, group_index) = grouping(data, &term.group)?;
        random.push(RandomDesign {
            term: term.clone(),
            z: to_matrix(&zcols, n),
            z_names,
            group_levels,
            group_index,
        });
    }
    Ok(DesignSet {
        response: spec.response.clone(),
        y,
        x,
        x_names,
        random,
    })
}
