//! Formula parsing, tabular data, and design construction.

mod data;
mod design;
mod parser;

pub use data::{Column, DataTable};
pub use design::{build_design, DesignSet, RandomDesign, INTERCEPT_NAME};
pub use parser::{parse_formula, Interaction, ModelSpec, RandomTerm, TermExpr, DEFAULT_RR_RANK};
