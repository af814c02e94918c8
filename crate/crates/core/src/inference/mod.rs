//! Post-fit inference: standard errors, variance reports, simulation,
//! bootstrap tests, ordination and rank sweeps.

mod bootstrap;
mod information;
mod ranksweep;
mod report;

pub use bootstrap::{
    bootstrap_from_fits, bootstrap_lrt, bootstrap_p_value, check_nested, map_by_name, simulate_fit, BootstrapResult,
};
pub use information::{
    coefficient_table, delta_se, information_criteria, invert_information, jacobian, numeric_hessian,
    observed_information, Coefficient, Information, InformationCriteria,
};
pub use ranksweep::{embed_latents, first_rr_term, rank_sweep, with_rank, FixedEstimate, RankSweepRow, CI_Z};
pub use report::{
    conditional_modes, ordination, rr_terms, var_corr, LatentMode, Ordination, VarCorrReport, VarCorrTerm,
};
