//! Laplace approximation to the marginal likelihood.
//!
//! All random effects are stacked into one latent vector `v`. For fixed
//! parameters the joint negative log-density
//!
//! ```text
//! J(v) = -sum_i log f(y_i | eta_i) + v' P v / 2 + prior constants
//! ```
//!
//! is minimized by Newton's method, and the marginal negative log-likelihood
//! is approximated by `J(v_hat) + log det H / 2 - dim(v) log(2 pi) / 2`, with
//! `H` the Hessian of `J` at the mode. Reduced-rank terms use standard normal
//! coordinates `u` (with `b = Lambda u`); diag and us terms use `b` directly
//! with prior `N(0, Sigma)`.

mod hessian;
mod inner;
mod model;

pub use hessian::{logdet_psd, BlockFactor, BlockHessian};
pub use inner::{
    inner_newton, joint_neg_logdensity, laplace_nll, linear_predictor, InnerSolution, LaplaceEval, Prepared,
    INNER_MAX_ITER, INNER_TOL,
};
pub use model::{JointModel, LatentLayout, LatentState, ParamLayout, ParamVector, TermInfo};
