//! Response distributions and their canonical links.
//!
//! Everything here is expressed in terms of the linear predictor `eta`. The
//! Laplace core only needs `-log f(y | eta)` and its first two derivatives in
//! `eta`, which for canonical links reduce to `mu - y` and the variance
//! function (scaled by the dispersion).

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Largest linear predictor fed to a sampler; beyond this bernoulli draws are
/// saturated and poisson rates stop being meaningful.
pub const ETA_CAP: f64 = 30.0;

/// Residual probabilities are clipped to `[QR_CLIP, 1 - QR_CLIP]` before the
/// normal quantile transform.
pub const QR_CLIP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Poisson,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Log,
    Logit,
}

impl Link {
    pub fn name(self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Log => "log",
            Link::Logit => "logit",
        }
    }

    /// `g(mu)`.
    pub fn link(self, mu: f64) -> f64 {
        match self {
            Link::Identity => mu,
            Link::Log => mu.ln(),
            Link::Logit => (mu / (1.0 - mu)).ln(),
        }
    }

    /// `g^{-1}(eta)`.
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => eta.exp(),
            Link::Logit => logistic(eta),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "poisson" => Ok(Family::Poisson),
            "bernoulli" | "binomial" => Ok(Family::Bernoulli),
            other => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Poisson => "poisson",
            Family::Bernoulli => "bernoulli",
        }
    }

    pub fn canonical_link(self) -> Link {
        match self {
            Family::Gaussian => Link::Identity,
            Family::Poisson => Link::Log,
            Family::Bernoulli => Link::Logit,
        }
    }

    /// Poisson and bernoulli have `phi = 1`; only the gaussian estimates it.
    pub fn dispersion_fixed(self) -> bool {
        !matches!(self, Family::Gaussian)
    }

    /// Rejects non-canonical links.
    pub fn check_link(self, link: Link) -> Result<()> {
        if link == self.canonical_link() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{} family only supports the {} link, got {}",
                self.name(),
                self.canonical_link().name(),
                link.name()
            )))
        }
    }

    pub fn check_response(self, y: f64) -> Result<()> {
        let ok = match self {
            Family::Gaussian => y.is_finite(),
            Family::Poisson => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
            Family::Bernoulli => y == 0.0 || y == 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "response {y} is not valid for the {} family",
                self.name()
            )))
        }
    }

    pub fn mean(self, eta: f64) -> f64 {
        self.canonical_link().inverse(eta)
    }

    /// The part of `log f(y | eta)` that does not depend on `eta` (or `phi`
    /// for the gaussian). Cached per observation by the model.
    pub fn log_density_constant(self, y: f64) -> f64 {
        match self {
            Family::Gaussian => -0.5 * (2.0 * std::f64::consts::PI).ln(),
            Family::Poisson => -ln_gamma(y + 1.0),
            Family::Bernoulli => 0.0,
        }
    }

    /// `log f(y | eta, phi) - log_density_constant(y)`, no support checks.
    #[inline]
    pub fn log_kernel(self, y: f64, eta: f64, phi: f64) -> f64 {
        match self {
            Family::Gaussian => {
                let r = y - eta;
                -0.5 * phi.ln() - 0.5 * r * r / phi
            }
            Family::Poisson => {
                if y == 0.0 {
                    -eta.exp()
                } else {
                    y * eta - eta.exp()
                }
            }
            Family::Bernoulli => y * eta - softplus(eta),
        }
    }

    /// First and second derivative of `-log f` with respect to `eta`.
    #[inline]
    pub fn derivs(self, y: f64, eta: f64, phi: f64) -> (f64, f64) {
        match self {
            Family::Gaussian => ((eta - y) / phi, 1.0 / phi),
            Family::Poisson => {
                let mu = eta.exp();
                (mu - y, mu)
            }
            Family::Bernoulli => {
                let mu = logistic(eta);
                (mu - y, mu * (1.0 - mu))
            }
        }
    }

    /// Variance function `V(mu)` (without the dispersion).
    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Poisson => mu,
            Family::Bernoulli => mu * (1.0 - mu),
        }
    }

    /// Unit deviance `d(y, mu)`.
    pub fn unit_deviance(self, y: f64, mu: f64) -> f64 {
        match self {
            Family::Gaussian => (y - mu) * (y - mu),
            Family::Poisson => {
                let ylogy = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
                2.0 * (ylogy - (y - mu))
            }
            Family::Bernoulli => {
                let p = if y > 0.5 { mu } else { 1.0 - mu };
                -2.0 * p.max(f64::MIN_POSITIVE).ln()
            }
        }
        .max(0.0)
    }
}

pub(crate) fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn std_normal() -> StdNormal {
    StdNormal::new(0.0, 1.0).expect("unit normal")
}

/// `log f(y | eta, phi)` with support checking.
pub fn log_density(family: Family, link: Link, y: f64, eta: f64, phi: f64) -> Result<f64> {
    family.check_link(link)?;
    family.check_response(y)?;
    if !(phi > 0.0) {
        return Err(Error::Domain(format!("dispersion must be positive, got {phi}")));
    }
    Ok(family.log_density_constant(y) + family.log_kernel(y, eta, phi))
}

/// `(d/deta, d^2/deta^2)` of `-log f(y | eta, phi)`.
pub fn neg_loglik_derivs(family: Family, link: Link, y: f64, eta: f64, phi: f64) -> Result<(f64, f64)> {
    family.check_link(link)?;
    family.check_response(y)?;
    Ok(family.derivs(y, eta, phi))
}

/// Draw a response with mean `g^{-1}(eta)`.
pub fn simulate_response<R: Rng + ?Sized>(family: Family, link: Link, eta: f64, phi: f64, rng: &mut R) -> f64 {
    debug_assert_eq!(link, family.canonical_link());
    let eta = eta.min(ETA_CAP);
    match family {
        Family::Gaussian => {
            let sd = phi.sqrt();
            eta + sd * Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
        }
        Family::Poisson => {
            let mu = eta.exp();
            if mu < 1e-300 {
                0.0
            } else {
                Poisson::new(mu).expect("positive rate").sample(rng)
            }
        }
        Family::Bernoulli => {
            let p = logistic(eta);
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Randomized quantile residual. Discrete families draw `w` uniformly on
/// `(F(y-1), F(y)]`; the gaussian uses `w = F(y)`.
pub fn quantile_residual<R: Rng + ?Sized>(family: Family, y: f64, mu: f64, phi: f64, rng: &mut R) -> f64 {
    let (lo, hi) = match family {
        Family::Gaussian => {
            let z = (y - mu) / phi.sqrt();
            let bound = std_normal().inverse_cdf(1.0 - QR_CLIP);
            return z.clamp(-bound, bound);
        }
        Family::Poisson => {
            let lo = if y < 0.5 { 0.0 } else { poisson_cdf(y - 1.0, mu) };
            (lo, poisson_cdf(y, mu))
        }
        Family::Bernoulli => {
            if y < 0.5 {
                (0.0, 1.0 - mu)
            } else {
                (1.0 - mu, 1.0)
            }
        }
    };
    // 1 - U lies in (0, 1], so w lands in (lo, hi].
    let u = 1.0 - rng.random::<f64>();
    let w = (lo + u * (hi - lo)).clamp(QR_CLIP, 1.0 - QR_CLIP);
    std_normal().inverse_cdf(w)
}

/// `P(Y <= k)` for `Y ~ Poisson(mu)`.
pub fn poisson_cdf(k: f64, mu: f64) -> f64 {
    if k < 0.0 {
        return 0.0;
    }
    if mu <= 0.0 {
        return 1.0;
    }
    gamma_ur(k.floor() + 1.0, mu)
}

/// Signed square root of the unit deviance, scaled by `sqrt(phi)`.
pub fn deviance_residual(family: Family, y: f64, mu: f64, phi: f64) -> f64 {
    let d = family.unit_deviance(y, mu);
    let s = if y > mu {
        1.0
    } else if y < mu {
        -1.0
    } else {
        0.0
    };
    let scale = if family.dispersion_fixed() { 1.0 } else { phi.sqrt() };
    s * d.sqrt() / scale
}
