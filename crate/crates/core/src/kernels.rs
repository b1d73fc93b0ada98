//! Radial interaction kernels.
//!
//! Every kernel here depends on `|x - y|^2` only. The [`Kernel`] trait exposes
//! the radial profile together with its derivative in the squared distance,
//! which is all the energy and gradient code needs.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::measures::squared_distance;
use crate::spec_string::CallExpr;

/// A symmetric radial interaction kernel `K(x, y) = k(|x - y|^2)`.
pub trait Kernel: Send + Sync {
    /// `(k(r2), k'(r2))`, the profile and its derivative in the squared distance.
    fn radial(&self, r2: f64) -> (f64, f64);

    fn value(&self, r2: f64) -> f64 {
        self.radial(r2).0
    }

    /// `sup_x K(x, x)`, `+inf` for singular kernels.
    fn diag_sup(&self) -> f64;

    fn is_singular(&self) -> bool {
        self.diag_sup().is_infinite()
    }

    /// Ambient dimension the kernel is tied to, if any.
    fn required_dim(&self) -> Option<usize> {
        None
    }

    /// Particle count baked into an `n`-dependent regularization, if any.
    fn particle_count(&self) -> Option<usize> {
        None
    }
}

impl<K: Kernel + ?Sized> Kernel for &K {
    fn radial(&self, r2: f64) -> (f64, f64) {
        (**self).radial(r2)
    }
    fn value(&self, r2: f64) -> f64 {
        (**self).value(r2)
    }
    fn diag_sup(&self) -> f64 {
        (**self).diag_sup()
    }
    fn required_dim(&self) -> Option<usize> {
        (**self).required_dim()
    }
    fn particle_count(&self) -> Option<usize> {
        (**self).particle_count()
    }
}

/// The kernels supported by the library.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `|x - y|^{-(d-2)}`, singular on the diagonal.
    Coulomb { d: usize },
    /// `(|x - y|^2 + n^{-2 zeta})^{-(d-2)/2}`.
    CoulombRegularized { d: usize, zeta: f64, n: usize },
    /// `(|x - y|^2 + eps^2)^{-s/2}`.
    RieszRegularized { s: f64, eps: f64 },
    /// `exp(-|x - y|^2 / (2 h^2))`.
    Gaussian { bandwidth: f64 },
}

const LOG_GAS_MSG: &str = "log-gas kernel out of scope (d<3 regularized Coulomb undefined)";

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Coulomb { d } | KernelSpec::CoulombRegularized { d, .. } if d < 3 => {
                Err(Error::invalid(LOG_GAS_MSG))
            }
            KernelSpec::CoulombRegularized { zeta, n, .. } => {
                if !(zeta > 0.0 && zeta.is_finite()) {
                    Err(Error::invalid("zeta must be positive"))
                } else if n == 0 {
                    Err(Error::invalid("n must be at least 1"))
                } else {
                    Ok(())
                }
            }
            KernelSpec::RieszRegularized { s, eps } => {
                if s > 0.0 && eps > 0.0 && s.is_finite() && eps.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("riesz kernel needs s > 0 and eps > 0"))
                }
            }
            KernelSpec::Gaussian { bandwidth } => {
                if bandwidth > 0.0 && bandwidth.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("gaussian bandwidth must be positive"))
                }
            }
            KernelSpec::Coulomb { .. } => Ok(()),
        }
    }

    /// Squared regularization length `n^{-2 zeta}` of the regularized Coulomb kernel.
    pub fn coulomb_softening(zeta: f64, n: usize) -> f64 {
        (n as f64).powf(-2.0 * zeta)
    }

    /// Same kernel with the embedded particle count replaced.
    pub fn with_particle_count(self, n: usize) -> Self {
        match self {
            KernelSpec::CoulombRegularized { d, zeta, .. } => KernelSpec::CoulombRegularized { d, zeta, n },
            other => other,
        }
    }

    fn check_dim(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        if let Some(d) = self.required_dim() {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x.len(),
                });
            }
        }
        Ok(())
    }
}

/// `base^{-p/2}` and its derivative in `base`, with fast paths for the
/// exponents used in three dimensions.
#[inline]
fn inverse_half_power(base: f64, p: f64) -> (f64, f64) {
    let v = if p == 1.0 {
        1.0 / base.sqrt()
    } else if p == 2.0 {
        1.0 / base
    } else {
        base.powf(-0.5 * p)
    };
    (v, -0.5 * p * v / base)
}

impl Kernel for KernelSpec {
    #[inline]
    fn radial(&self, r2: f64) -> (f64, f64) {
        match *self {
            KernelSpec::RieszRegularized { s, eps } => inverse_half_power(r2 + eps * eps, s),
            KernelSpec::CoulombRegularized { d, zeta, n } => {
                inverse_half_power(r2 + Self::coulomb_softening(zeta, n), (d - 2) as f64)
            }
            KernelSpec::Coulomb { d } => {
                if r2 == 0.0 {
                    (f64::INFINITY, f64::NEG_INFINITY)
                } else {
                    inverse_half_power(r2, (d - 2) as f64)
                }
            }
            KernelSpec::Gaussian { bandwidth } => {
                let c = 0.5 / (bandwidth * bandwidth);
                let v = (-c * r2).exp();
                (v, -c * v)
            }
        }
    }

    fn diag_sup(&self) -> f64 {
        match *self {
            KernelSpec::Coulomb { .. } => f64::INFINITY,
            KernelSpec::CoulombRegularized { d, zeta, n } => (n as f64).powf(zeta * (d - 2) as f64),
            KernelSpec::RieszRegularized { s, eps } => eps.powf(-s),
            KernelSpec::Gaussian { .. } => 1.0,
        }
    }

    fn required_dim(&self) -> Option<usize> {
        match *self {
            KernelSpec::Coulomb { d } | KernelSpec::CoulombRegularized { d, .. } => Some(d),
            _ => None,
        }
    }

    fn particle_count(&self) -> Option<usize> {
        match *self {
            KernelSpec::CoulombRegularized { n, .. } => Some(n),
            _ => None,
        }
    }
}

/// `K(x, y)`; `+inf` for the Coulomb kernel at `x == y`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.check_dim(x, y)?;
    Ok(spec.value(squared_distance(x, y)))
}

/// Gradient of `K(x, y)` with respect to `y`.
pub fn kernel_grad2(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    spec.check_dim(x, y)?;
    let r2 = squared_distance(x, y);
    if spec.is_singular() && r2 == 0.0 {
        return Err(Error::SingularGradient);
    }
    let (_, dk) = spec.radial(r2);
    Ok(x.iter().zip(y).map(|(a, b)| 2.0 * dk * (b - a)).collect())
}

/// `sup_x K(x, x)`.
pub fn diag_sup(spec: &KernelSpec) -> f64 {
    spec.diag_sup()
}

/// Whether `zeta` satisfies the sufficient condition `zeta < min(delta, 2/d) / (2d)`
/// under which the regularized quenched construction is known to converge,
/// for an inverse temperature growing like `n^{1 + delta}`.
pub fn zeta_within_theory(zeta: f64, d: usize, delta: f64) -> bool {
    let d = d as f64;
    zeta < delta.min(2.0 / d) / (2.0 * d)
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let call = CallExpr::parse(s)?;
        let spec = match call.name.as_str() {
            "coulomb" => {
                call.expect_keys(&["d"])?;
                KernelSpec::Coulomb { d: call.usize("d")? }
            }
            "coulomb_reg" => {
                call.expect_keys(&["d", "zeta", "n"])?;
                KernelSpec::CoulombRegularized {
                    d: call.usize("d")?,
                    zeta: call.f64("zeta")?,
                    n: call.usize_or("n", 1)?,
                }
            }
            "riesz" => {
                call.expect_keys(&["s", "eps"])?;
                KernelSpec::RieszRegularized {
                    s: call.f64("s")?,
                    eps: call.f64("eps")?,
                }
            }
            "gaussian" => {
                call.expect_keys(&["h"])?;
                KernelSpec::Gaussian { bandwidth: call.f64("h")? }
            }
            other => return Err(Error::parse(format!("unknown kernel `{other}`"))),
        };
        spec.validate().map_err(|e| match e {
            Error::InvalidParameter(m) => Error::Parse(m),
            e => e,
        })?;
        Ok(spec)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Coulomb { d } => write!(f, "coulomb(d={d})"),
            KernelSpec::CoulombRegularized { d, zeta, n } => write!(f, "coulomb_reg(d={d},zeta={zeta},n={n})"),
            KernelSpec::RieszRegularized { s, eps } => write!(f, "riesz(s={s},eps={eps})"),
            KernelSpec::Gaussian { bandwidth } => write!(f, "gaussian(h={bandwidth})"),
        }
    }
}
