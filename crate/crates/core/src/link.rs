//! Links `Ψ`, the missingness mechanism and the moment function `h`.

use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use std::fmt;
use std::str::FromStr;

pub const PSI_FLOOR: f64 = 1e-300;
pub const PSI_CEIL: f64 = 1.0 - 1e-16;

/// Cumulative distribution function used as the observation-probability link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logistic,
    Probit,
    /// Student t with `ν` degrees of freedom.
    T(f64),
}

impl Default for Link {
    fn default() -> Self {
        Link::T(4.0)
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Link::Logistic => write!(f, "logistic"),
            Link::Probit => write!(f, "probit"),
            Link::T(nu) => write!(f, "t{nu}"),
        }
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "logistic" | "logit" => Ok(Link::Logistic),
            "probit" | "normal" => Ok(Link::Probit),
            _ => {
                let rest = t
                    .strip_prefix("t:")
                    .or_else(|| t.strip_prefix('t'))
                    .ok_or_else(|| Error::InvalidInput(format!("unknown link `{s}`")))?;
                let nu: f64 = rest
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad t degrees of freedom in `{s}`")))?;
                Link::t(nu)
            }
        }
    }
}

impl Link {
    /// Student t link; `ν` must be positive.
    pub fn t(nu: f64) -> Result<Self> {
        if nu > 0.0 && nu.is_finite() {
            Ok(Link::T(nu))
        } else {
            Err(Error::InvalidInput(format!("t link needs nu > 0, got {nu}")))
        }
    }

    /// Variance of a random variable with distribution function `Ψ`.
    pub fn variance(&self) -> Result<f64> {
        match *self {
            Link::Logistic => Ok(std::f64::consts::PI.powi(2) / 3.0),
            Link::Probit => Ok(1.0),
            Link::T(nu) if nu > 2.0 => Ok(nu / (nu - 2.0)),
            Link::T(nu) => Err(Error::InfiniteVariance(nu)),
        }
    }
}

fn clamp_psi<T: Real>(v: T) -> T {
    v.max(T::c(PSI_FLOOR)).min(T::c(PSI_CEIL))
}

/// `Ψ(x)` and `Ψ'(x)`; the value is clamped to `[1e-300, 1 − 1e-16]`.
#[inline]
pub fn psi_eval<T: Real>(link: Link, x: T) -> (T, T) {
    let (v, d) = match link {
        Link::Logistic => {
            let v = if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            };
            (v, v * (T::one() - v))
        }
        Link::T(nu) if nu == 4.0 => t4(x),
        Link::Probit => {
            let xf = x.f64();
            let n = Normal::standard();
            (T::c(n.cdf(xf)), T::c(n.pdf(xf)))
        }
        Link::T(nu) => {
            let xf = x.f64();
            let t = StudentsT::new(0.0, 1.0, nu).expect("nu > 0");
            (T::c(t.cdf(xf)), T::c(t.pdf(xf)))
        }
    };
    (clamp_psi(v), d)
}

/// t₄ in closed form. With `u = 1 − |x|/√(4 + x²)` the lower tail is `u²(3 − u)/4`,
/// which keeps full relative precision far into the tail.
#[inline]
fn t4<T: Real>(x: T) -> (T, T) {
    let four = T::c(4.0);
    let r = (four + x * x).sqrt();
    let ax = x.abs();
    let u = four / (r * (r + ax));
    let tail = u * u * (T::c(3.0) - u) / four;
    let v = if x <= T::zero() { tail } else { T::one() - tail };
    let base = T::one() + x * x / four;
    let d = T::c(0.375) / (base * base * base.sqrt());
    (v, d)
}

/// Link with scale and location: `P(r = 1 | y) = Ψ(α(y − δ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingnessMechanism<T> {
    pub link: Link,
    pub alpha: T,
    pub delta: T,
}

impl<T: Real> MissingnessMechanism<T> {
    pub fn new(link: Link, alpha: T, delta: T) -> Result<Self> {
        if !(alpha > T::zero()) || !alpha.is_finite() {
            return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha:?}")));
        }
        Ok(Self { link, alpha, delta })
    }

    /// Observation probability at intensity `y`.
    #[inline]
    pub fn psi(&self, y: T) -> T {
        psi_eval(self.link, self.alpha * (y - self.delta)).0
    }
}

/// `h = (1, a₁, a₂)ᵀ (1 − r / Ψ(α(y − δ)))`; `y` is ignored when `r` is false.
#[inline]
pub fn moment_h<T: Real>(y: T, r: bool, a: [T; 2], mech: &MissingnessMechanism<T>) -> [T; 3] {
    let f = if r { T::one() - T::one() / mech.psi(y) } else { T::one() };
    [f, a[0] * f, a[1] * f]
}

/// Sample mean `h̄`, centered second moment `Σ̂` and Jacobian `Γ = ∂h̄/∂(α, δ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMoments<T> {
    pub h_bar: [T; 3],
    pub sigma: [[T; 3]; 3],
    pub gamma: [[T; 2]; 3],
}

/// Sample moments over `n` cells. `u1`, `u2` are the two instrument columns; entries of `y`
/// at unobserved cells are never read.
pub fn sample_moments<T: Real>(
    y: &[T],
    r: &[bool],
    u1: &[T],
    u2: &[T],
    mech: &MissingnessMechanism<T>,
) -> SampleMoments<T> {
    let n = y.len();
    let zero = T::zero();
    let mut hs = [zero; 3];
    let mut ss = [[zero; 3]; 3];
    let mut gs = [[zero; 2]; 3];
    for i in 0..n {
        let z = [T::one(), u1[i], u2[i]];
        let f;
        if r[i] {
            let x = mech.alpha * (y[i] - mech.delta);
            let (psi, dpsi) = psi_eval(mech.link, x);
            f = T::one() - T::one() / psi;
            let g = dpsi / (psi * psi);
            let ga = g * (y[i] - mech.delta);
            let gd = -g * mech.alpha;
            for k in 0..3 {
                gs[k][0] = gs[k][0] + z[k] * ga;
                gs[k][1] = gs[k][1] + z[k] * gd;
            }
        } else {
            f = T::one();
        }
        let f2 = f * f;
        for k in 0..3 {
            hs[k] = hs[k] + z[k] * f;
            for l in k..3 {
                ss[k][l] = ss[k][l] + z[k] * z[l] * f2;
            }
        }
    }
    let nn = T::from_usize(n).expect("sample size");
    let h_bar = [hs[0] / nn, hs[1] / nn, hs[2] / nn];
    let mut sigma = [[zero; 3]; 3];
    for k in 0..3 {
        for l in k..3 {
            let v = ss[k][l] / nn - h_bar[k] * h_bar[l];
            sigma[k][l] = v;
            sigma[l][k] = v;
        }
    }
    let mut gamma = [[zero; 2]; 3];
    for k in 0..3 {
        gamma[k] = [gs[k][0] / nn, gs[k][1] / nn];
    }
    SampleMoments { h_bar, sigma, gamma }
}
