//! Smoothed Coulomb/Stribeck friction.
//!
//! Per contact the friction force is `−B φ(Bᵀ u)` where `u` is the relative
//! velocity, `B = [b1 b2]` the tangent basis and `φ(w) = c(‖w‖) w/‖w‖`.
//! Since `c(v)/v` stays bounded as `v → 0`, `φ` is evaluated as
//! `ratio(‖w‖)·w` with `ratio = c/v` expanded analytically below `ε`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Real;
use crate::linalg::{self, M3, V3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrictionError {
    #[error("invalid friction parameters: {0}")]
    Invalid(String),
    #[error("unrecognized friction mode `{0}` (expected `implicit` or `lagged:N` with N >= 1)")]
    Mode(String),
    #[error("unrecognized jacobian detail `{0}` (expected `full` or `frozen-basis`)")]
    Detail(String),
}

/// Friction coefficients and smoothing tolerances.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrictionParams {
    pub mu_d: f64,
    pub mu_s: f64,
    /// Viscous coefficient (N·s/m).
    #[serde(default)]
    pub mu_v: f64,
    /// Sliding-velocity tolerance ε (m/s).
    pub epsilon: f64,
    /// Stribeck velocity; `10ε` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stribeck_velocity: Option<f64>,
}

impl FrictionParams {
    /// Plain Coulomb friction with a single coefficient.
    pub fn coulomb(mu: f64, epsilon: f64) -> Self {
        FrictionParams { mu_d: mu, mu_s: mu, mu_v: 0.0, epsilon, stribeck_velocity: None }
    }

    pub fn frictionless() -> Self {
        Self::coulomb(0.0, 1e-3)
    }

    pub fn v_s(&self) -> f64 {
        self.stribeck_velocity.unwrap_or(10.0 * self.epsilon)
    }

    pub fn is_frictionless(&self) -> bool {
        self.mu_s == 0.0 && self.mu_d == 0.0 && self.mu_v == 0.0
    }

    pub fn validate(&self) -> Result<(), FrictionError> {
        let bad = |m: String| Err(FrictionError::Invalid(m));
        if !(self.mu_d >= 0.0 && self.mu_s >= self.mu_d) {
            return bad(format!("need mu_s ({}) >= mu_d ({}) >= 0", self.mu_s, self.mu_d));
        }
        if !(self.mu_v >= 0.0) {
            return bad(format!("mu_v ({}) must be non-negative", self.mu_v));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon ({}) must be positive", self.epsilon));
        }
        if !(self.v_s() > 0.0) {
            return bad(format!("stribeck_velocity ({}) must be positive", self.v_s()));
        }
        if self.v_s() < self.epsilon {
            log::warn!(
                "stribeck velocity {} is below epsilon {}; the effective static friction will be reduced",
                self.v_s(),
                self.epsilon
            );
        }
        Ok(())
    }
}

/// How friction geometry is evaluated inside a step.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum FrictionMode {
    /// Basis and λ at the end-of-step configuration.
    #[default]
    Implicit,
    /// Basis and λ from a lagged configuration, refined by fixed-point iterations.
    Lagged { iterations: usize },
}

impl fmt::Display for FrictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrictionMode::Implicit => write!(f, "implicit"),
            FrictionMode::Lagged { iterations } => write!(f, "lagged:{iterations}"),
        }
    }
}

impl FromStr for FrictionMode {
    type Err = FrictionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "implicit" {
            return Ok(FrictionMode::Implicit);
        }
        let n = s
            .strip_prefix("lagged:")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .ok_or_else(|| FrictionError::Mode(s.to_string()))?;
        Ok(FrictionMode::Lagged { iterations: n })
    }
}

/// Which friction derivatives enter the assembled Jacobian.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum JacobianDetail {
    /// Includes derivatives of the sliding basis, λ and obstacle velocity.
    #[default]
    Full,
    /// Treats the geometry as constant within a solve.
    FrozenBasis,
}

impl fmt::Display for JacobianDetail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JacobianDetail::Full => "full",
            JacobianDetail::FrozenBasis => "frozen-basis",
        })
    }
}

impl FromStr for JacobianDetail {
    type Err = FrictionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(JacobianDetail::Full),
            "frozen-basis" => Ok(JacobianDetail::FrozenBasis),
            _ => Err(FrictionError::Detail(s.to_string())),
        }
    }
}

/// Pre-sliding transition `s(v) = 2v/ε − v²/ε²` below `ε`, else 1.
pub fn smooth_s<T: Real>(v: T, eps: f64) -> T {
    if v.re() < eps {
        let x = v / eps;
        x * 2.0 - x * x
    } else {
        T::one()
    }
}

pub fn smooth_s_prime(v: f64, eps: f64) -> f64 {
    if v < eps {
        2.0 / eps - 2.0 * v / (eps * eps)
    } else {
        0.0
    }
}

/// `s(v)/v`, finite at `v = 0`.
pub fn smooth_s_over_v<T: Real>(v: T, eps: f64) -> T {
    if v.re() < eps {
        -(v / (eps * eps)) + 2.0 / eps
    } else {
        T::one() / v
    }
}

fn smooth_s_over_v_prime(v: f64, eps: f64) -> f64 {
    if v < eps {
        -1.0 / (eps * eps)
    } else {
        -1.0 / (v * v)
    }
}

/// Stribeck shape `g(x) = (2x + 1)(x − 1)²` below 1, else 0.
pub fn stribeck_g<T: Real>(x: T) -> T {
    if x.re() < 1.0 {
        let y = x - 1.0;
        (x * 2.0 + 1.0) * y * y
    } else {
        T::zero()
    }
}

pub fn stribeck_g_prime(x: f64) -> f64 {
    if x < 1.0 {
        6.0 * x * (x - 1.0)
    } else {
        0.0
    }
}

/// Velocity-dependent friction coefficient `μ_d + (μ_s − μ_d) g(v/v_s)`.
fn coefficient<T: Real>(v: T, p: &FrictionParams) -> T {
    stribeck_g(v / p.v_s()) * (p.mu_s - p.mu_d) + p.mu_d
}

fn coefficient_prime(v: f64, p: &FrictionParams) -> f64 {
    (p.mu_s - p.mu_d) * stribeck_g_prime(v / p.v_s()) / p.v_s()
}

/// Friction magnitude `c(v) = (μ_d + (μ_s − μ_d) g(v/v_s)) s(v) λ + μ_v v`.
pub fn friction_magnitude_c<T: Real>(v: T, lambda: T, p: &FrictionParams) -> T {
    coefficient(v, p) * smooth_s(v, p.epsilon) * lambda + v * p.mu_v
}

/// `c(v)/v`, finite at `v = 0`.
pub fn friction_ratio<T: Real>(v: T, lambda: T, p: &FrictionParams) -> T {
    coefficient(v, p) * smooth_s_over_v(v, p.epsilon) * lambda + p.mu_v
}

/// `(ratio, ∂ratio/∂v, ∂ratio/∂λ)` at speed `v`.
pub fn friction_ratio_derivatives(v: f64, lambda: f64, p: &FrictionParams) -> (f64, f64, f64) {
    let mu = coefficient(v, p);
    let sv = smooth_s_over_v(v, p.epsilon);
    let ratio = mu * sv * lambda + p.mu_v;
    let d_v = lambda * (coefficient_prime(v, p) * sv + mu * smooth_s_over_v_prime(v, p.epsilon));
    (ratio, d_v, mu * sv)
}

/// Euclidean norm whose derivative at the origin is taken as zero.
pub fn speed<T: Real>(w: &[T]) -> T {
    let s: T = w.iter().map(|&x| x * x).sum();
    if s.re() == 0.0 {
        T::zero()
    } else {
        s.sqrt()
    }
}

/// Friction force on one contact given its tangent basis, λ and relative velocity `u`.
pub fn contact_friction_force<T: Real>(
    b1: V3<T>,
    b2: V3<T>,
    lambda: T,
    u: V3<T>,
    p: &FrictionParams,
) -> V3<T> {
    let w = [linalg::dot(b1, u), linalg::dot(b2, u)];
    let ratio = friction_ratio(speed(&w), lambda, p);
    linalg::scale(linalg::add(linalg::scale(b1, w[0]), linalg::scale(b2, w[1])), -ratio)
}

/// Geometry of one contact needed for analytic friction derivatives.
#[derive(Copy, Clone, Debug)]
pub struct FrictionGeometry {
    pub normal: [f64; 3],
    pub curvature: M3<f64>,
    pub lambda: f64,
    /// `∂λ/∂d = −b''(d)`.
    pub dlambda_dd: f64,
    pub angular_velocity: [f64; 3],
}

/// Analytic `(∂f/∂v, ∂f/∂x)` of one contact's friction force at relative velocity `u`.
///
/// Uses the projector form `f = −ratio(‖Pu‖) P u`, `P = I − nnᵀ`, which equals
/// the basis form for any orthonormal tangent pair.
pub fn contact_friction_jacobian(
    geo: &FrictionGeometry,
    u: [f64; 3],
    p: &FrictionParams,
    with_geometry: bool,
) -> (M3<f64>, M3<f64>) {
    let n = geo.normal;
    let proj = linalg::m3_add(&linalg::IDENTITY, &linalg::m3_scale(&linalg::outer(n, n), -1.0));
    let w = linalg::mat_vec(&proj, u);
    let v = linalg::norm(w);
    let (ratio, d_v, d_lambda) = friction_ratio_derivatives(v, geo.lambda, p);
    let mut dphi = linalg::m3_scale(&linalg::IDENTITY, ratio);
    if v > 0.0 {
        dphi = linalg::m3_add(&dphi, &linalg::m3_scale(&linalg::outer(w, w), d_v / v));
    }
    let dfdv = linalg::m3_scale(&linalg::mat_mul(&dphi, &proj), -1.0);
    if !with_geometry {
        return (dfdv, [[0.0; 3]; 3]);
    }
    // dw/dx = −(n·u) N − n (N u)ᵀ − P [ω]×
    let nu = linalg::dot(n, u);
    let big_n = geo.curvature;
    let nu_vec = linalg::mat_vec(&big_n, u);
    let mut dwdx = linalg::m3_scale(&big_n, -nu);
    dwdx = linalg::m3_add(&dwdx, &linalg::m3_scale(&linalg::outer(n, nu_vec), -1.0));
    let spin = linalg::mat_mul(&proj, &linalg::skew(geo.angular_velocity));
    dwdx = linalg::m3_add(&dwdx, &linalg::m3_scale(&spin, -1.0));
    let mut dfdx = linalg::m3_scale(&linalg::mat_mul(&dphi, &dwdx), -1.0);
    // λ depends on the gap: dλ = (∂λ/∂d) nᵀ dx
    let lam_row = linalg::outer(w, n);
    dfdx = linalg::m3_add(&dfdx, &linalg::m3_scale(&lam_row, -d_lambda * geo.dlambda_dd));
    (dfdv, dfdx)
}
