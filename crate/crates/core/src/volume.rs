//! Enclosed volume of closed surface regions and volume-change penalties.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Real;
use crate::linalg::{self, Triplets, V3};
use crate::mesh;

/// Pascals per atmosphere.
pub const ATM: f64 = 101_325.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("region `{0}` is not a closed, consistently oriented surface")]
    OpenRegion(String),
    #[error("invalid volume parameters for region `{region}`: {reason}")]
    Invalid { region: String, reason: String },
    #[error(
        "region `{region}` has non-positive volume {volume:e} under the {model} model; use the quadratic model or a smaller time step"
    )]
    NonPositiveVolume { region: String, volume: f64, model: VolumeModel },
    #[error("unrecognized volume model `{0}` (expected ideal-gas, nearly-incompressible or quadratic)")]
    UnknownModel(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum VolumeModel {
    IdealGas,
    NearlyIncompressible,
    #[default]
    Quadratic,
}

impl fmt::Display for VolumeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VolumeModel::IdealGas => "ideal-gas",
            VolumeModel::NearlyIncompressible => "nearly-incompressible",
            VolumeModel::Quadratic => "quadratic",
        })
    }
}

impl FromStr for VolumeModel {
    type Err = VolumeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ideal-gas" => Ok(VolumeModel::IdealGas),
            "nearly-incompressible" => Ok(VolumeModel::NearlyIncompressible),
            "quadratic" => Ok(VolumeModel::Quadratic),
            _ => Err(VolumeError::UnknownModel(s.to_string())),
        }
    }
}

/// Penalty parameters in SI units (κ_v in 1/Pa).
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumePenaltyParams {
    #[serde(skip)]
    pub model: VolumeModel,
    /// Compression coefficient κ_v (1/Pa).
    pub kappa_v: f64,
    /// Initial pressure P0 (Pa).
    pub p0: f64,
    /// Rest volume V0 (m³).
    pub v0: f64,
}

impl VolumePenaltyParams {
    /// Builds parameters from a compression coefficient given in 1/atm.
    pub fn from_atm(model: VolumeModel, kappa_v_per_atm: f64, p0: f64, v0: f64) -> Self {
        VolumePenaltyParams { model, kappa_v: kappa_v_per_atm / ATM, p0, v0 }
    }

    pub fn validate(&self, region: &str) -> Result<(), VolumeError> {
        let bad = |reason: String| Err(VolumeError::Invalid { region: region.to_string(), reason });
        if !(self.kappa_v > 0.0 && self.kappa_v.is_finite()) {
            return bad(format!("kappa_v = {} must be positive", self.kappa_v));
        }
        if !(self.p0 > 0.0) {
            return bad(format!("p0 = {} must be positive", self.p0));
        }
        if !(self.v0 > 0.0) {
            return bad(format!("v0 = {} must be positive", self.v0));
        }
        Ok(())
    }
}

/// Signed volume enclosed by `tris`: `Σ p1·(p2 × p3)/6`.
pub fn enclosed_volume<T: Real>(tris: &[[usize; 3]], q: &[T]) -> T {
    tris.iter()
        .map(|t| {
            let [a, b, c] = t.map(|i| [q[3 * i], q[3 * i + 1], q[3 * i + 2]]);
            linalg::dot(a, linalg::cross(b, c))
        })
        .sum::<T>()
        / 6.0
}

/// `∂V/∂q` for the region, generic so it can be differentiated again.
pub fn volume_gradient<T: Real>(tris: &[[usize; 3]], q: &[T]) -> Vec<T> {
    let mut g = vec![T::zero(); q.len()];
    for t in tris {
        let p: [V3<T>; 3] = t.map(|i| [q[3 * i], q[3 * i + 1], q[3 * i + 2]]);
        for k in 0..3 {
            let c = linalg::cross(p[(k + 1) % 3], p[(k + 2) % 3]);
            for j in 0..3 {
                g[3 * t[k] + j] += c[j] / 6.0;
            }
        }
    }
    g
}

/// Adds `s · ∂²V/∂q²` into `t`.
pub fn add_volume_hessian(tris: &[[usize; 3]], q: &[f64], s: f64, t: &mut Triplets) {
    for tri in tris {
        let p: [[f64; 3]; 3] = tri.map(|i| [q[3 * i], q[3 * i + 1], q[3 * i + 2]]);
        for k in 0..3 {
            let k1 = (k + 1) % 3;
            let k2 = (k + 2) % 3;
            // ∂/∂p_k1 of (p_k1 × p_k2) = −[p_k2]×, ∂/∂p_k2 = [p_k1]×
            t.push_block(tri[k], tri[k1], &linalg::skew(p[k2]), -s / 6.0);
            t.push_block(tri[k], tri[k2], &linalg::skew(p[k1]), s / 6.0);
        }
    }
}

/// `∂²V/∂q² · p`.
pub fn volume_hessian_apply(tris: &[[usize; 3]], q: &[f64], dir: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; q.len()];
    for t in tris {
        let x: [[f64; 3]; 3] = t.map(|i| [q[3 * i], q[3 * i + 1], q[3 * i + 2]]);
        let d: [[f64; 3]; 3] = t.map(|i| [dir[3 * i], dir[3 * i + 1], dir[3 * i + 2]]);
        for k in 0..3 {
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            let c = linalg::add(linalg::cross(d[a], x[b]), linalg::cross(x[a], d[b]));
            for j in 0..3 {
                out[3 * t[k] + j] += c[j] / 6.0;
            }
        }
    }
    out
}

/// Penalty energy `W(V)`.
pub fn volume_energy(v: f64, p: &VolumePenaltyParams) -> Result<f64, VolumeError> {
    let (v0, k) = (p.v0, p.kappa_v);
    match p.model {
        VolumeModel::Quadratic => Ok((v - v0).powi(2) / (2.0 * v0 * k)),
        m => {
            if !(v > 0.0) {
                return Err(VolumeError::NonPositiveVolume { region: String::new(), volume: v, model: m });
            }
            // ln(V/V0) via ln_1p keeps the cancellation near V0 accurate.
            let l = ((v - v0) / v0).ln_1p();
            Ok(match m {
                VolumeModel::IdealGas => p.p0 * ((v - v0) - v0 * l),
                _ => (v0 - v + v * l) / k,
            })
        }
    }
}

/// `(W'(V), W''(V))`, generic in `V`.
pub fn volume_energy_derivatives<T: Real>(v: T, p: &VolumePenaltyParams) -> Result<(T, T), VolumeError> {
    let (v0, k) = (p.v0, p.kappa_v);
    match p.model {
        VolumeModel::Quadratic => Ok(((v - v0) / (v0 * k), T::from_f64(1.0 / (v0 * k)))),
        m => {
            if !(v.re() > 0.0) {
                return Err(VolumeError::NonPositiveVolume { region: String::new(), volume: v.re(), model: m });
            }
            Ok(match m {
                VolumeModel::IdealGas => {
                    ((T::one() - T::from_f64(v0) / v) * p.p0, T::from_f64(p.p0 * v0) / (v * v))
                }
                _ => (((v - v0) / v0).ln_1p() / k, T::one() / (v * k)),
            })
        }
    }
}

/// A closed surface region with its penalty.
#[derive(Clone, Debug)]
pub struct VolumeRegion {
    pub name: String,
    pub tris: Vec<[usize; 3]>,
    pub params: VolumePenaltyParams,
}

impl VolumeRegion {
    pub fn new(name: &str, tris: Vec<[usize; 3]>, params: VolumePenaltyParams) -> Result<Self, VolumeError> {
        if !mesh::is_closed_and_oriented(&tris) {
            return Err(VolumeError::OpenRegion(name.to_string()));
        }
        params.validate(name)?;
        Ok(VolumeRegion { name: name.to_string(), tris, params })
    }

    fn named(&self, e: VolumeError) -> VolumeError {
        match e {
            VolumeError::NonPositiveVolume { volume, model, .. } => {
                VolumeError::NonPositiveVolume { region: self.name.clone(), volume, model }
            }
            other => other,
        }
    }

    pub fn volume(&self, q: &[f64]) -> f64 {
        enclosed_volume(&self.tris, q)
    }

    pub fn energy(&self, q: &[f64]) -> Result<f64, VolumeError> {
        volume_energy(self.volume(q), &self.params).map_err(|e| self.named(e))
    }

    /// Adds `−W'(V) ∂V/∂q` into `out`.
    pub fn add_force<T: Real>(&self, q: &[T], out: &mut [T]) -> Result<(), VolumeError> {
        let v = enclosed_volume(&self.tris, q);
        let (dw, _) = volume_energy_derivatives(v, &self.params).map_err(|e| self.named(e))?;
        let g = volume_gradient(&self.tris, q);
        for (o, gi) in out.iter_mut().zip(g) {
            *o -= dw * gi;
        }
        Ok(())
    }

    pub fn force(&self, q: &[f64]) -> Result<Vec<f64>, VolumeError> {
        let mut out = vec![0.0; q.len()];
        self.add_force(q, &mut out)?;
        Ok(out)
    }

    /// Sparse part `−W' ∂²V/∂q²` of the force Jacobian, scaled by `s`, into `t`.
    /// Returns the rank-one part as `(coefficient, ∂V/∂q)` with
    /// `∂f/∂q = sparse + coefficient · ∇V ∇Vᵀ`.
    pub fn add_force_jacobian(&self, q: &[f64], s: f64, t: &mut Triplets) -> Result<(f64, Vec<f64>), VolumeError> {
        let v = self.volume(q);
        let (dw, d2w) = volume_energy_derivatives(v, &self.params).map_err(|e| self.named(e))?;
        add_volume_hessian(&self.tris, q, -dw * s, t);
        Ok((-d2w, volume_gradient(&self.tris, q)))
    }

    /// `∂f_v/∂q · dir`. With `exact = false` the rank-one term is dropped.
    pub fn jacobian_apply(&self, q: &[f64], dir: &[f64], exact: bool) -> Result<Vec<f64>, VolumeError> {
        let v = self.volume(q);
        let (dw, d2w) = volume_energy_derivatives(v, &self.params).map_err(|e| self.named(e))?;
        let mut out = volume_hessian_apply(&self.tris, q, dir);
        for o in &mut out {
            *o *= -dw;
        }
        if exact {
            let g = volume_gradient(&self.tris, q);
            let gp = linalg::dot_n(&g, dir);
            linalg::axpy(-d2w * gp, &g, &mut out);
        }
        Ok(out)
    }
}

/// `volume_jacobian_apply` as a free function.
pub fn volume_jacobian_apply(
    region: &VolumeRegion,
    q: &[f64],
    dir: &[f64],
    exact: bool,
) -> Result<Vec<f64>, VolumeError> {
    region.jacobian_apply(q, dir, exact)
}
