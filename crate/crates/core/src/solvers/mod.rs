//! Damped Newton solvers for the per-step residual equations.

mod bicgstab;
mod newton;

pub use bicgstab::{bicgstab, KrylovError, KrylovResult};
pub use newton::{damped_newton, inexact_damped_newton, solve};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::{self, CsrMatrix};

/// Linear solver used inside Newton.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum LinearSolverKind {
    /// Assembled sparse Jacobian, sparse LU.
    #[default]
    Direct,
    /// Matrix-free BiCGSTAB on dual-number Jacobian-vector products.
    Iterative,
}

impl fmt::Display for LinearSolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinearSolverKind::Direct => "direct",
            LinearSolverKind::Iterative => "iterative",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unrecognized solver kind `{0}` (expected `direct` or `iterative`)")]
pub struct UnknownSolverKind(pub String);

impl FromStr for LinearSolverKind {
    type Err = UnknownSolverKind;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(LinearSolverKind::Direct),
            "iterative" => Ok(LinearSolverKind::Iterative),
            _ => Err(UnknownSolverKind(s.to_string())),
        }
    }
}

/// Newton and line-search parameters.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub kind: LinearSolverKind,
    pub max_iterations: usize,
    pub r_tol_abs: f64,
    pub r_tol_rel: f64,
    pub v_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Upper bound on the forcing term.
    pub sigma: f64,
    /// Backtracking factor.
    pub rho: f64,
    /// Forcing-term exponent.
    pub phi: f64,
    pub max_krylov_iterations: usize,
    /// Line search gives up below this step length.
    pub min_alpha: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kind: LinearSolverKind::Direct,
            max_iterations: 50,
            r_tol_abs: 1e-10,
            r_tol_rel: 1e-6,
            v_tol: 1e-6,
            c1: 1e-4,
            sigma: 0.01,
            rho: 0.5,
            phi: (1.0 + 5f64.sqrt()) / 2.0,
            max_krylov_iterations: 500,
            min_alpha: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.c1) || !unit(self.rho) || !unit(self.sigma) {
            return Err(format!(
                "need 0 < c1, rho, sigma < 1 (got {}, {}, {})",
                self.c1, self.rho, self.sigma
            ));
        }
        if !(self.r_tol_abs > 0.0 && self.r_tol_rel > 0.0 && self.v_tol > 0.0) {
            return Err("tolerances must be positive".into());
        }
        if self.max_iterations == 0 || self.max_krylov_iterations == 0 {
            return Err("iteration limits must be positive".into());
        }
        Ok(())
    }
}

/// Termination test: residual small in absolute or relative terms, or the
/// velocity update stagnated.
pub fn should_stop(r_inf: f64, r0_inf: f64, dv_inf: Option<f64>, cfg: &SolverConfig) -> bool {
    r_inf <= cfg.r_tol_abs.max(cfg.r_tol_rel * r0_inf) || dv_inf.is_some_and(|d| d <= cfg.v_tol)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    LineSearchFailed,
    LinearSolveFailed,
}

/// Per-solve diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖r_k‖₂` for `k = 0..=iterations`.
    pub residual_norms: Vec<f64>,
    pub final_residual_inf: f64,
    /// Residual threshold `max(r_tol_abs, r_tol_rel·‖r_0‖∞)` in effect.
    pub tolerance: f64,
    pub alphas: Vec<f64>,
    pub linear_iterations: Vec<usize>,
    /// Forcing term σ_k used for each linear solve.
    pub forcing_terms: Vec<f64>,
    /// Post-step value `1 − α(1 − σ_k)`.
    pub post_forcing: Vec<f64>,
    /// Iterations that fell back to the direction `−r`.
    pub fallbacks: usize,
    pub kappa_bumps: usize,
    pub status: SolveStatus,
    pub message: Option<String>,
}

impl SolveReport {
    fn new(r0: f64, r0_inf: f64, cfg: &SolverConfig) -> Self {
        SolveReport {
            iterations: 0,
            residual_norms: vec![r0],
            final_residual_inf: r0_inf,
            tolerance: cfg.r_tol_abs.max(cfg.r_tol_rel * r0_inf),
            alphas: Vec::new(),
            linear_iterations: Vec::new(),
            forcing_terms: Vec::new(),
            post_forcing: Vec::new(),
            fallbacks: 0,
            kappa_bumps: 0,
            status: SolveStatus::MaxIters,
            message: None,
        }
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Sparse matrix plus low-rank terms `Σ u wᵀ`.
#[derive(Clone, Debug)]
pub struct AssembledJacobian {
    pub sparse: CsrMatrix,
    pub low_rank: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AssembledJacobian {
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = self.sparse.mul_vec(p);
        for (u, w) in &self.low_rank {
            linalg::axpy(linalg::dot_n(w, p), u, &mut out);
        }
        out
    }
}

/// A square nonlinear system `r(v) = 0`.
pub trait NonlinearSystem {
    type Error: std::error::Error + Clone;
    fn dim(&self) -> usize;
    fn residual(&self, v: &[f64]) -> Result<Vec<f64>, Self::Error>;
    /// `∂r/∂v · p`.
    fn jvp(&self, v: &[f64], p: &[f64]) -> Result<Vec<f64>, Self::Error>;
    /// Assembled `∂r/∂v`; only the sparse part is factorized by the direct solver.
    fn jacobian(&self, v: &[f64]) -> Result<AssembledJacobian, Self::Error>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_criteria() {
        let cfg = SolverConfig { r_tol_abs: 1e-8, r_tol_rel: 1e-6, v_tol: 1e-5, ..Default::default() };
        assert!(should_stop(0.0, 1.0, None, &cfg));
        assert!(!should_stop(10.0 * 1e-6, 1.0, Some(1.0), &cfg));
        assert!(should_stop(1.0, 1.0, Some(1e-6), &cfg));
        assert!(should_stop(5e-9, 1e-3, None, &cfg));
    }

    #[test]
    fn solver_kind_strings() {
        assert_eq!("iterative".parse::<LinearSolverKind>().unwrap(), LinearSolverKind::Iterative);
        assert!("cg".parse::<LinearSolverKind>().is_err());
    }
}
