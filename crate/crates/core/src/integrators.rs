//! Time-integration residuals.
//!
//! Every scheme is expressed as a sequence of stages, each of which solves
//!
//! ```text
//! r(v) = M (v − b) − γ_f f(a + γ_q v, v) − e = 0
//! ```
//!
//! for the stage velocity `v`, where `b`, `a` and `e` depend only on known
//! states. Lagged-friction stages use the mass-scaled form
//! `v − b − M⁻¹(γ_f f + e)`, which has the same root. Rows of vertices with a
//! prescribed velocity are replaced by `v − v_p`.
//!
//! Coefficients:
//!
//! | scheme | stage | b | a | γ_q = γ_f | e |
//! |---|---|---|---|---|---|
//! | BE | 1 | vᵗ | qᵗ | h | 0 |
//! | TR | 1 | vᵗ | qᵗ + h/2 vᵗ | h/2 | h/2 f(qᵗ, vᵗ) |
//! | BDF2 | 1 | 4/3 vᵗ − 1/3 vᵗ⁻ʰ | 4/3 qᵗ − 1/3 qᵗ⁻ʰ | 2h/3 | 0 |
//! | TR-BDF2 | 1 | TR over γh, γ = 2 − √2 | | | |
//! | | 2 | c₀ V₁ − c₁ vᵗ | c₀ Q₁ − c₁ qᵗ | c₂ h | 0 |
//! | SDIRK2 | 1 | vᵗ | qᵗ | γh, γ = 1 − 1/√2 | 0 |
//! | | 2 | vᵗ + (1−γ)/γ (V₁ − vᵗ) | qᵗ + h(1−γ) V₁ | γh | 0 |
//!
//! with `c₀ = 1/(γ(2−γ))`, `c₁ = (1−γ)²/(γ(2−γ))`, `c₂ = (1−γ)/(2−γ)`.
//! BDF2 takes a backward Euler step when no history is available.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{seed, tangents, Dual, Real};
use crate::contact::{ContactPair, PenaltyParams};
use crate::forces::{ForceContext, ForceError, ForceSelection, FrictionSource, PhysicsModel};
use crate::friction::{FrictionMode, JacobianDetail};
use crate::linalg::Triplets;
use crate::mesh::SystemState;
use crate::solvers::{self, AssembledJacobian, NonlinearSystem, SolveReport, SolverConfig};

/// Time-integration scheme.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    BackwardEuler,
    Trapezoidal,
    Bdf2,
    TrBdf2,
    Sdirk2,
    /// Trapezoidal rule with contact and friction taken fully explicitly. Unstable
    /// on purpose; kept as a reference for the coupled trapezoidal rule.
    TrDecoupled,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::BackwardEuler,
        Scheme::Trapezoidal,
        Scheme::Bdf2,
        Scheme::TrBdf2,
        Scheme::Sdirk2,
        Scheme::TrDecoupled,
    ];

    pub fn supports_lagged(self) -> bool {
        matches!(self, Scheme::BackwardEuler | Scheme::Trapezoidal)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::BackwardEuler => "be",
            Scheme::Trapezoidal => "tr",
            Scheme::Bdf2 => "bdf2",
            Scheme::TrBdf2 => "trbdf2",
            Scheme::Sdirk2 => "sdirk2",
            Scheme::TrDecoupled => "tr-decoupled",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unrecognized integrator `{0}` (expected be, tr, bdf2, trbdf2, sdirk2 or tr-decoupled)")]
pub struct UnknownScheme(pub String);

impl FromStr for Scheme {
    type Err = UnknownScheme;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL.into_iter().find(|k| k.to_string() == s).ok_or_else(|| UnknownScheme(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("force evaluation failed: {0}")]
    Force(#[from] ForceError),
    #[error("stage {stage} did not converge ({:?}): {}", .report.status, .report.message.as_deref().unwrap_or("no detail"))]
    Solve { stage: usize, report: Box<SolveReport> },
    #[error("lagged friction is only defined for be and tr, not {0}")]
    LaggedUnsupported(Scheme),
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
}

/// Integrator settings for one step.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub friction: FrictionMode,
    pub detail: JacobianDetail,
    pub solver: SolverConfig,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            scheme: Scheme::BackwardEuler,
            friction: FrictionMode::Implicit,
            detail: JacobianDetail::Full,
            solver: SolverConfig::default(),
        }
    }
}

/// A single stage residual `r(v)`.
pub struct StageResidual<'a> {
    pub model: &'a PhysicsModel,
    pub ctx: ForceContext<'a>,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub gamma_q: f64,
    pub gamma_f: f64,
    pub e: Vec<f64>,
    /// Use the `M⁻¹`-scaled form.
    pub mass_scaled: bool,
    pub detail: JacobianDetail,
    prescribed: Vec<(usize, f64)>,
}

impl<'a> StageResidual<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a PhysicsModel,
        ctx: ForceContext<'a>,
        b: Vec<f64>,
        a: Vec<f64>,
        gamma: f64,
        e: Vec<f64>,
        mass_scaled: bool,
        detail: JacobianDetail,
    ) -> Self {
        StageResidual {
            model,
            ctx,
            b,
            a,
            gamma_q: gamma,
            gamma_f: gamma,
            e,
            mass_scaled,
            detail,
            prescribed: model.prescribed_dofs(),
        }
    }

    /// Stage position `a + γ_q v`.
    pub fn positions(&self, v: &[f64]) -> Vec<f64> {
        self.a.iter().zip(v).map(|(a, v)| a + self.gamma_q * v).collect()
    }

    /// Initial guess with prescribed velocities imposed.
    pub fn initial_guess(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for &(i, vp) in &self.prescribed {
            out[i] = vp;
        }
        out
    }

    fn eval<T: Real>(&self, ctx: &ForceContext, v: &[T]) -> Result<Vec<T>, ForceError> {
        let q: Vec<T> = self.a.iter().zip(v).map(|(&a, &v)| v * self.gamma_q + a).collect();
        let f = self.model.force(ctx, &q, v)?;
        let m = self.model.mass();
        let mut r: Vec<T> = (0..v.len())
            .map(|i| {
                let rhs = f[i] * self.gamma_f + self.e[i];
                if self.mass_scaled {
                    v[i] - self.b[i] - rhs / m[i]
                } else {
                    (v[i] - self.b[i]) * m[i] - rhs
                }
            })
            .collect();
        for &(i, vp) in &self.prescribed {
            r[i] = v[i] - vp;
        }
        Ok(r)
    }

    fn jvp_ctx(&self) -> ForceContext<'a> {
        let mut ctx = self.ctx;
        if self.detail == JacobianDetail::FrozenBasis {
            if let FrictionSource::Current = ctx.friction {
                ctx.friction = FrictionSource::CurrentFrozen;
            }
        }
        ctx
    }
}

impl NonlinearSystem for StageResidual<'_> {
    type Error = ForceError;

    fn dim(&self) -> usize {
        self.b.len()
    }

    fn residual(&self, v: &[f64]) -> Result<Vec<f64>, ForceError> {
        self.eval(&self.ctx, v)
    }

    fn jvp(&self, v: &[f64], p: &[f64]) -> Result<Vec<f64>, ForceError> {
        let vd: Vec<Dual> = seed(v, p);
        Ok(tangents(&self.eval(&self.jvp_ctx(), &vd)?))
    }

    fn jacobian(&self, v: &[f64]) -> Result<AssembledJacobian, ForceError> {
        let n = self.dim();
        let q = self.positions(v);
        let jac = self.model.force_jacobian(&self.ctx, &q, v, self.detail)?;
        let m = self.model.mass();
        let mut fixed = vec![false; n];
        for &(i, _) in &self.prescribed {
            fixed[i] = true;
        }
        // Row scale: the residual is `row_scale_i · (m_i v_i − γ_f f_i) + …`.
        let row_scale = |i: usize| if self.mass_scaled { 1.0 / m[i] } else { 1.0 };
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, if fixed[i] { 1.0 } else { m[i] * row_scale(i) });
        }
        let gq = self.gamma_f * self.gamma_q;
        for (i, j, x) in jac.dq.entries.iter().copied() {
            if !fixed[i] {
                t.push(i, j, -gq * x * row_scale(i));
            }
        }
        for (i, j, x) in jac.dv.entries.iter().copied() {
            if !fixed[i] {
                t.push(i, j, -self.gamma_f * x * row_scale(i));
            }
        }
        let low_rank = jac
            .dq_low_rank
            .into_iter()
            .map(|(c, g)| {
                let u: Vec<f64> =
                    (0..n).map(|i| if fixed[i] { 0.0 } else { -gq * c * g[i] * row_scale(i) }).collect();
                (u, g)
            })
            .collect();
        Ok(AssembledJacobian { sparse: t.to_csr(), low_rank })
    }
}

/// One step's inputs.
#[derive(Copy, Clone, Debug)]
pub struct StepInput<'a> {
    pub state: &'a SystemState,
    /// State at `t − h`, used by BDF2.
    pub previous: Option<&'a SystemState>,
    pub h: f64,
    pub pairs: &'a [ContactPair],
    pub penalty: PenaltyParams,
}

/// Result of a step: the new state plus one report per stage solve (lagged
/// modes contribute one report per fixed-point iteration).
#[derive(Clone, Debug)]
pub struct StepResult {
    pub state: SystemState,
    pub reports: Vec<SolveReport>,
}

pub const TRBDF2_GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;
pub const SDIRK2_GAMMA: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

fn lin(terms: &[(f64, &[f64])]) -> Vec<f64> {
    let n = terms[0].1.len();
    (0..n).map(|i| terms.iter().map(|(c, x)| c * x[i]).sum()).collect()
}

struct Stepper<'a> {
    model: &'a PhysicsModel,
    input: StepInput<'a>,
    cfg: &'a IntegratorConfig,
    reports: Vec<SolveReport>,
}

impl<'a> Stepper<'a> {
    fn ctx(&self, time: f64, select: ForceSelection, friction: FrictionSource<'a>) -> ForceContext<'a> {
        ForceContext { pairs: self.input.pairs, penalty: self.input.penalty, time, friction, select }
    }

    fn explicit_force(&self, q: &[f64], v: &[f64], time: f64, select: ForceSelection) -> Result<Vec<f64>, ForceError> {
        self.model.force(&self.ctx(time, select, FrictionSource::Current), q, v)
    }

    /// Solves one implicit stage with all forces and current-friction geometry.
    #[allow(clippy::too_many_arguments)]
    fn solve_stage(
        &mut self,
        stage: usize,
        b: Vec<f64>,
        a: Vec<f64>,
        gamma: f64,
        e: Vec<f64>,
        time: f64,
        select: ForceSelection,
        guess: &[f64],
    ) -> Result<Vec<f64>, StepError> {
        let ctx = self.ctx(time, select, FrictionSource::Current);
        let sys = StageResidual::new(self.model, ctx, b, a, gamma, e, false, self.cfg.detail);
        self.run(stage, &sys, guess)
    }

    fn run(&mut self, stage: usize, sys: &StageResidual, guess: &[f64]) -> Result<Vec<f64>, StepError> {
        let mut v0 = sys.initial_guess(guess);
        if sys.residual(&v0).is_err() {
            // The extrapolated guess can invert elements; the guess that
            // reproduces the start-of-step configuration is always valid.
            let q = &self.input.state.q;
            let back: Vec<f64> = q.iter().zip(&sys.a).map(|(q, a)| (q - a) / sys.gamma_q).collect();
            v0 = sys.initial_guess(&back);
        }
        let (v, report) = solvers::solve(sys, &v0, &self.cfg.solver)?;
        if !report.converged() {
            return Err(StepError::Solve { stage, report: Box::new(report) });
        }
        self.reports.push(report);
        Ok(v)
    }

    /// Lagged-friction BE or TR: fixed-point iterations over the friction geometry.
    fn lagged(&mut self, iterations: usize) -> Result<SystemState, StepError> {
        let s = self.input.state;
        let h = self.input.h;
        let t1 = s.t + h;
        let (a, gamma, e) = match self.cfg.scheme {
            Scheme::BackwardEuler => (s.q.clone(), h, vec![0.0; s.v.len()]),
            Scheme::Trapezoidal => {
                let f0 = self.explicit_force(&s.q, &s.v, s.t, ForceSelection::ALL)?;
                (lin(&[(1.0, &s.q), (0.5 * h, &s.v)]), 0.5 * h, lin(&[(0.5 * h, &f0)]))
            }
            other => return Err(StepError::LaggedUnsupported(other)),
        };
        let mut v = s.v.clone();
        let mut basis_q = s.q.clone();
        let mut basis_t = s.t;
        for k in 0..iterations.max(1) {
            let friction = FrictionSource::Lagged { q: &basis_q, time: basis_t };
            let ctx = ForceContext {
                pairs: self.input.pairs,
                penalty: self.input.penalty,
                time: t1,
                friction,
                select: ForceSelection::ALL,
            };
            let sys = StageResidual::new(self.model, ctx, s.v.clone(), a.clone(), gamma, e.clone(), true, self.cfg.detail);
            v = self.run(k + 1, &sys, &v)?;
            let q = sys.positions(&v);
            drop(sys);
            basis_q = q;
            basis_t = t1;
        }
        let q: Vec<f64> = a.iter().zip(&v).map(|(a, v)| a + gamma * v).collect();
        Ok(SystemState { q, v, t: t1 })
    }

    fn implicit(&mut self) -> Result<SystemState, StepError> {
        let s = self.input.state;
        let h = self.input.h;
        let t1 = s.t + h;
        let n = s.v.len();
        let zero = || vec![0.0; n];
        let all = ForceSelection::ALL;
        let scheme = match (self.cfg.scheme, self.input.previous) {
            (Scheme::Bdf2, None) => Scheme::BackwardEuler,
            (k, _) => k,
        };
        let (a, gamma, v) = match scheme {
            Scheme::BackwardEuler => {
                let v = self.solve_stage(1, s.v.clone(), s.q.clone(), h, zero(), t1, all, &s.v)?;
                (s.q.clone(), h, v)
            }
            Scheme::Trapezoidal => {
                let f0 = self.explicit_force(&s.q, &s.v, s.t, all)?;
                let a = lin(&[(1.0, &s.q), (0.5 * h, &s.v)]);
                let v = self.solve_stage(1, s.v.clone(), a.clone(), 0.5 * h, lin(&[(0.5 * h, &f0)]), t1, all, &s.v)?;
                (a, 0.5 * h, v)
            }
            Scheme::TrDecoupled => {
                let f0 = self.explicit_force(&s.q, &s.v, s.t, ForceSelection::NON_CONTACT)?;
                let fc = self.explicit_force(&s.q, &s.v, s.t, ForceSelection::CONTACT_ONLY)?;
                let a = lin(&[(1.0, &s.q), (0.5 * h, &s.v)]);
                let e = lin(&[(0.5 * h, &f0), (h, &fc)]);
                let v = self.solve_stage(1, s.v.clone(), a.clone(), 0.5 * h, e, t1, ForceSelection::NON_CONTACT, &s.v)?;
                (a, 0.5 * h, v)
            }
            Scheme::Bdf2 => {
                let p = self.input.previous.expect("history checked above");
                let b = lin(&[(4.0 / 3.0, &s.v), (-1.0 / 3.0, &p.v)]);
                let a = lin(&[(4.0 / 3.0, &s.q), (-1.0 / 3.0, &p.q)]);
                let g = 2.0 * h / 3.0;
                let v = self.solve_stage(1, b, a.clone(), g, zero(), t1, all, &s.v)?;
                (a, g, v)
            }
            Scheme::TrBdf2 => {
                let gm = TRBDF2_GAMMA;
                let th = s.t + gm * h;
                let f0 = self.explicit_force(&s.q, &s.v, s.t, all)?;
                let a1 = lin(&[(1.0, &s.q), (0.5 * gm * h, &s.v)]);
                let e1 = lin(&[(0.5 * gm * h, &f0)]);
                let v1 = self.solve_stage(1, s.v.clone(), a1.clone(), 0.5 * gm * h, e1, th, all, &s.v)?;
                let q1 = lin(&[(1.0, &a1), (0.5 * gm * h, &v1)]);
                let c0 = 1.0 / (gm * (2.0 - gm));
                let c1 = (1.0 - gm).powi(2) / (gm * (2.0 - gm));
                let c2 = (1.0 - gm) / (2.0 - gm);
                let b = lin(&[(c0, &v1), (-c1, &s.v)]);
                let a = lin(&[(c0, &q1), (-c1, &s.q)]);
                let v = self.solve_stage(2, b, a.clone(), c2 * h, zero(), t1, all, &v1)?;
                (a, c2 * h, v)
            }
            Scheme::Sdirk2 => {
                let gm = SDIRK2_GAMMA;
                let v1 = self.solve_stage(1, s.v.clone(), s.q.clone(), gm * h, zero(), s.t + gm * h, all, &s.v)?;
                let b = lin(&[(1.0, &s.v), ((1.0 - gm) / gm, &v1), (-(1.0 - gm) / gm, &s.v)]);
                let a = lin(&[(1.0, &s.q), (h * (1.0 - gm), &v1)]);
                let v = self.solve_stage(2, b, a.clone(), gm * h, zero(), t1, all, &v1)?;
                (a, gm * h, v)
            }
        };
        let q = a.iter().zip(&v).map(|(a, v)| a + gamma * v).collect();
        Ok(SystemState { q, v, t: t1 })
    }
}

/// Advances `input.state` by one step of length `input.h`.
pub fn step(model: &PhysicsModel, input: StepInput, cfg: &IntegratorConfig) -> Result<StepResult, StepError> {
    if !(input.h > 0.0) {
        return Err(StepError::BadStep(input.h));
    }
    let mut stepper = Stepper { model, input, cfg, reports: Vec::new() };
    let state = match cfg.friction {
        FrictionMode::Implicit => stepper.implicit()?,
        FrictionMode::Lagged { iterations } => {
            if !cfg.scheme.supports_lagged() {
                return Err(StepError::LaggedUnsupported(cfg.scheme));
            }
            stepper.lagged(iterations)?
        }
    };
    Ok(StepResult { state, reports: stepper.reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{ImplicitObstacle, ObstacleShape};
    use crate::friction::FrictionParams;
    use crate::linalg::norm_inf;
    use crate::mesh::{MaterialParams, TetMesh, TetMeshModel};
    use crate::solvers::LinearSolverKind;

    fn tight() -> SolverConfig {
        SolverConfig { r_tol_abs: 1e-13, r_tol_rel: 1e-13, v_tol: 1e-15, ..Default::default() }
    }

    /// Uniform translation of a tet damped only by mass-proportional damping:
    /// every dof obeys `v̇ = −α v`.
    fn decay_model(alpha: f64) -> PhysicsModel {
        let mat = MaterialParams::new(1000.0, 1e4, 0.3).with_damping(alpha, 0.0);
        let mesh = TetMeshModel::from_single("t", TetMesh::single_tet(0.1), mat).unwrap();
        PhysicsModel::new(mesh, [0.0; 3])
    }

    fn uniform(model: &PhysicsModel, v: f64) -> SystemState {
        let mut s = SystemState::at_rest(&model.mesh);
        s.v.iter_mut().for_each(|x| *x = v);
        s
    }

    fn one_step(model: &PhysicsModel, scheme: Scheme, s: &SystemState, prev: Option<&SystemState>, h: f64) -> SystemState {
        let cfg = IntegratorConfig { scheme, solver: tight(), ..Default::default() };
        let input = StepInput { state: s, previous: prev, h, pairs: &[], penalty: PenaltyParams { delta: 1e-3, kappa: 1.0, kappa_max: 1.0 } };
        step(model, input, &cfg).unwrap().state
    }

    fn amplification(scheme: Scheme, z: f64) -> f64 {
        let g = SDIRK2_GAMMA;
        let t = TRBDF2_GAMMA;
        match scheme {
            Scheme::BackwardEuler => 1.0 / (1.0 - z),
            Scheme::Trapezoidal | Scheme::TrDecoupled => (1.0 + z / 2.0) / (1.0 - z / 2.0),
            Scheme::Sdirk2 => (1.0 + (1.0 - 2.0 * g) * z) / (1.0 - g * z).powi(2),
            Scheme::TrBdf2 => {
                let half = (1.0 + t * z / 2.0) / (1.0 - t * z / 2.0);
                let c0 = 1.0 / (t * (2.0 - t));
                let c1 = (1.0 - t).powi(2) / (t * (2.0 - t));
                let c2 = (1.0 - t) / (2.0 - t);
                (c0 * half - c1) / (1.0 - c2 * z)
            }
            Scheme::Bdf2 => unreachable!(),
        }
    }

    #[test]
    fn scheme_strings_round_trip() {
        for k in Scheme::ALL {
            assert_eq!(k.to_string().parse::<Scheme>().unwrap(), k);
        }
        assert!("rk4".parse::<Scheme>().is_err());
    }

    #[test]
    fn linear_decay_amplification_factors() {
        let alpha = 5.0;
        let model = decay_model(alpha);
        let s = uniform(&model, 1.0);
        for h in [0.01, 0.1, 1.0] {
            let z = -alpha * h;
            for k in [Scheme::BackwardEuler, Scheme::Trapezoidal, Scheme::Sdirk2, Scheme::TrBdf2] {
                let out = one_step(&model, k, &s, None, h);
                let want = amplification(k, z);
                for &v in &out.v {
                    assert!((v - want).abs() < 1e-10, "{k} h={h}: {v} vs {want}");
                }
            }
            // Two-step recurrence for BDF2 from two exact-decay states.
            let prev = uniform(&model, (-z).exp());
            let out = one_step(&model, Scheme::Bdf2, &s, Some(&prev), h);
            let want = (4.0 / 3.0 - (-z).exp() / 3.0) / (1.0 - 2.0 * z / 3.0);
            assert!((out.v[0] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn stiff_limit() {
        let model = decay_model(1e7);
        let s = uniform(&model, 1.0);
        let h = 0.1;
        let tr = one_step(&model, Scheme::Trapezoidal, &s, None, h).v[0];
        assert!((tr + 1.0).abs() < 1e-5, "{tr}");
        for k in [Scheme::Sdirk2, Scheme::TrBdf2, Scheme::BackwardEuler] {
            let v = one_step(&model, k, &s, None, h).v[0];
            assert!(v.abs() < 1e-5, "{k}: {v}");
        }
        let v1 = one_step(&model, Scheme::Bdf2, &s, None, h);
        let v2 = one_step(&model, Scheme::Bdf2, &v1, Some(&s), h).v[0];
        assert!(v2.abs() < 1e-5);
    }

    #[test]
    fn force_free_and_gravity_roots() {
        let model = decay_model(0.0);
        let s = uniform(&model, 0.3);
        let mut prev = s.clone();
        prev.q.iter_mut().for_each(|x| *x -= 0.05 * 0.3);
        for k in Scheme::ALL {
            let out = one_step(&model, k, &s, Some(&prev), 0.05);
            for (v, q) in out.v.iter().zip(out.q.iter().zip(&s.q)) {
                assert!((v - 0.3).abs() < 1e-12);
                assert!((q.0 - q.1 - 0.05 * 0.3).abs() < 1e-12);
            }
        }
        let mut model = decay_model(0.0);
        model.gravity = [0.0, -9.8, 0.0];
        let s = SystemState::at_rest(&model.mesh);
        for k in [Scheme::BackwardEuler, Scheme::Trapezoidal] {
            let out = one_step(&model, k, &s, None, 0.01);
            for (i, v) in out.v.iter().enumerate() {
                let want = if i % 3 == 1 { -0.098 } else { 0.0 };
                assert!((v - want).abs() < 1e-12, "{k}");
            }
        }
    }

    fn contact_fixture() -> (PhysicsModel, SystemState, Vec<ContactPair>, PenaltyParams) {
        let mat = MaterialParams::new(1000.0, 1e5, 0.3).with_damping(0.5, 0.005);
        let mesh = TetMesh::box_grid([0.1, 0.1, 0.1], [1, 1, 1]).translated([0.0, 0.0008, 0.0]);
        let m = TetMeshModel::from_single("b", mesh, mat).unwrap();
        let model = PhysicsModel::new(m, [0.0, -9.8, 0.0]).with_obstacle(ImplicitObstacle::new(
            "ground",
            ObstacleShape::HalfSpace { point: [0.0; 3], normal: [0.0, 1.0, 0.0] },
            FrictionParams { mu_d: 0.4, mu_s: 0.4, mu_v: 0.0, epsilon: 0.01, stribeck_velocity: None },
        ));
        let mut s = SystemState::at_rest(&model.mesh);
        s.q.iter_mut().enumerate().for_each(|(i, x)| *x += 2e-4 * (i as f64).sin());
        s.v.iter_mut().enumerate().for_each(|(i, x)| *x = if i % 3 == 0 { 0.05 } else { 0.01 * (i as f64).cos() });
        let penalty = PenaltyParams { delta: 0.002, kappa: 2e3, kappa_max: 1e12 };
        let pairs = model.candidate_pairs(&[(&s.q, 0.0)], 0.003);
        (model, s, pairs, penalty)
    }

    #[test]
    fn assembled_jacobian_matches_dual_jvp() {
        let (mut model, s, pairs, penalty) = contact_fixture();
        model.fixed.push(crate::forces::Dirichlet { vertex: 7, velocity: [0.0, 0.0, 0.01] });
        let p: Vec<f64> = (0..s.v.len()).map(|i| ((i * 5 % 7) as f64 - 3.0) * 0.2).collect();
        let v: Vec<f64> = s.v.iter().map(|x| x * 0.9 + 1e-3).collect();
        let frictions = [FrictionSource::Current, FrictionSource::Lagged { q: &s.q, time: 0.0 }];
        for (fi, friction) in frictions.into_iter().enumerate() {
            for (gamma, scaled) in [(0.01, false), (0.005, true)] {
                let ctx = ForceContext { pairs: &pairs, penalty, time: 0.01, friction, select: ForceSelection::ALL };
                let e: Vec<f64> = (0..s.v.len()).map(|i| 0.001 * i as f64).collect();
                let sys = StageResidual::new(&model, ctx, s.v.clone(), s.q.clone(), gamma, e, scaled || fi == 1, JacobianDetail::Full);
                let jp = sys.jacobian(&v).unwrap().apply(&p);
                let dual = sys.jvp(&v, &p).unwrap();
                let scale = norm_inf(&dual);
                for i in 0..p.len() {
                    assert!((jp[i] - dual[i]).abs() <= 1e-10 * scale, "{fi} {i}: {} vs {}", jp[i], dual[i]);
                }
            }
        }
    }

    #[test]
    fn round_trip_update_identity() {
        let (model, s, pairs, penalty) = contact_fixture();
        let h = 0.01;
        for scheme in [Scheme::BackwardEuler, Scheme::Trapezoidal, Scheme::Sdirk2, Scheme::TrBdf2, Scheme::Bdf2] {
            let cfg = IntegratorConfig { scheme, solver: tight(), ..Default::default() };
            let input = StepInput { state: &s, previous: Some(&s), h, pairs: &pairs, penalty };
            let out = step(&model, input, &cfg).unwrap();
            let ctx = |t| ForceContext { pairs: &pairs, penalty, time: t, friction: FrictionSource::Current, select: ForceSelection::ALL };
            let f1 = model.force(&ctx(h), &out.state.q, &out.state.v).unwrap();
            let m = model.mass();
            match scheme {
                Scheme::BackwardEuler => {
                    for i in 0..s.v.len() {
                        assert!((out.state.q[i] - s.q[i] - h * out.state.v[i]).abs() < 1e-14);
                        let r = m[i] * (out.state.v[i] - s.v[i]) - h * f1[i];
                        assert!(r.abs() < 1e-9, "{r}");
                    }
                }
                Scheme::Trapezoidal => {
                    let f0 = model.force(&ctx(0.0), &s.q, &s.v).unwrap();
                    for i in 0..s.v.len() {
                        let dq = out.state.q[i] - s.q[i] - 0.5 * h * (s.v[i] + out.state.v[i]);
                        assert!(dq.abs() < 1e-14);
                        let r = m[i] * (out.state.v[i] - s.v[i]) - 0.5 * h * (f0[i] + f1[i]);
                        assert!(r.abs() < 1e-9, "{r}");
                    }
                }
                Scheme::Bdf2 => {
                    for i in 0..s.v.len() {
                        let r = m[i] * (1.5 * out.state.v[i] - 2.0 * s.v[i] + 0.5 * s.v[i]) - h * f1[i];
                        assert!(r.abs() < 1e-9, "{r}");
                        let dq = 1.5 * out.state.q[i] - 2.0 * s.q[i] + 0.5 * s.q[i] - h * out.state.v[i];
                        assert!(dq.abs() < 1e-14);
                    }
                }
                _ => assert_eq!(out.reports.len(), 2),
            }
        }
    }

    #[test]
    fn lagged_matches_implicit_without_friction() {
        let (mut model, s, pairs, penalty) = contact_fixture();
        model.obstacles[0].friction = FrictionParams::frictionless();
        for scheme in [Scheme::BackwardEuler, Scheme::Trapezoidal] {
            let mk = |friction| IntegratorConfig { scheme, friction, solver: tight(), ..Default::default() };
            let input = StepInput { state: &s, previous: None, h: 0.01, pairs: &pairs, penalty };
            let a = step(&model, input, &mk(FrictionMode::Implicit)).unwrap().state;
            let b = step(&model, input, &mk(FrictionMode::Lagged { iterations: 2 })).unwrap().state;
            for (x, y) in a.v.iter().zip(&b.v) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        let cfg = IntegratorConfig { scheme: Scheme::Sdirk2, friction: FrictionMode::Lagged { iterations: 1 }, ..Default::default() };
        let input = StepInput { state: &s, previous: None, h: 0.01, pairs: &pairs, penalty };
        assert!(matches!(step(&model, input, &cfg), Err(StepError::LaggedUnsupported(Scheme::Sdirk2))));
    }

    #[test]
    fn direct_and_iterative_agree_on_contact_step() {
        let (model, s, pairs, penalty) = contact_fixture();
        let base = SolverConfig { r_tol_abs: 1e-10, r_tol_rel: 1e-12, v_tol: 1e-14, ..Default::default() };
        let input = StepInput { state: &s, previous: None, h: 0.01, pairs: &pairs, penalty };
        let run = |kind| {
            let cfg = IntegratorConfig { solver: SolverConfig { kind, ..base }, ..Default::default() };
            step(&model, input, &cfg).unwrap().state.v
        };
        let d = run(LinearSolverKind::Direct);
        let it = run(LinearSolverKind::Iterative);
        for (a, b) in d.iter().zip(&it) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn prescribed_vertices_follow_their_velocity() {
        let (mut model, s, pairs, penalty) = contact_fixture();
        model.fixed.push(crate::forces::Dirichlet { vertex: 2, velocity: [0.1, -0.2, 0.0] });
        let input = StepInput { state: &s, previous: None, h: 0.01, pairs: &pairs, penalty };
        let out = step(&model, input, &IntegratorConfig::default()).unwrap().state;
        assert_eq!(out.velocity(2), [0.1, -0.2, 0.0]);
    }
}
