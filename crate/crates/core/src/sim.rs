//! Stepping loop: contact candidate selection, adaptive stiffening retries and
//! trajectory sampling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{self, ContactError, ContactPair, PenaltyParams, StiffenDecision};
use crate::forces::{ForceError, PhysicsModel};
use crate::integrators::{self, IntegratorConfig, StepError, StepInput};
use crate::mesh::SystemState;
use crate::solvers::SolveReport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("step {step} (t = {time}): {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: StepError,
    },
    #[error("step {step} (t = {time}): {source}")]
    Stiffen {
        step: usize,
        time: f64,
        #[source]
        source: ContactError,
    },
    #[error("step {step} (t = {time}): still penetrating after {retries} stiffness increases")]
    TooManyRetries { step: usize, time: f64, retries: usize },
    #[error("step {step} (t = {time}): non-finite state")]
    NonFinite { step: usize, time: f64 },
    #[error("sampling failed: {0}")]
    Sample(#[from] ForceError),
    #[error("invalid simulation settings: {0}")]
    Config(String),
}

impl SimError {
    /// Machine-readable error category.
    pub fn category(&self) -> &'static str {
        match self {
            SimError::Step { source: StepError::Solve { .. }, .. } => "solver",
            SimError::Step { .. } | SimError::Sample(_) => "force",
            SimError::Stiffen { .. } | SimError::TooManyRetries { .. } => "contact",
            SimError::NonFinite { .. } => "non-finite",
            SimError::Config(_) => "config",
        }
    }
}

/// Settings for the stepping loop.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub h: f64,
    pub duration: f64,
    pub integrator: IntegratorConfig,
    pub penalty: PenaltyParams,
    /// Candidate pairs are vertices closer than `candidate_factor · δ`.
    pub candidate_factor: f64,
    pub max_kappa_retries: usize,
    /// Steps between trajectory samples.
    pub sample_every: usize,
    /// Steps between mesh snapshots; `None` disables snapshots.
    pub snapshot_every: Option<usize>,
}

impl SimConfig {
    pub fn new(h: f64, duration: f64, integrator: IntegratorConfig, penalty: PenaltyParams) -> Self {
        SimConfig {
            h,
            duration,
            integrator,
            penalty,
            candidate_factor: 1.5,
            max_kappa_retries: 20,
            sample_every: 1,
            snapshot_every: None,
        }
    }

    pub fn num_steps(&self) -> usize {
        (self.duration / self.h - 1e-9).ceil().max(0.0) as usize
    }
}

/// One trajectory sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub time: f64,
    pub centroid: [f64; 3],
    pub kinetic: f64,
    pub elastic: f64,
    pub penalty: f64,
    pub gravity: f64,
    pub volume_energy: f64,
    /// Smallest gap over all surface vertices and obstacles (∞ without obstacles).
    pub deepest_gap: f64,
    pub sliding_speed: f64,
    pub volumes: Vec<f64>,
    pub kappa: f64,
}

impl TrajectorySample {
    pub fn total_energy(&self) -> f64 {
        self.kinetic + self.elastic + self.penalty + self.gravity + self.volume_energy
    }
}

/// Diagnostics of one accepted step.
#[derive(Clone, Debug, Default)]
pub struct StepInfo {
    pub kappa_retries: usize,
    pub augmentations: usize,
    pub contacts: usize,
    pub reports: Vec<SolveReport>,
}

impl StepInfo {
    pub fn newton_iterations(&self) -> usize {
        self.reports.iter().map(|r| r.iterations).sum()
    }
}

/// Summary statistics of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub final_time: f64,
    pub max_kappa_retries: usize,
    pub total_kappa_retries: usize,
    pub newton_iterations: usize,
    pub min_accepted_gap: f64,
    pub final_kappa: f64,
}

/// A model plus its evolving state.
pub struct Simulation {
    pub model: PhysicsModel,
    pub cfg: SimConfig,
    pub state: SystemState,
    pub previous: Option<SystemState>,
    pub penalty: PenaltyParams,
    pub steps_taken: usize,
}

impl Simulation {
    pub fn new(model: PhysicsModel, state: SystemState, cfg: SimConfig) -> Result<Self, SimError> {
        if !(cfg.h > 0.0 && cfg.duration >= 0.0) {
            return Err(SimError::Config(format!("need h > 0 and duration >= 0 (h = {}, duration = {})", cfg.h, cfg.duration)));
        }
        if state.q.len() != model.n_dofs() || state.v.len() != model.n_dofs() {
            return Err(SimError::Config("state length does not match the mesh".into()));
        }
        cfg.penalty.validate().map_err(|e| SimError::Config(e.to_string()))?;
        cfg.integrator.solver.validate().map_err(SimError::Config)?;
        Ok(Simulation { penalty: cfg.penalty, model, cfg, state, previous: None, steps_taken: 0 })
    }

    fn pairs_for(&self, extra: &[ContactPair]) -> Vec<ContactPair> {
        let s = &self.state;
        let h = self.cfg.h;
        let predicted: Vec<f64> = s.q.iter().zip(&s.v).map(|(q, v)| q + h * v).collect();
        let threshold = self.cfg.candidate_factor * self.penalty.delta;
        let mut pairs = self.model.candidate_pairs(&[(&s.q, s.t), (&predicted, s.t + h)], threshold);
        pairs.extend_from_slice(extra);
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Takes one step, re-solving with a stiffer penalty or an enlarged
    /// contact set until every end-of-step gap is positive.
    pub fn step(&mut self) -> Result<StepInfo, SimError> {
        let step = self.steps_taken;
        let time = self.state.t;
        let mut info = StepInfo::default();
        let mut extra: Vec<ContactPair> = Vec::new();
        loop {
            let pairs = self.pairs_for(&extra);
            let input = StepInput {
                state: &self.state,
                previous: self.previous.as_ref(),
                h: self.cfg.h,
                pairs: &pairs,
                penalty: self.penalty,
            };
            let out = integrators::step(&self.model, input, &self.cfg.integrator)
                .map_err(|source| SimError::Step { step, time, source })?;
            info.reports.extend(out.reports);
            if !out.state.is_finite() {
                return Err(SimError::NonFinite { step, time });
            }
            let Some((deepest, pair)) = self.model.deepest_gap(&out.state.q, out.state.t) else {
                info.contacts = 0;
                self.accept(out.state);
                return Ok(info);
            };
            // A vertex outside the frozen set came within the penalty support: track it and redo the step.
            let missed: Vec<ContactPair> = self
                .model
                .candidate_pairs(&[(&out.state.q, out.state.t)], self.penalty.delta)
                .into_iter()
                .filter(|p| pairs.binary_search(p).is_err())
                .collect();
            if !missed.is_empty() {
                info.augmentations += 1;
                extra.extend(missed);
                continue;
            }
            match contact::adaptive_stiffen(deepest, &self.penalty)
                .map_err(|source| SimError::Stiffen { step, time, source })?
            {
                StiffenDecision::Accept => {
                    info.contacts = pairs.len();
                    self.accept(out.state);
                    return Ok(info);
                }
                StiffenDecision::Retry { kappa } => {
                    log::debug!("step {step}: gap {deepest:e} at vertex {}, kappa -> {kappa:e}", pair.vertex);
                    info.kappa_retries += 1;
                    if info.kappa_retries > self.cfg.max_kappa_retries {
                        return Err(SimError::TooManyRetries { step, time, retries: info.kappa_retries - 1 });
                    }
                    self.penalty.kappa = kappa;
                }
            }
        }
    }

    fn accept(&mut self, next: SystemState) {
        self.previous = Some(std::mem::replace(&mut self.state, next));
        self.steps_taken += 1;
    }

    pub fn sample(&self) -> Result<TrajectorySample, SimError> {
        let s = &self.state;
        let e = self.model.energies(&s.q, &s.v, s.t, &self.penalty)?;
        Ok(TrajectorySample {
            time: s.t,
            centroid: self.model.centroid(&s.q, None),
            kinetic: e.kinetic,
            elastic: e.elastic,
            penalty: e.penalty,
            gravity: e.gravity,
            volume_energy: e.volume,
            deepest_gap: self.model.deepest_gap(&s.q, s.t).map_or(f64::INFINITY, |(d, _)| d),
            sliding_speed: self.model.max_sliding_speed(&s.q, &s.v, s.t, &self.penalty),
            volumes: self.model.volumes.iter().map(|r| r.volume(&s.q)).collect(),
            kappa: self.penalty.kappa,
        })
    }

    /// Runs to `cfg.duration`, calling `on_sample` at the configured rate
    /// (including the initial state) and `on_snapshot` with the frame index.
    pub fn run(
        &mut self,
        mut on_sample: impl FnMut(&TrajectorySample),
        mut on_snapshot: impl FnMut(usize, &SystemState),
    ) -> Result<RunSummary, SimError> {
        let n = self.cfg.num_steps();
        let mut summary = RunSummary { min_accepted_gap: f64::INFINITY, ..Default::default() };
        on_sample(&self.sample()?);
        let mut frame = 0;
        if self.cfg.snapshot_every.is_some() {
            on_snapshot(frame, &self.state);
            frame += 1;
        }
        for k in 1..=n {
            let info = self.step()?;
            summary.max_kappa_retries = summary.max_kappa_retries.max(info.kappa_retries);
            summary.total_kappa_retries += info.kappa_retries;
            summary.newton_iterations += info.newton_iterations();
            if let Some((d, _)) = self.model.deepest_gap(&self.state.q, self.state.t) {
                summary.min_accepted_gap = summary.min_accepted_gap.min(d);
            }
            if k % self.cfg.sample_every.max(1) == 0 || k == n {
                on_sample(&self.sample()?);
            }
            if let Some(every) = self.cfg.snapshot_every {
                if k % every.max(1) == 0 {
                    on_snapshot(frame, &self.state);
                    frame += 1;
                }
            }
        }
        summary.steps = n;
        summary.final_time = self.state.t;
        summary.final_kappa = self.penalty.kappa;
        Ok(summary)
    }
}

/// Initial contact stiffness: λ at `0.5δ` balances the weight of an average
/// vertex.
pub fn initial_kappa(model: &PhysicsModel, delta: f64) -> f64 {
    let n = model.mesh.num_vertices().max(1);
    let m_avg = model.mesh.total_mass() / n as f64;
    let g = crate::linalg::norm(model.gravity);
    let g = if g > 0.0 { g } else { 9.8 };
    PenaltyParams::balancing_kappa(delta, m_avg * g)
}

/// Absolute residual tolerance `factor · h · ‖M g‖∞` (with `|g| = 9.8` when gravity is off).
pub fn residual_tolerance(model: &PhysicsModel, h: f64, factor: f64) -> f64 {
    let g = if crate::linalg::norm(model.gravity) > 0.0 { model.gravity } else { [0.0, -9.8, 0.0] };
    let mg = model.mass().iter().enumerate().map(|(i, m)| (m * g[i % 3]).abs()).fold(0.0, f64::max);
    let mg = if mg > 0.0 { mg } else { model.mass().iter().cloned().fold(0.0, f64::max) * 9.8 };
    factor * h * mg
}

/// Velocity tolerance `0.1 ε` using the smallest friction ε among obstacles
/// (1e-4 m/s when nothing has friction).
pub fn velocity_tolerance(model: &PhysicsModel) -> f64 {
    model
        .obstacles
        .iter()
        .filter(|o| !o.friction.is_frictionless())
        .map(|o| 0.1 * o.friction.epsilon)
        .fold(None, |a: Option<f64>, b| Some(a.map_or(b, |a| a.min(b))))
        .unwrap_or(1e-4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{ImplicitObstacle, ObstacleShape};
    use crate::friction::FrictionParams;
    use crate::integrators::Scheme;
    use crate::mesh::{MaterialParams, TetMesh, TetMeshModel};
    use crate::solvers::SolverConfig;

    fn resting_box(height: f64) -> (PhysicsModel, SystemState) {
        let mat = MaterialParams::new(500.0, 2e5, 0.3).with_damping(1.0, 0.002);
        let mesh = TetMesh::box_grid([0.1, 0.1, 0.1], [1, 1, 1]).translated([0.0, height, 0.0]);
        let m = TetMeshModel::from_single("box", mesh, mat).unwrap();
        let model = PhysicsModel::new(m, [0.0, -9.8, 0.0]).with_obstacle(ImplicitObstacle::new(
            "ground",
            ObstacleShape::HalfSpace { point: [0.0; 3], normal: [0.0, 1.0, 0.0] },
            FrictionParams::coulomb(0.5, 1e-3),
        ));
        let s = SystemState::at_rest(&model.mesh);
        (model, s)
    }

    fn config(model: &PhysicsModel, h: f64, duration: f64, delta: f64) -> SimConfig {
        let solver = SolverConfig {
            r_tol_abs: residual_tolerance(model, h, 1e-5),
            v_tol: velocity_tolerance(model),
            ..Default::default()
        };
        let penalty = PenaltyParams { delta, kappa: initial_kappa(model, delta), kappa_max: 1e14 };
        SimConfig::new(h, duration, IntegratorConfig { scheme: Scheme::BackwardEuler, solver, ..Default::default() }, penalty)
    }

    #[test]
    fn free_fall_gains_h_g() {
        let mat = MaterialParams::new(1000.0, 1e5, 0.3);
        let m = TetMeshModel::from_single("t", TetMesh::single_tet(0.1), mat).unwrap();
        let model = PhysicsModel::new(m, [0.0, -9.8, 0.0]);
        let s = SystemState::at_rest(&model.mesh);
        let cfg = config(&model, 0.01, 0.01, 1e-3);
        let mut sim = Simulation::new(model, s, cfg).unwrap();
        sim.step().unwrap();
        for (i, v) in sim.state.v.iter().enumerate() {
            let want = if i % 3 == 1 { -0.098 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn box_settles_with_positive_gaps() {
        let delta = 1e-3;
        let (model, s) = resting_box(0.002);
        let cfg = config(&model, 0.01, 1.5, delta);
        let v_tol = cfg.integrator.solver.v_tol;
        let mut sim = Simulation::new(model, s, cfg).unwrap();
        let mut samples = Vec::new();
        let summary = sim.run(|s| samples.push(s.clone()), |_, _| {}).unwrap();
        assert_eq!(summary.steps, 150);
        assert!(summary.min_accepted_gap > 0.0);
        assert!(summary.max_kappa_retries <= 5);
        assert_eq!(samples.len(), 151);
        assert!(samples.windows(2).all(|w| w[1].time > w[0].time));
        let vmax = crate::linalg::norm_inf(&sim.state.v);
        assert!(vmax <= v_tol, "{vmax}");
        // Static balance: contact forces carry the weight.
        let pairs = sim.model.candidate_pairs(&[(&sim.state.q, sim.state.t)], delta);
        let set = contact::gaps(&sim.model.obstacles, &pairs, &sim.state.q, sim.state.t, &sim.penalty);
        let support: f64 = set.contacts.iter().map(|c| c.lambda * c.normal[1]).sum();
        let weight = sim.model.mesh.total_mass() * 9.8;
        assert!((support - weight).abs() < 1e-3 * weight, "{support} vs {weight}");
    }

    #[test]
    fn penetrating_step_triggers_stiffening() {
        let delta = 1e-3;
        let (model, mut s) = resting_box(0.0015);
        s.v.iter_mut().skip(1).step_by(3).for_each(|v| *v = -1.0);
        let mut cfg = config(&model, 0.01, 0.05, delta);
        cfg.penalty.kappa *= 0.01;
        let k0 = cfg.penalty.kappa;
        let mut sim = Simulation::new(model, s, cfg).unwrap();
        let info = sim.step().unwrap();
        assert!(info.kappa_retries >= 1);
        assert!(sim.penalty.kappa > k0);
        assert!(sim.model.deepest_gap(&sim.state.q, sim.state.t).unwrap().0 > 0.0);
    }

    #[test]
    fn frictionless_free_flight_energy_is_non_increasing() {
        let mat = MaterialParams::new(1000.0, 1e4, 0.3);
        let m = TetMeshModel::from_single("t", TetMesh::single_tet(0.1), mat).unwrap();
        let model = PhysicsModel::new(m, [0.0, -9.8, 0.0]);
        let mut s = SystemState::at_rest(&model.mesh);
        s.q.iter_mut().enumerate().for_each(|(i, x)| *x *= 1.0 + 0.1 * ((i % 3) as f64));
        s.v.iter_mut().enumerate().for_each(|(i, v)| *v = 0.3 * (i as f64).sin());
        let cfg = config(&model, 0.005, 0.5, 1e-3);
        let mut sim = Simulation::new(model, s, cfg).unwrap();
        let mut e = Vec::new();
        sim.run(|s| e.push(s.total_energy()), |_, _| {}).unwrap();
        for w in e.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{} > {}", w[1], w[0]);
        }
    }
}
