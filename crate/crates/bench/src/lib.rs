//! Fixtures shared by the benchmarks.

use fricsim::experiments::{ball_in_box_scene, BallInBoxSetup};
use fricsim::forces::{ForceContext, ForceSelection, FrictionSource};
use fricsim::sim::{initial_kappa, residual_tolerance, velocity_tolerance, SimConfig};
use fricsim::{IntegratorConfig, PenaltyParams, PhysicsModel, Scheme, Simulation, SolverConfig, SystemState};

/// A thrown, spinning hollow ball inside a box, advanced until it touches a wall.
pub struct BallFixture {
    pub model: PhysicsModel,
    pub state: SystemState,
    pub penalty: PenaltyParams,
    pub pairs: Vec<fricsim::contact::ContactPair>,
    pub h: f64,
}

impl BallFixture {
    pub fn new() -> Self {
        let setup = BallInBoxSetup::default();
        let (model, state) = ball_in_box_scene(&setup);
        let delta = setup.ball.delta;
        let penalty = PenaltyParams { delta, kappa: initial_kappa(&model, delta), kappa_max: 1e16 };
        let mut sim = Simulation::new(model, state, sim_config(&setup, penalty)).expect("valid fixture");
        // Step until some vertex is inside the penalty layer.
        while sim.model.deepest_gap(&sim.state.q, sim.state.t).is_none_or(|(d, _)| d >= delta) {
            sim.step().expect("fixture step");
        }
        let pairs = sim.model.candidate_pairs(&[(&sim.state.q, sim.state.t)], 1.5 * delta);
        BallFixture { model: sim.model, state: sim.state, penalty: sim.penalty, pairs, h: setup.h }
    }

    pub fn context(&self) -> ForceContext<'_> {
        ForceContext {
            pairs: &self.pairs,
            penalty: self.penalty,
            time: self.state.t,
            friction: FrictionSource::Current,
            select: ForceSelection::ALL,
        }
    }

    /// Backward Euler settings for this fixture with the given solver.
    pub fn integrator(&self, kind: fricsim::LinearSolverKind) -> IntegratorConfig {
        let solver = SolverConfig {
            kind,
            r_tol_abs: residual_tolerance(&self.model, self.h, 1e-6),
            v_tol: velocity_tolerance(&self.model),
            ..Default::default()
        };
        IntegratorConfig { scheme: Scheme::BackwardEuler, solver, ..Default::default() }
    }
}

impl Default for BallFixture {
    fn default() -> Self {
        Self::new()
    }
}

fn sim_config(setup: &BallInBoxSetup, penalty: PenaltyParams) -> SimConfig {
    let integrator = IntegratorConfig { scheme: Scheme::Trapezoidal, ..Default::default() };
    SimConfig::new(setup.h, setup.h * setup.steps as f64, integrator, penalty)
}
