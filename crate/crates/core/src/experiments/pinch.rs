//! Block held between two pressing plates under gravity.

use serde::{Deserialize, Serialize};

use crate::contact::{self, ImplicitObstacle, Keyframe, ObstacleShape, PenaltyParams, RigidMotion};
use crate::forces::PhysicsModel;
use crate::friction::{FrictionMode, FrictionParams};
use crate::integrators::{IntegratorConfig, Scheme};
use crate::mesh::{MaterialParams, SystemState, TetMesh, TetMeshModel};
use crate::sim::{self, SimConfig, Simulation};
use crate::solvers::SolverConfig;

/// Parameters of the pinch scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinchSetup {
    pub size: f64,
    pub cells: usize,
    pub density: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub rayleigh_beta: f64,
    /// Spherical pads of this radius instead of flat plates.
    pub pad_radius: Option<f64>,
    /// Plate travel past first touch, per side (m).
    pub squeeze: f64,
    pub squeeze_time: f64,
    /// Gravity-free rest after the squeeze (s).
    pub settle_time: f64,
    /// Friction coefficient as a multiple of the coefficient that just carries the weight.
    pub support_factor: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub gravity: f64,
    /// Held duration under gravity (s).
    pub duration: f64,
    /// The plates start moving up at `lift_start` with speed `lift_speed`.
    pub lift_start: f64,
    pub lift_speed: f64,
    /// Time to reach `lift_speed` (s).
    pub lift_ramp: f64,
    /// A run stops early once the drop exceeds this (m): the block has been lost.
    pub abort_drop: f64,
    /// Residual tolerance as a multiple of `h ‖M g‖∞`.
    pub tolerance_factor: f64,
}

impl Default for PinchSetup {
    fn default() -> Self {
        PinchSetup {
            size: 0.05,
            cells: 4,
            density: 1000.0,
            youngs_modulus: 1e5,
            poisson_ratio: 0.3,
            rayleigh_beta: 0.01,
            pad_radius: Some(0.02),
            squeeze: 1e-3,
            squeeze_time: 0.2,
            settle_time: 0.3,
            support_factor: 1.2,
            epsilon: 1e-4,
            delta: 5e-4,
            gravity: 9.8,
            duration: 2.0,
            lift_start: 0.2,
            lift_speed: 0.2,
            lift_ramp: 0.2,
            abort_drop: 0.05,
            tolerance_factor: 1e-6,
        }
    }
}

/// The pressed block, ready to be released under gravity.
#[derive(Clone, Debug)]
pub struct PinchedBlock {
    pub model: PhysicsModel,
    pub state: SystemState,
    pub kappa: f64,
    /// Mean normal force per plate after the squeeze (N).
    pub normal_force: f64,
    /// Friction coefficient at which two plates exactly carry the weight.
    pub threshold_mu: f64,
}

/// Result of one held run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinchOutcome {
    pub h: f64,
    #[serde(with = "crate::serde_str")]
    pub friction: FrictionMode,
    pub mu: f64,
    pub threshold_mu: f64,
    /// Centroid drop relative to the pads at the end of the run, or when it
    /// first exceeded `abort_drop` (m); `None` when the run failed.
    pub drop: Option<f64>,
    pub max_drop: f64,
    pub steps: usize,
    pub error: Option<String>,
}

/// A pad whose contact surface passes through `(x, 0, 0)` with outward normal `(normal, 0, 0)`.
fn plate(setup: &PinchSetup, name: &str, x: f64, normal: f64, friction: FrictionParams) -> ImplicitObstacle {
    let shape = match setup.pad_radius {
        None => ObstacleShape::HalfSpace { point: [x, 0.0, 0.0], normal: [normal, 0.0, 0.0] },
        Some(r) => ObstacleShape::Sphere { center: [x - normal * r, 0.0, 0.0], radius: r, inside: false },
    };
    ImplicitObstacle::new(name, shape, friction)
}

fn config(setup: &PinchSetup, model: &PhysicsModel, h: f64, duration: f64, friction: FrictionMode, kappa: f64) -> SimConfig {
    let solver = SolverConfig {
        r_tol_abs: sim::residual_tolerance(model, h, setup.tolerance_factor),
        v_tol: sim::velocity_tolerance(model),
        ..Default::default()
    };
    let integrator = IntegratorConfig { scheme: Scheme::BackwardEuler, friction, solver, ..Default::default() };
    SimConfig::new(h, duration, integrator, PenaltyParams { delta: setup.delta, kappa, kappa_max: 1e16 })
}

/// Squeezes the block without gravity, lets it rest, and measures the pad
/// normal force. The returned model has gravity along `−y`, friction set
/// from `support_factor`, and pads that start lifting at `lift_start`.
pub fn pinched_block(setup: &PinchSetup) -> Result<PinchedBlock, sim::SimError> {
    let s = setup.size;
    let n = setup.cells;
    let mat = MaterialParams::new(setup.density, setup.youngs_modulus, setup.poisson_ratio)
        .with_damping(0.0, setup.rayleigh_beta);
    let mesh = TetMesh::box_grid([s; 3], [n; 3]).translated([-0.5 * s; 3]);
    let m = TetMeshModel::from_single("block", mesh, mat).map_err(|e| sim::SimError::Config(e.to_string()))?;
    let x0 = 0.5 * s + setup.delta;
    let travel = setup.delta + setup.squeeze;
    let path = |dir: f64| {
        RigidMotion::Keyframes(vec![
            Keyframe { time: 0.0, translation: [0.0; 3] },
            Keyframe { time: setup.squeeze_time, translation: [dir * travel, 0.0, 0.0] },
        ])
    };
    let grip = FrictionParams::coulomb(1.0, setup.epsilon);
    let squeeze = PhysicsModel::new(m.clone(), [0.0; 3])
        .with_obstacle(plate(setup, "left", -x0, 1.0, grip).with_motion(path(1.0)))
        .with_obstacle(plate(setup, "right", x0, -1.0, grip).with_motion(path(-1.0)));
    let h = 0.005;
    let kappa0 = sim::initial_kappa(&squeeze, setup.delta);
    let cfg = config(setup, &squeeze, h, setup.squeeze_time + setup.settle_time, FrictionMode::Implicit, kappa0);
    let mut sim = Simulation::new(squeeze, SystemState::at_rest(&m), cfg)?;
    sim.run(|_| {}, |_, _| {})?;

    let penalty = sim.penalty;
    let t = sim.state.t;
    let pairs = sim.model.candidate_pairs(&[(&sim.state.q, t)], setup.delta);
    let set = contact::gaps(&sim.model.obstacles, &pairs, &sim.state.q, t, &penalty);
    let total: f64 = set.contacts.iter().map(|c| c.lambda * c.normal[0].abs()).sum();
    let normal_force = 0.5 * total;
    let weight = m.total_mass() * setup.gravity;
    let threshold_mu = weight / (2.0 * normal_force);
    let mu = setup.support_factor * threshold_mu;
    let friction = FrictionParams::coulomb(mu, setup.epsilon);
    let x1 = x0 - travel;
    let end = setup.duration.max(setup.lift_start + setup.lift_ramp) + 1.0;
    let mut frames = vec![Keyframe { time: 0.0, translation: [0.0; 3] }];
    let ramp_frames = 32;
    for k in 0..=ramp_frames {
        let t = setup.lift_start + setup.lift_ramp * k as f64 / ramp_frames as f64;
        frames.push(Keyframe { time: t, translation: [0.0, plate_lift(setup, t), 0.0] });
    }
    frames.push(Keyframe { time: end, translation: [0.0, plate_lift(setup, end), 0.0] });
    frames.dedup_by(|a, b| a.time <= b.time);
    let lift = RigidMotion::Keyframes(frames);
    let model = PhysicsModel::new(m, [0.0, -setup.gravity, 0.0])
        .with_obstacle(plate(setup, "left", -x1, 1.0, friction).with_motion(lift.clone()))
        .with_obstacle(plate(setup, "right", x1, -1.0, friction).with_motion(lift));
    let mut state = sim.state.clone();
    state.t = 0.0;
    Ok(PinchedBlock { model, state, kappa: penalty.kappa, normal_force, threshold_mu })
}

/// Upward plate displacement at time `t`: constant acceleration over the
/// ramp, then constant speed. Keyframes sample this path, so the plates
/// follow it piecewise linearly.
pub fn plate_lift(setup: &PinchSetup, t: f64) -> f64 {
    let dt = (t - setup.lift_start).max(0.0);
    let ramp = setup.lift_ramp;
    if dt < ramp {
        0.5 * setup.lift_speed * dt * dt / ramp
    } else {
        setup.lift_speed * (dt - 0.5 * ramp)
    }
}

fn lifted(model: &PhysicsModel, t: f64) -> f64 {
    let motion = &model.obstacles[0].motion;
    motion.placement(t).apply([0.0; 3])[1] - motion.placement(0.0).apply([0.0; 3])[1]
}

/// Holds the pinched block for `setup.duration` with backward Euler. The
/// drop is measured relative to the plates.
pub fn run_pinch(setup: &PinchSetup, block: &PinchedBlock, h: f64, friction: FrictionMode) -> PinchOutcome {
    let mu = block.model.obstacles[0].friction.mu_d;
    let mut out = PinchOutcome {
        h,
        friction,
        mu,
        threshold_mu: block.threshold_mu,
        drop: None,
        max_drop: 0.0,
        steps: 0,
        error: None,
    };
    let cfg = config(setup, &block.model, h, setup.duration, friction, block.kappa);
    let y0 = block.model.centroid(&block.state.q, None)[1];
    let mut sim = match Simulation::new(block.model.clone(), block.state.clone(), cfg) {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    for _ in 0..cfg.num_steps() {
        if let Err(e) = sim.step() {
            out.error = Some(e.to_string());
            return out;
        }
        out.steps += 1;
        let drop = y0 + lifted(&sim.model, sim.state.t) - sim.model.centroid(&sim.state.q, None)[1];
        out.max_drop = out.max_drop.max(drop);
        if drop > setup.abort_drop {
            out.drop = Some(drop);
            return out;
        }
    }
    out.drop = Some(y0 + lifted(&sim.model, sim.state.t) - sim.model.centroid(&sim.state.q, None)[1]);
    out
}
