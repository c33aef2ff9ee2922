//! Hollow elastic ball scenes: a ball thrown around a closed box, and a ball
//! dropped on the floor.

use serde::{Deserialize, Serialize};

use crate::contact::{ImplicitObstacle, ObstacleShape, PenaltyParams};
use crate::forces::PhysicsModel;
use crate::friction::FrictionParams;
use crate::integrators::{IntegratorConfig, Scheme};
use crate::mesh::{MaterialParams, SystemState, TetMesh, TetMeshModel};
use crate::sim::{self, SimConfig, Simulation};
use crate::solvers::SolverConfig;
use crate::volume::{VolumeModel, VolumePenaltyParams, VolumeRegion, ATM};

/// A hollow ball, optionally with a gas-filled cavity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallSetup {
    pub outer_radius: f64,
    pub inner_radius: f64,
    pub subdivisions: usize,
    pub layers: usize,
    pub density: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub rayleigh_alpha: f64,
    pub rayleigh_beta: f64,
    /// Cavity compression coefficient in 1/atm; `None` leaves the cavity empty.
    pub cavity_kappa_v: Option<f64>,
    pub mu: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for BallSetup {
    fn default() -> Self {
        BallSetup {
            outer_radius: 0.05,
            inner_radius: 0.04,
            subdivisions: 2,
            layers: 1,
            density: 500.0,
            youngs_modulus: 1e6,
            poisson_ratio: 0.4,
            rayleigh_alpha: 0.0,
            rayleigh_beta: 1e-3,
            cavity_kappa_v: None,
            mu: 0.3,
            epsilon: 1e-3,
            delta: 1e-3,
        }
    }
}

/// Builds the ball centred at `center` with the given obstacles.
pub fn ball_model(setup: &BallSetup, center: [f64; 3], obstacles: Vec<ImplicitObstacle>, gravity: [f64; 3]) -> PhysicsModel {
    let mat = MaterialParams::new(setup.density, setup.youngs_modulus, setup.poisson_ratio)
        .with_damping(setup.rayleigh_alpha, setup.rayleigh_beta);
    let mesh = TetMesh::hollow_sphere(setup.inner_radius, setup.outer_radius, setup.subdivisions, setup.layers)
        .translated(center);
    let m = TetMeshModel::from_single("ball", mesh, mat).expect("valid ball mesh");
    let cavity = m.bodies[0].groups["cavity"].clone();
    let mut model = PhysicsModel::new(m, gravity);
    model.obstacles = obstacles;
    if let Some(kv) = setup.cavity_kappa_v {
        let v0 = crate::volume::enclosed_volume(&cavity, &model.mesh.rest_q());
        let params = VolumePenaltyParams::from_atm(VolumeModel::Quadratic, kv, ATM, v0);
        model = model.with_volume(VolumeRegion::new("cavity", cavity, params).expect("closed cavity"));
    }
    model
}

fn wall(name: &str, point: [f64; 3], normal: [f64; 3], friction: FrictionParams) -> ImplicitObstacle {
    ImplicitObstacle::new(name, ObstacleShape::HalfSpace { point, normal }, friction)
}

fn solver_config(model: &PhysicsModel, h: f64, factor: f64) -> SolverConfig {
    SolverConfig {
        r_tol_abs: sim::residual_tolerance(model, h, factor),
        v_tol: sim::velocity_tolerance(model),
        ..Default::default()
    }
}

/// A ball thrown inside a closed cubic box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallInBoxSetup {
    pub ball: BallSetup,
    /// Half the inner edge length of the box, which is centred at the origin.
    pub half_width: f64,
    pub velocity: [f64; 3],
    /// Initial rigid spin (rad/s) about the ball centre.
    pub spin: [f64; 3],
    pub gravity: f64,
    pub h: f64,
    pub steps: usize,
    pub tolerance_factor: f64,
}

impl Default for BallInBoxSetup {
    fn default() -> Self {
        BallInBoxSetup {
            ball: BallSetup {
                subdivisions: 1,
                layers: 2,
                youngs_modulus: 5e4,
                poisson_ratio: 0.45,
                rayleigh_alpha: 0.0,
                rayleigh_beta: 2e-3,
                mu: 0.1,
                delta: 5e-3,
                ..Default::default()
            },
            half_width: 0.1,
            velocity: [-0.923, -0.385, 0.0],
            spin: [0.0, 0.0, 20.0],
            gravity: 9.8,
            h: 0.01,
            steps: 200,
            tolerance_factor: 1e-6,
        }
    }
}

/// Energy history of one ball-in-box run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallInBoxOutcome {
    #[serde(with = "crate::serde_str")]
    pub scheme: Scheme,
    /// Total mechanical energy after each completed step, starting with the initial state.
    pub energies: Vec<f64>,
    pub max_kappa_retries: usize,
    pub error: Option<String>,
}

impl BallInBoxOutcome {
    pub fn initial_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn peak_energy(&self) -> f64 {
        self.energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Whether the run stopped early or produced non-finite energies.
    pub fn diverged(&self) -> bool {
        self.error.is_some() || self.energies.iter().any(|e| !e.is_finite())
    }
}

/// Builds the box scene; gravity potential is measured from the floor.
pub fn ball_in_box_scene(setup: &BallInBoxSetup) -> (PhysicsModel, SystemState) {
    let w = setup.half_width;
    let f = FrictionParams::coulomb(setup.ball.mu, setup.ball.epsilon);
    let walls = vec![
        wall("floor", [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], f),
        wall("ceiling", [0.0, 2.0 * w, 0.0], [0.0, -1.0, 0.0], f),
        wall("left", [-w, 0.0, 0.0], [1.0, 0.0, 0.0], f),
        wall("right", [w, 0.0, 0.0], [-1.0, 0.0, 0.0], f),
        wall("back", [0.0, 0.0, -w], [0.0, 0.0, 1.0], f),
        wall("front", [0.0, 0.0, w], [0.0, 0.0, -1.0], f),
    ];
    let model = ball_model(&setup.ball, [0.0, w, 0.0], walls, [0.0, -setup.gravity, 0.0]);
    let mut state = SystemState::at_rest(&model.mesh);
    let c = [0.0, w, 0.0];
    for i in 0..model.mesh.num_vertices() {
        let r = crate::linalg::sub(state.position(i), c);
        let v = crate::linalg::add(setup.velocity, crate::linalg::cross(setup.spin, r));
        state.v[3 * i..3 * i + 3].copy_from_slice(&v);
    }
    (model, state)
}

/// Runs `setup.steps` steps of `scheme` with fully implicit friction.
pub fn run_ball_in_box(setup: &BallInBoxSetup, scheme: Scheme) -> BallInBoxOutcome {
    let (model, state) = ball_in_box_scene(setup);
    let delta = setup.ball.delta;
    let solver = solver_config(&model, setup.h, setup.tolerance_factor);
    let penalty = PenaltyParams { delta, kappa: sim::initial_kappa(&model, delta), kappa_max: 1e16 };
    let integrator = IntegratorConfig { scheme, solver, ..Default::default() };
    let mut cfg = SimConfig::new(setup.h, setup.h * setup.steps as f64, integrator, penalty);
    cfg.max_kappa_retries = 20;
    let mut out = BallInBoxOutcome { scheme, energies: Vec::new(), max_kappa_retries: 0, error: None };
    let mut sim = match Simulation::new(model, state, cfg) {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let energy = |sim: &Simulation| sim.sample().map(|s| s.total_energy());
    match energy(&sim) {
        Ok(e) => out.energies.push(e),
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    }
    for _ in 0..setup.steps {
        let step = sim.step().map_err(|e| e.to_string()).and_then(|info| {
            out.max_kappa_retries = out.max_kappa_retries.max(info.kappa_retries);
            energy(&sim).map_err(|e| e.to_string())
        });
        match step {
            Ok(e) => {
                out.energies.push(e);
                if !e.is_finite() {
                    break;
                }
            }
            Err(e) => {
                out.error = Some(e);
                break;
            }
        }
    }
    out
}

/// A gas-filled ball dropped on the floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BounceSetup {
    pub ball: BallSetup,
    /// Initial height of the lowest ball point above the floor (m).
    pub drop_height: f64,
    pub gravity: f64,
    pub h: f64,
    pub duration: f64,
    pub tolerance_factor: f64,
}

impl Default for BounceSetup {
    fn default() -> Self {
        BounceSetup {
            // No Rayleigh damping, so the only dissipation is the integrator's.
            ball: BallSetup { cavity_kappa_v: Some(1.0), rayleigh_beta: 0.0, ..Default::default() },
            drop_height: 0.5,
            gravity: 9.8,
            h: 0.005,
            duration: 1.0,
            tolerance_factor: 1e-6,
        }
    }
}

/// Apex of the first bounce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BounceOutcome {
    #[serde(with = "crate::serde_str")]
    pub scheme: Scheme,
    /// Highest centroid height after the first floor contact, above the centroid height at touchdown.
    pub bounce_height: Option<f64>,
    pub drop_height: f64,
    pub max_kappa_retries: usize,
    pub error: Option<String>,
}

/// Drops the ball and records the first bounce apex.
pub fn run_bounce(setup: &BounceSetup, scheme: Scheme) -> BounceOutcome {
    let b = &setup.ball;
    let floor = wall("floor", [0.0; 3], [0.0, 1.0, 0.0], FrictionParams::coulomb(b.mu, b.epsilon));
    let center = [0.0, b.outer_radius + setup.drop_height, 0.0];
    let model = ball_model(b, center, vec![floor], [0.0, -setup.gravity, 0.0]);
    let state = SystemState::at_rest(&model.mesh);
    let solver = solver_config(&model, setup.h, setup.tolerance_factor);
    let penalty = PenaltyParams { delta: b.delta, kappa: sim::initial_kappa(&model, b.delta), kappa_max: 1e16 };
    let integrator = IntegratorConfig { scheme, solver, ..Default::default() };
    let cfg = SimConfig::new(setup.h, setup.duration, integrator, penalty);
    let mut out =
        BounceOutcome { scheme, bounce_height: None, drop_height: setup.drop_height, max_kappa_retries: 0, error: None };
    let mut sim = match Simulation::new(model, state, cfg) {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let mut touchdown: Option<f64> = None;
    let mut apex = f64::NEG_INFINITY;
    for _ in 0..cfg.num_steps() {
        match sim.step() {
            Ok(info) => out.max_kappa_retries = out.max_kappa_retries.max(info.kappa_retries),
            Err(e) => {
                out.error = Some(e.to_string());
                return out;
            }
        }
        let y = sim.model.centroid(&sim.state.q, None)[1];
        let vy: f64 = sim.state.v.iter().skip(1).step_by(3).sum::<f64>() / sim.model.mesh.num_vertices() as f64;
        match touchdown {
            None => {
                if sim.model.deepest_gap(&sim.state.q, sim.state.t).is_some_and(|(d, _)| d < b.delta) {
                    touchdown = Some(y);
                }
            }
            Some(_) => {
                apex = apex.max(y);
                // Past the apex once the ball falls again.
                if vy < 0.0 && apex > y + 1e-9 && sim.model.deepest_gap(&sim.state.q, sim.state.t).is_some_and(|(d, _)| d > b.delta) {
                    break;
                }
            }
        }
    }
    out.bounce_height = touchdown.map(|y0| (apex - y0).max(0.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thrown_ball_starts_clear_of_the_walls() {
        let setup = BallInBoxSetup::default();
        let (model, state) = ball_in_box_scene(&setup);
        let (gap, _) = model.deepest_gap(&state.q, 0.0).unwrap();
        assert!(gap > setup.ball.delta, "{gap}");
        let m = model.mass();
        let total: f64 = m.iter().step_by(3).sum();
        for k in 0..3 {
            let p: f64 = (0..model.mesh.num_vertices()).map(|i| m[3 * i + k] * state.v[3 * i + k]).sum();
            let c = model.centroid(&state.q, None);
            let spin = crate::linalg::cross(setup.spin, crate::linalg::sub(c, [0.0, setup.half_width, 0.0]));
            assert!((p / total - setup.velocity[k] - spin[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn pressurized_cavity_is_at_rest_in_its_rest_shape() {
        let setup = BallSetup { cavity_kappa_v: Some(1.0), subdivisions: 1, ..Default::default() };
        let model = ball_model(&setup, [0.0; 3], Vec::new(), [0.0; 3]);
        let state = SystemState::at_rest(&model.mesh);
        let e = model.energies(&state.q, &state.v, 0.0, &PenaltyParams { delta: 1e-3, kappa: 1.0, kappa_max: 1e16 }).unwrap();
        assert_eq!(model.volumes.len(), 1);
        assert!(e.volume.abs() < 1e-12 && e.elastic.abs() < 1e-12, "{e:?}");
    }

    #[test]
    fn backward_euler_dissipates_a_thrown_ball() {
        // Without spin the motion stays near the convex part of the elastic
        // energy, where backward Euler cannot gain energy.
        let setup = BallInBoxSetup { steps: 5, spin: [0.0; 3], ..Default::default() };
        let out = run_ball_in_box(&setup, Scheme::BackwardEuler);
        assert!(!out.diverged(), "{:?}", out.error);
        assert_eq!(out.energies.len(), 6);
        assert!(out.peak_energy() <= out.initial_energy() * (1.0 + 1e-9), "{:?}", out.energies);
    }
}
