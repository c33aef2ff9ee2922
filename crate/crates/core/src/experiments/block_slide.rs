//! Sliding block on an incline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{ImplicitObstacle, ObstacleShape, PenaltyParams};
use crate::forces::PhysicsModel;
use crate::friction::{FrictionMode, FrictionParams};
use crate::integrators::{IntegratorConfig, Scheme};
use crate::mesh::{MaterialParams, SystemState, TetMesh, TetMeshModel};
use crate::sim::{self, SimConfig, Simulation};
use crate::solvers::{LinearSolverKind, SolverConfig};

/// Reference stopping distance for the block slide (m).
pub const BLOCK_SLIDE_DISTANCE: f64 = 0.769;
/// Reference stopping time for the block slide (s).
pub const BLOCK_SLIDE_TIME: f64 = 15.38;

/// Closed-form kinematics of a rigid block decelerating on an incline:
/// returns `(deceleration, v0, distance, time)` for friction `mu`, slope
/// `theta` (rad) and gravity `g`, where `v0 = 2 x_T / T` reproduces the
/// reference stopping time.
pub fn block_slide_analytic(mu: f64, theta: f64, g: f64) -> (f64, f64, f64, f64) {
    let a = g * (mu * theta.cos() - theta.sin());
    let v0 = 2.0 * BLOCK_SLIDE_DISTANCE / BLOCK_SLIDE_TIME;
    (a, v0, v0 * v0 / (2.0 * a), v0 / a)
}

/// Parameters of the sliding-block scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSlideSetup {
    pub mu: f64,
    pub incline_degrees: f64,
    pub gravity: f64,
    pub v0: f64,
    pub size: f64,
    pub cells: usize,
    pub density: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub rayleigh_beta: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Sliding speed must stay below ε this long to count as stopped (s).
    pub stop_window: f64,
    /// Give up after this much simulated time (s).
    pub max_time: f64,
    /// Residual tolerance as a multiple of `h ‖M g‖∞`.
    pub tolerance_factor: f64,
}

impl Default for BlockSlideSetup {
    fn default() -> Self {
        BlockSlideSetup {
            mu: 0.177,
            incline_degrees: 10.0,
            gravity: 9.8,
            v0: 2.0 * BLOCK_SLIDE_DISTANCE / BLOCK_SLIDE_TIME,
            size: 0.1,
            cells: 2,
            density: 1000.0,
            youngs_modulus: 1e7,
            poisson_ratio: 0.4,
            rayleigh_beta: 1e-3,
            epsilon: 1e-3,
            delta: 1e-3,
            stop_window: 1.0,
            max_time: 40.0,
            tolerance_factor: 1e-7,
        }
    }
}

/// One cell of the block-slide variant matrix.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSlideVariant {
    #[serde(with = "crate::serde_str")]
    pub scheme: Scheme,
    #[serde(with = "crate::serde_str")]
    pub friction: FrictionMode,
    pub h: f64,
}

impl BlockSlideVariant {
    /// `{be, tr} × {implicit, lagged:1, lagged:4} × {0.1, 0.05, 0.01, 0.005}`.
    pub fn matrix() -> Vec<BlockSlideVariant> {
        let mut out = Vec::new();
        for scheme in [Scheme::BackwardEuler, Scheme::Trapezoidal] {
            for friction in
                [FrictionMode::Implicit, FrictionMode::Lagged { iterations: 1 }, FrictionMode::Lagged { iterations: 4 }]
            {
                for h in [0.1, 0.05, 0.01, 0.005] {
                    out.push(BlockSlideVariant { scheme, friction, h });
                }
            }
        }
        out
    }
}

/// Result of one block-slide run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSlideOutcome {
    pub variant: BlockSlideVariant,
    /// Time at which the sliding speed last dropped below ε before staying there.
    pub stop_time: Option<f64>,
    /// Downhill centroid displacement at `stop_time`.
    pub stop_distance: Option<f64>,
    pub final_time: f64,
    pub final_distance: f64,
    pub steps: usize,
    pub newton_iterations: usize,
    pub max_kappa_retries: usize,
    pub error: Option<String>,
}

impl BlockSlideOutcome {
    pub fn distance_error(&self) -> Option<f64> {
        self.stop_distance.map(|d| (d - BLOCK_SLIDE_DISTANCE) / BLOCK_SLIDE_DISTANCE)
    }

    pub fn time_error(&self) -> Option<f64> {
        self.stop_time.map(|t| (t - BLOCK_SLIDE_TIME) / BLOCK_SLIDE_TIME)
    }
}

/// Builds the block on a horizontal plane with gravity tilted by the incline
/// angle, so that downhill is `+x`.
pub fn block_slide_scene(setup: &BlockSlideSetup) -> (PhysicsModel, SystemState) {
    let theta = setup.incline_degrees.to_radians();
    let mat = MaterialParams::new(setup.density, setup.youngs_modulus, setup.poisson_ratio)
        .with_damping(0.0, setup.rayleigh_beta);
    let n = setup.cells;
    let mesh = TetMesh::box_grid([setup.size; 3], [n, n, n]).translated([0.0, 0.5 * setup.delta, 0.0]);
    let m = TetMeshModel::from_single("block", mesh, mat).expect("valid block mesh");
    let g = [setup.gravity * theta.sin(), -setup.gravity * theta.cos(), 0.0];
    let friction = FrictionParams::coulomb(setup.mu, setup.epsilon);
    let model = PhysicsModel::new(m, g).with_obstacle(ImplicitObstacle::new(
        "incline",
        ObstacleShape::HalfSpace { point: [0.0; 3], normal: [0.0, 1.0, 0.0] },
        friction,
    ));
    let mut state = SystemState::at_rest(&model.mesh);
    for i in 0..model.mesh.num_vertices() {
        state.v[3 * i] = setup.v0;
    }
    (model, state)
}

/// Rests the block on the plane under the normal component of gravity alone,
/// then gives every vertex the downhill velocity `v0`. Returns the settled
/// state and the contact stiffness reached while settling.
pub fn settled_block(setup: &BlockSlideSetup) -> Result<(PhysicsModel, SystemState, f64), sim::SimError> {
    let (model, state) = block_slide_scene(setup);
    let g = model.gravity;
    let mut normal_only = model.clone();
    normal_only.gravity = [0.0, g[1], 0.0];
    let h = 0.01;
    let variant = BlockSlideVariant { scheme: Scheme::BackwardEuler, friction: FrictionMode::Implicit, h };
    let mut cfg = block_sim_config(setup, &normal_only, &variant);
    cfg.duration = 1.0;
    let mut rest = state.clone();
    rest.v.iter_mut().for_each(|v| *v = 0.0);
    let mut settle = Simulation::new(normal_only, rest, cfg)?;
    settle.run(|_| {}, |_, _| {})?;
    let mut out = settle.state.clone();
    out.t = 0.0;
    for i in 0..model.mesh.num_vertices() {
        out.v[3 * i] = setup.v0;
        out.v[3 * i + 1] = 0.0;
        out.v[3 * i + 2] = 0.0;
    }
    Ok((model, out, settle.penalty.kappa))
}

fn block_sim_config(setup: &BlockSlideSetup, model: &PhysicsModel, variant: &BlockSlideVariant) -> SimConfig {
    let solver = SolverConfig {
        kind: LinearSolverKind::Direct,
        r_tol_abs: sim::residual_tolerance(model, variant.h, setup.tolerance_factor),
        v_tol: sim::velocity_tolerance(model),
        ..Default::default()
    };
    let integrator = IntegratorConfig { scheme: variant.scheme, friction: variant.friction, solver, ..Default::default() };
    let penalty = PenaltyParams { delta: setup.delta, kappa: sim::initial_kappa(model, setup.delta), kappa_max: 1e16 };
    SimConfig::new(variant.h, setup.max_time, integrator, penalty)
}

/// Runs one variant until the block has stayed below ε for the stop window,
/// or until `max_time`. Solver failures are reported in the outcome.
pub fn run_block_slide(setup: &BlockSlideSetup, variant: BlockSlideVariant) -> BlockSlideOutcome {
    let mut out = BlockSlideOutcome {
        variant,
        stop_time: None,
        stop_distance: None,
        final_time: 0.0,
        final_distance: 0.0,
        steps: 0,
        newton_iterations: 0,
        max_kappa_retries: 0,
        error: None,
    };
    let (model, state, kappa) = match settled_block(setup) {
        Ok(x) => x,
        Err(e) => {
            out.error = Some(format!("settling failed: {e}"));
            return out;
        }
    };
    let mut cfg = block_sim_config(setup, &model, &variant);
    cfg.penalty.kappa = kappa;
    let x0 = model.centroid(&state.q, None)[0];
    let mut sim = match Simulation::new(model, state, cfg) {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let mut below_since: Option<(f64, f64)> = None;
    let n = cfg.num_steps();
    for _ in 0..n {
        match sim.step() {
            Ok(info) => {
                out.newton_iterations += info.newton_iterations();
                out.max_kappa_retries = out.max_kappa_retries.max(info.kappa_retries);
            }
            Err(e) => {
                out.error = Some(e.to_string());
                break;
            }
        }
        out.steps += 1;
        let s = &sim.state;
        let x = sim.model.centroid(&s.q, None)[0] - x0;
        let speed = sim.model.max_sliding_speed(&s.q, &s.v, s.t, &sim.penalty);
        if speed <= setup.epsilon {
            let (t0, x_at) = *below_since.get_or_insert((s.t, x));
            if s.t - t0 >= setup.stop_window - 1e-9 {
                out.stop_time = Some(t0);
                out.stop_distance = Some(x_at);
                break;
            }
        } else {
            below_since = None;
        }
    }
    out.final_time = sim.state.t;
    out.final_distance = sim.model.centroid(&sim.state.q, None)[0] - x0;
    out
}

/// Runs every variant, in parallel on `threads` workers (all cores when `None`).
pub fn block_slide_matrix(
    setup: &BlockSlideSetup,
    variants: &[BlockSlideVariant],
    threads: Option<usize>,
) -> Vec<BlockSlideOutcome> {
    let run = || variants.par_iter().map(|v| run_block_slide(setup, *v)).collect();
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|pool| pool.install(run))
            .unwrap_or_else(|_| variants.iter().map(|v| run_block_slide(setup, *v)).collect()),
        None => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_oracle() {
        let (a, v0, x, t) = block_slide_analytic(0.177, 10f64.to_radians(), 9.8);
        assert!((a - 0.00647).abs() < 5e-5, "{a}");
        assert!((v0 - 0.1).abs() < 1e-4);
        assert!((x - BLOCK_SLIDE_DISTANCE).abs() < 0.01 * BLOCK_SLIDE_DISTANCE, "{x}");
        assert!((t - BLOCK_SLIDE_TIME).abs() < 0.01 * BLOCK_SLIDE_TIME, "{t}");
    }

    #[test]
    fn matrix_has_24_variants() {
        assert_eq!(BlockSlideVariant::matrix().len(), 24);
    }

    #[test]
    fn frictionless_block_never_stops() {
        let setup = BlockSlideSetup { mu: 0.0, max_time: 1.0, ..Default::default() };
        let variant = BlockSlideVariant { scheme: Scheme::BackwardEuler, friction: FrictionMode::Implicit, h: 0.05 };
        let out = run_block_slide(&setup, variant);
        assert!(out.error.is_none(), "{:?}", out.error);
        assert!(out.stop_time.is_none());
        assert!(out.final_distance > setup.v0 * 1.0);
    }

    #[test]
    fn stopping_point_does_not_depend_on_block_size() {
        let variant = BlockSlideVariant { scheme: Scheme::BackwardEuler, friction: FrictionMode::Implicit, h: 0.05 };
        let run = |size: f64| {
            let out = run_block_slide(&BlockSlideSetup { size, ..Default::default() }, variant);
            assert!(out.error.is_none(), "{:?}", out.error);
            (out.stop_distance.unwrap(), out.stop_time.unwrap())
        };
        let (x1, t1) = run(0.1);
        let (x2, t2) = run(0.05);
        assert!((x1 - x2).abs() < 0.01 * x1, "{x1} vs {x2}");
        assert!((t1 - t2).abs() < 0.01 * t1, "{t1} vs {t2}");
    }
}
