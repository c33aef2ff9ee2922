//! Empirical convergence order on a contact-free nonlinear fixture.

use serde::{Deserialize, Serialize};

use crate::contact::PenaltyParams;
use crate::forces::PhysicsModel;
use crate::integrators::{IntegratorConfig, Scheme};
use crate::linalg::norm_inf;
use crate::mesh::{MaterialParams, SystemState, TetMesh, TetMeshModel};
use crate::sim::{SimConfig, SimError, Simulation};
use crate::solvers::SolverConfig;

/// A stretched, spinning tetrahedron in free fall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderSetup {
    pub edge: f64,
    pub density: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Initial stretch along x as a fraction of the rest length.
    pub stretch: f64,
    /// Initial rigid spin about z (rad/s).
    pub spin: f64,
    pub duration: f64,
    /// Coarsest step; the estimate uses `h`, `h/2` and `h/4`.
    pub h: f64,
}

impl Default for OrderSetup {
    fn default() -> Self {
        OrderSetup {
            edge: 0.1,
            density: 1000.0,
            youngs_modulus: 100.0,
            poisson_ratio: 0.3,
            stretch: 0.2,
            spin: 2.0,
            duration: 0.5,
            h: 0.001,
        }
    }
}

/// Richardson order estimate for one scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderOutcome {
    #[serde(with = "crate::serde_str")]
    pub scheme: Scheme,
    pub steps: [f64; 3],
    /// `‖v_h − v_{h/2}‖∞` and `‖v_{h/2} − v_{h/4}‖∞` at the final time.
    pub differences: [f64; 2],
    /// `log2` of the ratio of the two differences.
    pub order: f64,
}

pub fn order_fixture(setup: &OrderSetup) -> (PhysicsModel, SystemState) {
    let mat = MaterialParams::new(setup.density, setup.youngs_modulus, setup.poisson_ratio);
    let m = TetMeshModel::from_single("tet", TetMesh::single_tet(setup.edge), mat).expect("valid tet");
    let model = PhysicsModel::new(m, [0.0, -9.8, 0.0]);
    let mut state = SystemState::at_rest(&model.mesh);
    let c = model.centroid(&state.q, None);
    for i in 0..model.mesh.num_vertices() {
        let x = &mut state.q[3 * i..3 * i + 3];
        x[0] = c[0] + (1.0 + setup.stretch) * (x[0] - c[0]);
        let (rx, ry) = (x[0] - c[0], x[1] - c[1]);
        state.v[3 * i] = -setup.spin * ry;
        state.v[3 * i + 1] = setup.spin * rx;
    }
    (model, state)
}

fn final_velocity(model: &PhysicsModel, state: &SystemState, scheme: Scheme, h: f64, duration: f64) -> Result<Vec<f64>, SimError> {
    let solver = SolverConfig { r_tol_abs: 1e-13, r_tol_rel: 1e-14, v_tol: 1e-15, max_iterations: 50, ..Default::default() };
    let integrator = IntegratorConfig { scheme, solver, ..Default::default() };
    let penalty = PenaltyParams { delta: 1e-3, kappa: 1.0, kappa_max: 1e16 };
    let mut sim = Simulation::new(model.clone(), state.clone(), SimConfig::new(h, duration, integrator, penalty))?;
    for _ in 0..sim.cfg.num_steps() {
        sim.step()?;
    }
    Ok(sim.state.v)
}

/// Runs `scheme` at `h`, `h/2`, `h/4` and estimates the convergence order.
pub fn estimate_order(setup: &OrderSetup, scheme: Scheme) -> Result<OrderOutcome, SimError> {
    let (model, state) = order_fixture(setup);
    let steps = [setup.h, setup.h / 2.0, setup.h / 4.0];
    let v: Vec<Vec<f64>> = steps
        .iter()
        .map(|&h| final_velocity(&model, &state, scheme, h, setup.duration))
        .collect::<Result<_, _>>()?;
    let diff = |a: &[f64], b: &[f64]| norm_inf(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
    let differences = [diff(&v[0], &v[1]), diff(&v[1], &v[2])];
    Ok(OrderOutcome { scheme, steps, differences, order: (differences[0] / differences[1]).log2() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_stretched_and_spinning() {
        let setup = OrderSetup::default();
        let (model, state) = order_fixture(&setup);
        let e = model.energies(&state.q, &state.v, 0.0, &PenaltyParams { delta: 1e-3, kappa: 1.0, kappa_max: 1e16 }).unwrap();
        assert!(e.elastic > 0.0 && e.kinetic > 0.0);
    }

    #[test]
    fn backward_euler_is_first_order() {
        let setup = OrderSetup { duration: 0.2, ..Default::default() };
        let out = estimate_order(&setup, Scheme::BackwardEuler).unwrap();
        assert!((out.order - 1.0).abs() < 0.1, "{out:?}");
    }

    #[test]
    fn trapezoidal_rule_is_second_order() {
        let setup = OrderSetup { duration: 0.2, ..Default::default() };
        let out = estimate_order(&setup, Scheme::Trapezoidal).unwrap();
        assert!((out.order - 2.0).abs() < 0.15, "{out:?}");
    }
}
