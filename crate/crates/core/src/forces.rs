//! The assembled physical system: total force `f = f_e + f_d + f_c + f_f + f_g + f_v`
//! and its analytic Jacobians.

use thiserror::Error;

use crate::autodiff::Real;
use crate::contact::{self, ContactPair, ImplicitObstacle, PenaltyParams, Placement, WorldShape};
use crate::elasticity::{self, ElasticError, ElasticScratch};
use crate::friction::{self, FrictionGeometry, JacobianDetail};
use crate::linalg::{self, Triplets, V3};
use crate::mesh::TetMeshModel;
use crate::volume::{VolumeError, VolumeRegion};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForceError {
    #[error(transparent)]
    Elastic(#[from] ElasticError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("force evaluation produced a non-finite value at dof {0}")]
    NonFinite(usize),
}

/// A vertex whose velocity is prescribed.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Dirichlet {
    pub vertex: usize,
    pub velocity: [f64; 3],
}

/// Which force terms to include in an evaluation.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ForceSelection {
    pub elastic: bool,
    pub damping: bool,
    pub gravity: bool,
    pub contact: bool,
    pub friction: bool,
    pub volume: bool,
}

impl ForceSelection {
    pub const ALL: ForceSelection =
        ForceSelection { elastic: true, damping: true, gravity: true, contact: true, friction: true, volume: true };
    /// Everything except contact and friction.
    pub const NON_CONTACT: ForceSelection = ForceSelection { contact: false, friction: false, ..Self::ALL };
    /// Contact and friction only.
    pub const CONTACT_ONLY: ForceSelection = ForceSelection {
        elastic: false,
        damping: false,
        gravity: false,
        contact: true,
        friction: true,
        volume: false,
    };
}

/// Where the friction sliding basis and contact magnitudes come from.
#[derive(Copy, Clone, Debug)]
pub enum FrictionSource<'a> {
    /// The configuration being solved for.
    Current,
    /// The configuration being solved for, but held constant for differentiation.
    CurrentFrozen,
    /// A fixed configuration `q` at obstacle time `time`.
    Lagged { q: &'a [f64], time: f64 },
}

/// Per-evaluation context shared by force and Jacobian routines.
#[derive(Copy, Clone, Debug)]
pub struct ForceContext<'a> {
    pub pairs: &'a [ContactPair],
    pub penalty: PenaltyParams,
    /// Obstacle time for the configuration being evaluated.
    pub time: f64,
    pub friction: FrictionSource<'a>,
    pub select: ForceSelection,
}

/// Force Jacobians `∂f/∂q` (sparse plus low-rank `c ∇V∇Vᵀ` terms) and `∂f/∂v`.
#[derive(Clone, Debug)]
pub struct ForceJacobian {
    pub dq: Triplets,
    pub dq_low_rank: Vec<(f64, Vec<f64>)>,
    pub dv: Triplets,
}

/// Meshes, materials, obstacles, volume regions and boundary conditions.
#[derive(Clone, Debug)]
pub struct PhysicsModel {
    pub mesh: TetMeshModel,
    pub elastic: ElasticScratch,
    /// Mass-proportional damping coefficient per dof.
    pub alpha: Vec<f64>,
    pub gravity: [f64; 3],
    pub obstacles: Vec<ImplicitObstacle>,
    pub volumes: Vec<VolumeRegion>,
    pub fixed: Vec<Dirichlet>,
}

/// Energy breakdown of a state.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Energies {
    pub kinetic: f64,
    pub elastic: f64,
    pub penalty: f64,
    /// Gravitational potential relative to the origin.
    pub gravity: f64,
    pub volume: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.kinetic + self.elastic + self.penalty + self.gravity + self.volume
    }
}

impl PhysicsModel {
    pub fn new(mesh: TetMeshModel, gravity: [f64; 3]) -> Self {
        PhysicsModel {
            elastic: ElasticScratch::new(&mesh),
            alpha: elasticity::alpha_per_dof(&mesh),
            mesh,
            gravity,
            obstacles: Vec::new(),
            volumes: Vec::new(),
            fixed: Vec::new(),
        }
    }

    pub fn with_obstacle(mut self, o: ImplicitObstacle) -> Self {
        self.obstacles.push(o);
        self
    }

    pub fn with_volume(mut self, v: VolumeRegion) -> Self {
        self.volumes.push(v);
        self
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.num_dofs()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mesh.vertex_mass
    }

    fn placed(&self, t: f64) -> Vec<(WorldShape, Placement)> {
        self.obstacles.iter().map(|o| o.at_time(t)).collect()
    }

    /// Total force at `(q, v)`, generic over the scalar type.
    pub fn force<T: Real>(&self, ctx: &ForceContext, q: &[T], v: &[T]) -> Result<Vec<T>, ForceError> {
        let n = self.n_dofs();
        let mut f = vec![T::zero(); n];
        let sel = ctx.select;
        if sel.gravity {
            for (i, fi) in f.iter_mut().enumerate() {
                *fi += T::from_f64(self.mesh.vertex_mass[i] * self.gravity[i % 3]);
            }
        }
        if sel.elastic {
            elasticity::add_elastic_force(&self.elastic, q, &mut f)?;
        }
        if sel.damping {
            elasticity::add_damping_force(&self.elastic, &self.mesh.vertex_mass, &self.alpha, q, v, &mut f)?;
        }
        if sel.volume {
            for region in &self.volumes {
                region.add_force(q, &mut f)?;
            }
        }
        if sel.contact || sel.friction {
            self.add_contact_forces(ctx, q, v, &mut f);
        }
        if let Some(i) = f.iter().position(|x| !x.is_finite()) {
            return Err(ForceError::NonFinite(i));
        }
        Ok(f)
    }

    fn add_contact_forces<T: Real>(&self, ctx: &ForceContext, q: &[T], v: &[T], f: &mut [T]) {
        let placed = self.placed(ctx.time);
        let lagged_placed = match ctx.friction {
            FrictionSource::Lagged { time, .. } => Some(self.placed(time)),
            _ => None,
        };
        let pen = &ctx.penalty;
        for pair in ctx.pairs {
            let i = pair.vertex;
            let x: V3<T> = [q[3 * i], q[3 * i + 1], q[3 * i + 2]];
            if ctx.select.contact {
                let (d, n) = placed[pair.obstacle].0.gap(x);
                let lambda = contact::contact_magnitude(d, pen);
                for k in 0..3 {
                    f[3 * i + k] += lambda * n[k];
                }
            }
            let params = &self.obstacles[pair.obstacle].friction;
            if !ctx.select.friction || params.is_frictionless() {
                continue;
            }
            let (xg, (shape, pl)) = match ctx.friction {
                FrictionSource::Current => (x, &placed[pair.obstacle]),
                FrictionSource::CurrentFrozen => (linalg::detach3(x), &placed[pair.obstacle]),
                FrictionSource::Lagged { q: ql, .. } => (
                    linalg::v3([ql[3 * i], ql[3 * i + 1], ql[3 * i + 2]]),
                    &lagged_placed.as_ref().expect("lagged placements")[pair.obstacle],
                ),
            };
            let (d, n) = shape.gap(xg);
            let lambda = contact::contact_magnitude(d, pen);
            // Friction, including its viscous part, acts only on loaded contacts.
            if lambda.re() == 0.0 {
                continue;
            }
            let (b1, b2) = contact::tangent_basis(n);
            let vi = [v[3 * i], v[3 * i + 1], v[3 * i + 2]];
            let u = linalg::sub(vi, pl.point_velocity(xg));
            let ff = friction::contact_friction_force(b1, b2, lambda, u, params);
            for k in 0..3 {
                f[3 * i + k] += ff[k];
            }
        }
    }

    /// Analytic `∂f/∂q` and `∂f/∂v` at `(q, v)`.
    pub fn force_jacobian(
        &self,
        ctx: &ForceContext,
        q: &[f64],
        v: &[f64],
        detail: JacobianDetail,
    ) -> Result<ForceJacobian, ForceError> {
        let n = self.n_dofs();
        let mut dq = Triplets::new(n, n);
        let mut dv = Triplets::new(n, n);
        let mut dq_low_rank = Vec::new();
        let sel = ctx.select;
        if sel.elastic {
            elasticity::add_stiffness_triplets(&self.elastic, q, |_| -1.0, &mut dq)?;
        }
        if sel.damping {
            for i in 0..n {
                dv.push(i, i, -self.alpha[i] * self.mesh.vertex_mass[i]);
            }
            elasticity::add_stiffness_triplets(&self.elastic, q, |e| -self.elastic.rayleigh[e].1, &mut dv)?;
            elasticity::add_damping_position_triplets(&self.elastic, q, v, 1.0, &mut dq)?;
        }
        if sel.volume {
            for region in &self.volumes {
                dq_low_rank.push(region.add_force_jacobian(q, 1.0, &mut dq)?);
            }
        }
        if sel.contact || sel.friction {
            self.add_contact_jacobian(ctx, q, v, detail, &mut dq, &mut dv);
        }
        Ok(ForceJacobian { dq, dq_low_rank, dv })
    }

    fn add_contact_jacobian(
        &self,
        ctx: &ForceContext,
        q: &[f64],
        v: &[f64],
        detail: JacobianDetail,
        dq: &mut Triplets,
        dv: &mut Triplets,
    ) {
        let pen = &ctx.penalty;
        if ctx.select.contact {
            contact::gaps(&self.obstacles, ctx.pairs, q, ctx.time, pen).add_contact_jacobian(pen, 1.0, dq);
        }
        if !ctx.select.friction {
            return;
        }
        let (geo_q, geo_t, with_geometry) = match ctx.friction {
            FrictionSource::Current => (q, ctx.time, detail == JacobianDetail::Full),
            FrictionSource::CurrentFrozen => (q, ctx.time, false),
            FrictionSource::Lagged { q: ql, time } => (ql, time, false),
        };
        let set = contact::gaps(&self.obstacles, ctx.pairs, geo_q, geo_t, pen);
        for c in &set.contacts {
            let params = &self.obstacles[c.obstacle].friction;
            if params.is_frictionless() || c.lambda == 0.0 {
                continue;
            }
            let geo = FrictionGeometry {
                normal: c.normal,
                curvature: c.curvature,
                lambda: c.lambda,
                dlambda_dd: -contact::penalty_d2b(c.d, pen.delta, pen.kappa),
                angular_velocity: c.angular_velocity,
            };
            let i = c.vertex;
            let u = linalg::sub([v[3 * i], v[3 * i + 1], v[3 * i + 2]], c.obstacle_velocity);
            let (dfdv, dfdx) = friction::contact_friction_jacobian(&geo, u, params, with_geometry);
            dv.push_block(i, i, &dfdv, 1.0);
            if with_geometry {
                dq.push_block(i, i, &dfdx, 1.0);
            }
        }
    }

    /// Candidate contact pairs within `threshold` at any of `configs`.
    pub fn candidate_pairs(&self, configs: &[(&[f64], f64)], threshold: f64) -> Vec<ContactPair> {
        contact::candidate_pairs(&self.obstacles, &self.mesh.surface_vertices, configs, threshold)
    }

    /// Deepest gap over all surface vertices and obstacles at time `t`.
    pub fn deepest_gap(&self, q: &[f64], t: f64) -> Option<(f64, ContactPair)> {
        contact::deepest_gap(&self.obstacles, &self.mesh.surface_vertices, q, t)
    }

    pub fn energies(&self, q: &[f64], v: &[f64], t: f64, penalty: &PenaltyParams) -> Result<Energies, ForceError> {
        let m = &self.mesh.vertex_mass;
        let kinetic = 0.5 * v.iter().zip(m).map(|(vi, mi)| mi * vi * vi).sum::<f64>();
        let gravity = -q.iter().enumerate().map(|(i, x)| m[i] * self.gravity[i % 3] * x).sum::<f64>();
        let elastic = elasticity::elastic_energy(&self.elastic, q)?;
        let mut volume = 0.0;
        for r in &self.volumes {
            volume += r.energy(q)?;
        }
        let pairs = self.candidate_pairs(&[(q, t)], penalty.delta);
        let penalty_energy = contact::gaps(&self.obstacles, &pairs, q, t, penalty).penalty_energy(penalty);
        Ok(Energies { kinetic, elastic, penalty: penalty_energy, gravity, volume })
    }

    /// Largest relative tangential speed over contacts with positive λ.
    pub fn max_sliding_speed(&self, q: &[f64], v: &[f64], t: f64, penalty: &PenaltyParams) -> f64 {
        let pairs = self.candidate_pairs(&[(q, t)], penalty.delta);
        let set = contact::gaps(&self.obstacles, &pairs, q, t, penalty);
        set.relative_tangential_velocities(v)
            .iter()
            .zip(&set.contacts)
            .filter(|(_, c)| c.lambda > 0.0)
            .map(|(w, _)| (w[0] * w[0] + w[1] * w[1]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Mass-weighted centroid of the vertices in `range` (all vertices when `None`).
    pub fn centroid(&self, q: &[f64], range: Option<std::ops::Range<usize>>) -> [f64; 3] {
        let range = range.unwrap_or(0..self.mesh.num_vertices());
        let mut c = [0.0; 3];
        let mut total = 0.0;
        for i in range {
            let m = self.mesh.vertex_mass[3 * i];
            total += m;
            for k in 0..3 {
                c[k] += m * q[3 * i + k];
            }
        }
        linalg::scale(c, 1.0 / total)
    }

    /// Per-dof mask of prescribed velocities.
    pub fn prescribed_dofs(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .fixed
            .iter()
            .flat_map(|d| (0..3).map(move |k| (3 * d.vertex + k, d.velocity[k])))
            .collect();
        out.sort_by_key(|&(i, _)| i);
        out.dedup_by_key(|&mut (i, _)| i);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{jvp, Dual};
    use crate::contact::ObstacleShape;
    use crate::friction::FrictionParams;
    use crate::mesh::{MaterialParams, TetMesh};

    fn model() -> PhysicsModel {
        let mesh = TetMesh::box_grid([0.1, 0.1, 0.1], [1, 1, 1]).translated([0.0, 0.0005, 0.0]);
        let mat = MaterialParams::new(1000.0, 1e5, 0.3).with_damping(0.5, 0.01);
        let m = TetMeshModel::from_single("b", mesh, mat).unwrap();
        PhysicsModel::new(m, [0.0, -9.8, 0.0]).with_obstacle(ImplicitObstacle::new(
            "ball",
            ObstacleShape::Sphere { center: [0.05, -1.0, 0.05], radius: 1.0, inside: false },
            FrictionParams { mu_d: 0.3, mu_s: 0.5, mu_v: 0.01, epsilon: 0.01, stribeck_velocity: None },
        ))
    }

    #[test]
    fn assembled_jacobians_match_dual_products() {
        let m = model();
        let q: Vec<f64> = m.mesh.rest_q().iter().enumerate().map(|(i, x)| x + 1e-3 * (i as f64).sin()).collect();
        let v: Vec<f64> = (0..q.len()).map(|i| 0.02 * (i as f64 * 0.7).cos()).collect();
        let penalty = PenaltyParams { delta: 0.002, kappa: 1e5, kappa_max: 1e12 };
        let pairs = m.candidate_pairs(&[(&q, 0.0)], 0.003);
        assert!(!pairs.is_empty());
        let ctx = ForceContext {
            pairs: &pairs,
            penalty,
            time: 0.0,
            friction: FrictionSource::Current,
            select: ForceSelection::ALL,
        };
        let jac = m.force_jacobian(&ctx, &q, &v, JacobianDetail::Full).unwrap();
        let p: Vec<f64> = (0..q.len()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let mut aq = jac.dq.to_csr().mul_vec(&p);
        for (c, g) in &jac.dq_low_rank {
            linalg::axpy(c * linalg::dot_n(g, &p), g, &mut aq);
        }
        let av = jac.dv.to_csr().mul_vec(&p);
        let by_q = jvp(
            |qd: &[Dual]| {
                let vd: Vec<Dual> = v.iter().map(|&x| Dual::constant(x)).collect();
                m.force(&ctx, qd, &vd).unwrap()
            },
            &q,
            &p,
        );
        let by_v = jvp(
            |vd: &[Dual]| {
                let qd: Vec<Dual> = q.iter().map(|&x| Dual::constant(x)).collect();
                m.force(&ctx, &qd, vd).unwrap()
            },
            &v,
            &p,
        );
        let sq = linalg::norm_inf(&by_q);
        let sv = linalg::norm_inf(&by_v);
        for i in 0..q.len() {
            assert!((aq[i] - by_q[i]).abs() <= 1e-10 * sq, "dq {i}: {} vs {}", aq[i], by_q[i]);
            assert!((av[i] - by_v[i]).abs() <= 1e-10 * sv, "dv {i}: {} vs {}", av[i], by_v[i]);
        }
    }

    #[test]
    fn gravity_only_force() {
        let m = model();
        let q = m.mesh.rest_q();
        let v = vec![0.0; q.len()];
        let sel = ForceSelection { gravity: true, ..ForceSelection { ..ForceSelection::CONTACT_ONLY } };
        let sel = ForceSelection { contact: false, friction: false, ..sel };
        let ctx = ForceContext {
            pairs: &[],
            penalty: PenaltyParams { delta: 0.01, kappa: 1.0, kappa_max: 1.0 },
            time: 0.0,
            friction: FrictionSource::Current,
            select: sel,
        };
        let f = m.force(&ctx, &q, &v).unwrap();
        for i in 0..q.len() {
            assert_eq!(f[i], m.mesh.vertex_mass[i] * m.gravity[i % 3]);
        }
    }
}
