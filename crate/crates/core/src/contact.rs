//! Analytic obstacles, gap functions, cubic penalty contact and adaptive stiffening.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Real;
use crate::friction::FrictionParams;
use crate::linalg::{self, CsrMatrix, Triplets, M3, V3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContactError {
    #[error("invalid penalty parameters: {0}")]
    InvalidPenalty(String),
    #[error("invalid obstacle `{name}`: {reason}")]
    InvalidObstacle { name: String, reason: String },
    #[error(
        "contact stiffness {requested:e} would exceed the cap {kappa_max:e}; try a smaller time step"
    )]
    StiffnessCap { requested: f64, kappa_max: f64 },
}

/// Cubic penalty parameters.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    /// Thickness tolerance δ (m).
    pub delta: f64,
    /// Stiffness κ.
    pub kappa: f64,
    /// Upper bound for adaptive stiffening.
    pub kappa_max: f64,
}

impl PenaltyParams {
    pub fn validate(&self) -> Result<(), ContactError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(ContactError::InvalidPenalty(format!("delta = {} must be positive", self.delta)));
        }
        if !(self.kappa > 0.0 && self.kappa <= self.kappa_max) {
            return Err(ContactError::InvalidPenalty(format!(
                "need 0 < kappa ({}) <= kappa_max ({})",
                self.kappa, self.kappa_max
            )));
        }
        Ok(())
    }

    /// Stiffness for which the penalty force at `0.5δ` carries `load` newtons.
    pub fn balancing_kappa(delta: f64, load: f64) -> f64 {
        load / (0.75 * delta)
    }
}

/// `b(x) = −κ/δ (x − δ)³` for `x < δ`, zero otherwise.
pub fn penalty_b<T: Real>(x: T, delta: f64, kappa: f64) -> T {
    if x.re() < delta {
        let y = x - delta;
        -(y * y * y) * (kappa / delta)
    } else {
        T::zero()
    }
}

/// `b'(x)`.
pub fn penalty_db<T: Real>(x: T, delta: f64, kappa: f64) -> T {
    if x.re() < delta {
        let y = x - delta;
        -(y * y) * (3.0 * kappa / delta)
    } else {
        T::zero()
    }
}

/// `b''(x)`.
pub fn penalty_d2b(x: f64, delta: f64, kappa: f64) -> f64 {
    if x < delta {
        -6.0 * kappa / delta * (x - delta)
    } else {
        0.0
    }
}

/// Contact force magnitude `λ = −b'(d) ≥ 0`.
pub fn contact_magnitude<T: Real>(d: T, p: &PenaltyParams) -> T {
    -penalty_db(d, p.delta, p.kappa)
}

/// Obstacle geometry in its reference frame.
#[derive(Clone, Debug, PartialEq)]
pub enum ObstacleShape {
    /// Solid below the plane through `point` with outward `normal`.
    HalfSpace { point: [f64; 3], normal: [f64; 3] },
    /// Solid ball (`inside = false`) or a spherical container (`inside = true`).
    Sphere { center: [f64; 3], radius: f64, inside: bool },
}

/// Keyframe of a piecewise-linear translation.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub time: f64,
    pub translation: [f64; 3],
}

/// Scripted rigid motion of an obstacle.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum RigidMotion {
    #[default]
    Static,
    /// Constant linear velocity plus constant spin about `anchor` (reference frame).
    Constant { velocity: [f64; 3], angular_velocity: [f64; 3], anchor: [f64; 3] },
    /// Piecewise-linear translation, clamped outside the keyframe range.
    Keyframes(Vec<Keyframe>),
}

/// Rigid placement `x = R (x_ref − anchor_ref) + anchor_world` and its velocity field.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub rotation: M3<f64>,
    pub anchor_ref: [f64; 3],
    pub anchor_world: [f64; 3],
    pub velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
}

impl Placement {
    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        linalg::add(linalg::mat_vec(&self.rotation, linalg::sub(x, self.anchor_ref)), self.anchor_world)
    }

    /// Velocity of the obstacle material point currently at world position `x`.
    pub fn point_velocity<T: Real>(&self, x: V3<T>) -> V3<T> {
        let r = linalg::sub(x, linalg::v3(self.anchor_world));
        linalg::add(linalg::cross(linalg::v3(self.angular_velocity), r), linalg::v3(self.velocity))
    }
}

impl RigidMotion {
    pub fn placement(&self, t: f64) -> Placement {
        match self {
            RigidMotion::Static => Placement {
                rotation: linalg::IDENTITY,
                anchor_ref: [0.0; 3],
                anchor_world: [0.0; 3],
                velocity: [0.0; 3],
                angular_velocity: [0.0; 3],
            },
            RigidMotion::Constant { velocity, angular_velocity, anchor } => Placement {
                rotation: linalg::rotation_from_vector(linalg::scale(*angular_velocity, t)),
                anchor_ref: *anchor,
                anchor_world: linalg::add(*anchor, linalg::scale(*velocity, t)),
                velocity: *velocity,
                angular_velocity: *angular_velocity,
            },
            RigidMotion::Keyframes(keys) => {
                let (translation, velocity) = interpolate_keyframes(keys, t);
                Placement {
                    rotation: linalg::IDENTITY,
                    anchor_ref: [0.0; 3],
                    anchor_world: translation,
                    velocity,
                    angular_velocity: [0.0; 3],
                }
            }
        }
    }
}

fn interpolate_keyframes(keys: &[Keyframe], t: f64) -> ([f64; 3], [f64; 3]) {
    match keys {
        [] => ([0.0; 3], [0.0; 3]),
        [k] => (k.translation, [0.0; 3]),
        _ => {
            if t < keys[0].time {
                return (keys[0].translation, [0.0; 3]);
            }
            for w in keys.windows(2) {
                let (a, b) = (w[0], w[1]);
                if t < b.time {
                    let span = b.time - a.time;
                    let vel = linalg::scale(linalg::sub(b.translation, a.translation), 1.0 / span);
                    return (linalg::add(a.translation, linalg::scale(vel, t - a.time)), vel);
                }
            }
            (keys[keys.len() - 1].translation, [0.0; 3])
        }
    }
}

/// Obstacle shape placed in the world at a particular time.
#[derive(Clone, Debug, PartialEq)]
pub enum WorldShape {
    HalfSpace { point: [f64; 3], normal: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64, inside: bool },
}

impl WorldShape {
    /// Signed distance `d` and unit normal `n = ∂d/∂x` at `x`.
    pub fn gap<T: Real>(&self, x: V3<T>) -> (T, V3<T>) {
        match *self {
            WorldShape::HalfSpace { point, normal } => {
                let n = linalg::v3(normal);
                (linalg::dot(n, linalg::sub(x, linalg::v3(point))), n)
            }
            WorldShape::Sphere { center, radius, inside } => {
                let r = linalg::sub(x, linalg::v3(center));
                let rho = linalg::norm(r);
                let sign = if inside { -1.0 } else { 1.0 };
                if rho.re() == 0.0 {
                    let n = linalg::v3([0.0, sign, 0.0]);
                    return (T::from_f64(-sign * radius), n);
                }
                let n = linalg::scale(r, T::one() / rho);
                ((rho - radius) * sign, linalg::scale(n, T::from_f64(sign)))
            }
        }
    }

    /// Normal derivative `N = ∂n/∂x`.
    pub fn curvature(&self, x: [f64; 3]) -> M3<f64> {
        match *self {
            WorldShape::HalfSpace { .. } => [[0.0; 3]; 3],
            WorldShape::Sphere { center, inside, .. } => {
                let r = linalg::sub(x, center);
                let rho = linalg::norm(r);
                if rho == 0.0 {
                    return [[0.0; 3]; 3];
                }
                let n = linalg::scale(r, 1.0 / rho);
                let p = linalg::m3_add(&linalg::IDENTITY, &linalg::m3_scale(&linalg::outer(n, n), -1.0));
                let s = if inside { -1.0 } else { 1.0 };
                linalg::m3_scale(&p, s / rho)
            }
        }
    }
}

/// An analytic obstacle with scripted rigid motion.
#[derive(Clone, Debug, PartialEq)]
pub struct ImplicitObstacle {
    pub name: String,
    pub shape: ObstacleShape,
    pub motion: RigidMotion,
    pub friction: FrictionParams,
}

impl ImplicitObstacle {
    pub fn new(name: &str, shape: ObstacleShape, friction: FrictionParams) -> Self {
        ImplicitObstacle { name: name.to_string(), shape, motion: RigidMotion::Static, friction }
    }

    pub fn with_motion(mut self, motion: RigidMotion) -> Self {
        self.motion = motion;
        self
    }

    pub fn validate(&self) -> Result<(), ContactError> {
        let bad = |reason: String| Err(ContactError::InvalidObstacle { name: self.name.clone(), reason });
        match &self.shape {
            ObstacleShape::HalfSpace { normal, .. } => {
                if (linalg::norm(*normal) - 1.0).abs() > 1e-9 {
                    return bad(format!("normal {normal:?} is not unit length"));
                }
            }
            ObstacleShape::Sphere { radius, .. } => {
                if !(*radius > 0.0) {
                    return bad(format!("radius {radius} must be positive"));
                }
            }
        }
        if let RigidMotion::Keyframes(keys) = &self.motion {
            if keys.windows(2).any(|w| !(w[1].time > w[0].time)) {
                return bad("keyframe times must be strictly increasing".into());
            }
        }
        self.friction.validate().or_else(|e| bad(e.to_string()))
    }

    pub fn at_time(&self, t: f64) -> (WorldShape, Placement) {
        let pl = self.motion.placement(t);
        let shape = match self.shape {
            ObstacleShape::HalfSpace { point, normal } => WorldShape::HalfSpace {
                point: pl.apply(point),
                normal: linalg::mat_vec(&pl.rotation, normal),
            },
            ObstacleShape::Sphere { center, radius, inside } => {
                WorldShape::Sphere { center: pl.apply(center), radius, inside }
            }
        };
        (shape, pl)
    }

    /// Signed distance from `x` at time `t`.
    pub fn distance(&self, x: [f64; 3], t: f64) -> f64 {
        self.at_time(t).0.gap(x).0
    }
}

/// Unit tangent pair for normal `n`: `b1` is the normalized projection of `e_x`
/// (of `e_z` when `n` is within about 25° of `e_x`), `b2 = n × b1`.
pub fn tangent_basis<T: Real>(n: V3<T>) -> (V3<T>, V3<T>) {
    let axis = if n[0].re().abs() > 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let a = linalg::v3::<T>(axis);
    let proj = linalg::sub(a, linalg::scale(n, linalg::dot(n, a)));
    let b1 = linalg::scale(proj, T::one() / linalg::norm(proj));
    let b2 = linalg::cross(n, b1);
    (b1, b2)
}

/// A (surface vertex, obstacle) pair tracked during one step.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContactPair {
    pub vertex: usize,
    pub obstacle: usize,
}

/// Contact geometry and force magnitude for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Contact {
    pub vertex: usize,
    pub obstacle: usize,
    pub d: f64,
    pub lambda: f64,
    pub normal: [f64; 3],
    pub b1: [f64; 3],
    pub b2: [f64; 3],
    /// Velocity of the obstacle material point at the vertex.
    pub obstacle_velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
    pub curvature: M3<f64>,
}

/// Geometry of all tracked contacts at one configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContactSet {
    pub contacts: Vec<Contact>,
    pub time: f64,
}

/// Evaluates gaps, bases and λ for `pairs` at positions `q` and time `t`.
pub fn gaps(
    obstacles: &[ImplicitObstacle],
    pairs: &[ContactPair],
    q: &[f64],
    t: f64,
    penalty: &PenaltyParams,
) -> ContactSet {
    let placed: Vec<(WorldShape, Placement)> = obstacles.iter().map(|o| o.at_time(t)).collect();
    let contacts = pairs
        .iter()
        .map(|p| {
            let (shape, pl) = &placed[p.obstacle];
            let x = [q[3 * p.vertex], q[3 * p.vertex + 1], q[3 * p.vertex + 2]];
            let (d, n) = shape.gap(x);
            let (b1, b2) = tangent_basis(n);
            Contact {
                vertex: p.vertex,
                obstacle: p.obstacle,
                d,
                lambda: contact_magnitude(d, penalty),
                normal: n,
                b1,
                b2,
                obstacle_velocity: pl.point_velocity(x),
                angular_velocity: pl.angular_velocity,
                curvature: shape.curvature(x),
            }
        })
        .collect();
    ContactSet { contacts, time: t }
}

/// Pairs of surface vertices and obstacles closer than `threshold` in any of `configs`.
pub fn candidate_pairs(
    obstacles: &[ImplicitObstacle],
    surface_vertices: &[usize],
    configs: &[(&[f64], f64)],
    threshold: f64,
) -> Vec<ContactPair> {
    let mut out = Vec::new();
    for (oi, o) in obstacles.iter().enumerate() {
        let placed: Vec<WorldShape> = configs.iter().map(|&(_, t)| o.at_time(t).0).collect();
        for &vi in surface_vertices {
            let close = configs.iter().zip(&placed).any(|(&(q, _), shape)| {
                let x = [q[3 * vi], q[3 * vi + 1], q[3 * vi + 2]];
                shape.gap(x).0 < threshold
            });
            if close {
                out.push(ContactPair { vertex: vi, obstacle: oi });
            }
        }
    }
    out.sort_unstable();
    out
}

/// Smallest gap over every surface vertex and obstacle, with its pair.
pub fn deepest_gap(
    obstacles: &[ImplicitObstacle],
    surface_vertices: &[usize],
    q: &[f64],
    t: f64,
) -> Option<(f64, ContactPair)> {
    let mut best: Option<(f64, ContactPair)> = None;
    for (oi, o) in obstacles.iter().enumerate() {
        let shape = o.at_time(t).0;
        for &vi in surface_vertices {
            let d = shape.gap([q[3 * vi], q[3 * vi + 1], q[3 * vi + 2]]).0;
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, ContactPair { vertex: vi, obstacle: oi }));
            }
        }
    }
    best
}

impl ContactSet {
    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.contacts.iter().map(|c| c.lambda).collect()
    }

    pub fn min_gap(&self) -> Option<f64> {
        self.contacts.iter().map(|c| c.d).reduce(f64::min)
    }

    /// Total penalty energy `Σ b(d_i)`.
    pub fn penalty_energy(&self, penalty: &PenaltyParams) -> f64 {
        self.contacts.iter().map(|c| penalty_b(c.d, penalty.delta, penalty.kappa)).sum()
    }

    /// `f_c = Σ λ_i ∂d_i/∂q`.
    pub fn contact_force(&self, n_dofs: usize) -> Vec<f64> {
        let mut f = vec![0.0; n_dofs];
        for c in &self.contacts {
            for k in 0..3 {
                f[3 * c.vertex + k] += c.lambda * c.normal[k];
            }
        }
        f
    }

    /// `Tᵀ v`: per-contact tangential coordinates of the vertex velocity.
    pub fn apply_t_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.len());
        for c in &self.contacts {
            let vi = [v[3 * c.vertex], v[3 * c.vertex + 1], v[3 * c.vertex + 2]];
            out.push(linalg::dot(c.b1, vi));
            out.push(linalg::dot(c.b2, vi));
        }
        out
    }

    /// `T y`: maps stacked tangential 2-vectors to generalized forces.
    pub fn apply_t(&self, y: &[f64], n_dofs: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_dofs];
        for (i, c) in self.contacts.iter().enumerate() {
            for k in 0..3 {
                out[3 * c.vertex + k] += c.b1[k] * y[2 * i] + c.b2[k] * y[2 * i + 1];
            }
        }
        out
    }

    /// Relative tangential velocities `v̄_i` (obstacle motion subtracted).
    pub fn relative_tangential_velocities(&self, v: &[f64]) -> Vec<[f64; 2]> {
        self.contacts
            .iter()
            .map(|c| {
                let u = linalg::sub([v[3 * c.vertex], v[3 * c.vertex + 1], v[3 * c.vertex + 2]], c.obstacle_velocity);
                [linalg::dot(c.b1, u), linalg::dot(c.b2, u)]
            })
            .collect()
    }

    /// Sliding-basis matrix `T` (`n_dofs × 2k`).
    pub fn sliding_basis_matrix(&self, n_dofs: usize) -> CsrMatrix {
        let mut t = Triplets::new(n_dofs, 2 * self.len());
        for (i, c) in self.contacts.iter().enumerate() {
            for k in 0..3 {
                t.entries.push((3 * c.vertex + k, 2 * i, c.b1[k]));
                t.entries.push((3 * c.vertex + k, 2 * i + 1, c.b2[k]));
            }
        }
        t.to_csr()
    }

    /// Adds `s · ∂f_c/∂q` into `t`; per contact `−b''(d) n nᵀ + λ N`.
    pub fn add_contact_jacobian(&self, penalty: &PenaltyParams, s: f64, t: &mut Triplets) {
        for c in &self.contacts {
            if c.d >= penalty.delta {
                continue;
            }
            let d2b = penalty_d2b(c.d, penalty.delta, penalty.kappa);
            let block = linalg::m3_add(
                &linalg::m3_scale(&linalg::outer(c.normal, c.normal), -d2b),
                &linalg::m3_scale(&c.curvature, c.lambda),
            );
            t.push_block(c.vertex, c.vertex, &block, s);
        }
    }
}

/// Outcome of the post-step stiffness check.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum StiffenDecision {
    Accept,
    Retry { kappa: f64 },
}

/// Accepts when the deepest gap is positive, otherwise scales κ by
/// `b'(d_deepest)/b'(0.5δ)` and asks for the step to be repeated.
pub fn adaptive_stiffen(deepest: f64, penalty: &PenaltyParams) -> Result<StiffenDecision, ContactError> {
    if deepest > 0.0 {
        return Ok(StiffenDecision::Accept);
    }
    let factor = penalty_db(deepest, penalty.delta, 1.0) / penalty_db(0.5 * penalty.delta, penalty.delta, 1.0);
    let requested = penalty.kappa * factor;
    if requested > penalty.kappa_max {
        return Err(ContactError::StiffnessCap { requested, kappa_max: penalty.kappa_max });
    }
    Ok(StiffenDecision::Retry { kappa: requested })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ground() -> ImplicitObstacle {
        ImplicitObstacle::new(
            "ground",
            ObstacleShape::HalfSpace { point: [0.0; 3], normal: [0.0, 1.0, 0.0] },
            FrictionParams::coulomb(0.5, 1e-3),
        )
    }

    fn penalty() -> PenaltyParams {
        PenaltyParams { delta: 0.01, kappa: 100.0, kappa_max: 1e12 }
    }

    #[test]
    fn plane_and_sphere_gaps() {
        let g = ground();
        assert!((g.distance([0.2, 0.3, -1.0], 0.0) - 0.3).abs() < 1e-15);
        assert!((g.distance([0.0, -0.01, 0.0], 0.0) + 0.01).abs() < 1e-15);
        let s = ImplicitObstacle::new(
            "ball",
            ObstacleShape::Sphere { center: [1.0, 0.0, 0.0], radius: 0.5, inside: false },
            FrictionParams::coulomb(0.5, 1e-3),
        );
        assert!(s.distance([1.0, 0.5, 0.0], 0.0).abs() < 1e-15);
        let bowl = ImplicitObstacle::new(
            "bowl",
            ObstacleShape::Sphere { center: [0.0; 3], radius: 1.0, inside: true },
            FrictionParams::coulomb(0.5, 1e-3),
        );
        assert!((bowl.distance([0.0, -0.9, 0.0], 0.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn penalty_values() {
        let (d, k) = (0.01, 100.0);
        assert_eq!(penalty_b(d, d, k), 0.0);
        assert_eq!(penalty_b(2.0 * d, d, k), 0.0);
        assert!((penalty_b(0.0, d, k) - k * d * d).abs() < 1e-15);
        assert!((penalty_b(-d, d, k) - 8.0 * k * d * d).abs() < 1e-14);
        assert!((contact_magnitude(0.0, &penalty()) - 3.0 * k * d).abs() < 1e-12);
        assert_eq!(penalty_db(d, d, k), 0.0);
        assert_eq!(penalty_d2b(d, d, k), 0.0);
    }

    #[test]
    fn stiffening_factors() {
        let p = penalty();
        assert_eq!(adaptive_stiffen(0.1 * p.delta, &p).unwrap(), StiffenDecision::Accept);
        match adaptive_stiffen(-1e-300, &p).unwrap() {
            StiffenDecision::Retry { kappa } => assert!((kappa / p.kappa - 4.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        match adaptive_stiffen(-p.delta, &p).unwrap() {
            StiffenDecision::Retry { kappa } => assert!((kappa / p.kappa - 16.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let capped = PenaltyParams { kappa_max: 200.0, ..p };
        assert!(matches!(adaptive_stiffen(-p.delta, &capped), Err(ContactError::StiffnessCap { .. })));
    }

    #[test]
    fn bases_are_orthonormal() {
        for n in [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.6, 0.0, 0.8], [-0.48, 0.6, 0.64]] {
            let (b1, b2) = tangent_basis(n);
            for (a, b, want) in [
                (n, n, 1.0),
                (b1, b1, 1.0),
                (b2, b2, 1.0),
                (n, b1, 0.0),
                (n, b2, 0.0),
                (b1, b2, 0.0),
            ] {
                assert!((linalg::dot(a, b) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sliding_basis_identities() {
        let obstacles = vec![ground()];
        let q = vec![0.0, 0.001, 0.0, 1.0, 0.002, 0.0];
        let pairs = [ContactPair { vertex: 0, obstacle: 0 }, ContactPair { vertex: 1, obstacle: 0 }];
        let set = gaps(&obstacles, &pairs, &q, 0.0, &penalty());
        let normal_v = vec![0.0, 2.0, 0.0, 0.0, -1.0, 0.0];
        assert!(linalg::norm_inf(&set.apply_t_transpose(&normal_v)) < 1e-15);
        let tangential = vec![0.3, 0.0, 0.4, 0.0, 0.0, 0.0];
        let tv = set.apply_t_transpose(&tangential);
        assert!(((tv[0] * tv[0] + tv[1] * tv[1]).sqrt() - 0.5).abs() < 1e-15);
        let y = [0.3, -1.1, 2.0, 0.7];
        let v = [0.1, 0.2, -0.3, 0.9, -0.4, 0.5];
        let lhs = linalg::dot_n(&set.apply_t(&y, 6), &v);
        let rhs = linalg::dot_n(&y, &set.apply_t_transpose(&v));
        assert!((lhs - rhs).abs() < 1e-14);
        let tm = set.sliding_basis_matrix(6);
        assert_eq!(tm.nnz(), 6 * set.len());
        assert_eq!(tm.mul_vec(&y), set.apply_t(&y, 6));
    }

    #[test]
    fn contact_force_is_minus_penalty_gradient() {
        let obstacles = vec![ImplicitObstacle::new(
            "ball",
            ObstacleShape::Sphere { center: [0.0; 3], radius: 1.0, inside: false },
            FrictionParams::coulomb(0.5, 1e-3),
        )];
        let p = penalty();
        let q = vec![0.3, 0.95, 0.1];
        let pairs = [ContactPair { vertex: 0, obstacle: 0 }];
        let f = gaps(&obstacles, &pairs, &q, 0.0, &p).contact_force(3);
        let h = 1e-7;
        for i in 0..3 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let e = |q: &[f64]| gaps(&obstacles, &pairs, q, 0.0, &p).penalty_energy(&p);
            let fd = -(e(&qp) - e(&qm)) / (2.0 * h);
            assert!((fd - f[i]).abs() <= 1e-5 * linalg::norm2(&f));
        }
    }

    #[test]
    fn keyframes_interpolate_and_clamp() {
        let keys = vec![
            Keyframe { time: 0.0, translation: [0.0; 3] },
            Keyframe { time: 1.0, translation: [0.0, 2.0, 0.0] },
        ];
        let m = RigidMotion::Keyframes(keys);
        let p = m.placement(0.5);
        assert_eq!(p.anchor_world, [0.0, 1.0, 0.0]);
        assert_eq!(p.velocity, [0.0, 2.0, 0.0]);
        assert_eq!(m.placement(3.0).velocity, [0.0; 3]);
        assert_eq!(m.placement(3.0).anchor_world, [0.0, 2.0, 0.0]);
    }

    #[test]
    fn spinning_obstacle_point_velocity() {
        let m = RigidMotion::Constant { velocity: [0.0; 3], angular_velocity: [0.0, 0.0, 2.0], anchor: [0.0; 3] };
        let p = m.placement(0.0);
        let v = p.point_velocity([1.0, 0.0, 0.0]);
        assert!((v[1] - 2.0).abs() < 1e-15 && v[0].abs() < 1e-15);
    }
}
