//! Scene files.
//!
//! A scene is a TOML document describing bodies, obstacles, volume regions
//! and run settings. Loading checks every field, fills in all defaults
//! (including the ones derived from the model, such as the initial contact
//! stiffness) and keeps the normalized configuration, whose dump parses back
//! to the same text.
//!
//! ```toml
//! duration = 1.0
//! h = 0.01
//!
//! [[bodies]]
//! name = "tet"
//! mesh = { tet = { edge = 0.1 } }
//! translation = [0.0, 0.01, 0.0]
//! material = { density = 1000.0, youngs_modulus = 1e5, poisson_ratio = 0.3 }
//!
//! [[obstacles]]
//! name = "ground"
//! shape = { half-space = { point = [0.0, 0.0, 0.0], normal = [0.0, 1.0, 0.0] } }
//! friction = { mu_d = 0.3 }
//! ```
//!
//! Mesh files are plain text, one record per line, indices starting at 0:
//!
//! ```text
//! v x y z        vertex
//! t a b c d      tetrahedron
//! g name         start a named triangle group
//! f a b c        triangle of the current group
//! # comment
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{ImplicitObstacle, Keyframe, ObstacleShape, PenaltyParams, RigidMotion};
use crate::forces::PhysicsModel;
use crate::friction::{FrictionMode, FrictionParams, JacobianDetail};
use crate::integrators::{IntegratorConfig, Scheme};
use crate::linalg;
use crate::mesh::{MaterialParams, SystemState, TetMesh, TetMeshModel};
use crate::sim::{self, SimConfig, SimError, Simulation};
use crate::solvers::{LinearSolverKind, SolverConfig};
use crate::volume::{self, VolumeModel, VolumePenaltyParams, VolumeRegion, ATM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("cannot read {}: {message}", .path.display())]
    Io { path: PathBuf, message: String },
    #[error("malformed scene: {0}")]
    Parse(String),
    #[error("unknown keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error("mesh file {} does not exist", .0.display())]
    MissingFile(PathBuf),
    #[error("{}:{line}: {reason}", .path.display())]
    MeshFormat { path: PathBuf, line: usize, reason: String },
}

impl SceneError {
    /// Machine-readable error category.
    pub fn category(&self) -> &'static str {
        match self {
            SceneError::Io { .. } | SceneError::MissingFile(_) => "io",
            _ => "config",
        }
    }
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> SceneError {
    SceneError::Invalid { path: path.into(), reason: reason.into() }
}

fn default_gravity() -> [f64; 3] {
    [0.0, -9.8, 0.0]
}

/// Top-level scene description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Simulated time (s).
    pub duration: f64,
    /// Time step (s).
    pub h: f64,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub contact: ContactSpec,
    #[serde(default)]
    pub output: OutputSpec,
    pub bodies: Vec<BodySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub volumes: Vec<VolumeSpec>,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorSpec {
    /// `be`, `tr`, `bdf2`, `trbdf2`, `sdirk2` or `tr-decoupled`.
    #[serde(with = "crate::serde_str")]
    pub scheme: Scheme,
    /// `implicit` or `lagged:<iterations>`.
    #[serde(with = "crate::serde_str")]
    pub friction: FrictionMode,
    /// `full` or `frozen-basis`.
    #[serde(with = "crate::serde_str")]
    pub jacobian: JacobianDetail,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSpec {
    /// `direct` or `iterative`.
    #[serde(with = "crate::serde_str")]
    pub kind: LinearSolverKind,
    pub max_iterations: usize,
    /// Sets `r_tol_abs = tolerance_factor · h · ‖M g‖∞` when `r_tol_abs` is absent.
    pub tolerance_factor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_tol_abs: Option<f64>,
    pub r_tol_rel: f64,
    /// Defaults to a tenth of the smallest friction ε.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_tol: Option<f64>,
    pub c1: f64,
    pub sigma: f64,
    pub rho: f64,
    pub phi: f64,
    pub max_krylov_iterations: usize,
    pub min_alpha: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSpec {
            kind: d.kind,
            max_iterations: d.max_iterations,
            tolerance_factor: 1e-6,
            r_tol_abs: None,
            r_tol_rel: d.r_tol_rel,
            v_tol: None,
            c1: d.c1,
            sigma: d.sigma,
            rho: d.rho,
            phi: d.phi,
            max_krylov_iterations: d.max_krylov_iterations,
            min_alpha: d.min_alpha,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactSpec {
    /// Penalty support δ (m).
    pub delta: f64,
    /// Initial stiffness; defaults to the value whose force at `δ/2` carries an average vertex weight.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    pub kappa_max: f64,
    pub candidate_factor: f64,
    pub max_kappa_retries: usize,
}

impl Default for ContactSpec {
    fn default() -> Self {
        ContactSpec { delta: 1e-3, kappa: None, kappa_max: 1e16, candidate_factor: 1.5, max_kappa_retries: 20 }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSpec {
    /// Steps between trajectory samples.
    pub sample_every: usize,
    /// Steps between mesh snapshots; 0 disables them.
    pub snapshot_every: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { sample_every: 1, snapshot_every: 0 }
    }
}

/// One simulated body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub name: String,
    #[serde(default)]
    pub translation: [f64; 3],
    /// Rotation vector (axis times angle) in degrees, applied before the translation.
    #[serde(default)]
    pub rotation_degrees: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Initial spin (rad/s) about the body's centre of mass.
    #[serde(default)]
    pub angular_velocity: [f64; 3],
    pub mesh: MeshSpec,
    pub material: MaterialParams,
}

/// Mesh source of a body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshSpec {
    /// Mesh file, relative to the scene file.
    File(PathBuf),
    Tet { edge: f64 },
    /// Box `[0, size]` split into `cells` hexahedra.
    Box { size: [f64; 3], cells: [usize; 3] },
    /// Hollow ball centred at the origin with `"outer"` and `"cavity"` groups.
    HollowSphere { inner: f64, outer: f64, subdivisions: usize, layers: usize },
}

/// An analytic obstacle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub name: String,
    pub shape: ShapeSpec,
    #[serde(default)]
    pub motion: MotionSpec,
    #[serde(default)]
    pub friction: FrictionSpec,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeSpec {
    /// Solid below the plane through `point`; `normal` points out of the solid.
    HalfSpace { point: [f64; 3], normal: [f64; 3] },
    /// Solid ball, or a spherical container when `inside` is set.
    Sphere {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        inside: bool,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionSpec {
    #[default]
    Static,
    Constant {
        #[serde(default)]
        velocity: [f64; 3],
        #[serde(default)]
        angular_velocity: [f64; 3],
        #[serde(default)]
        anchor: [f64; 3],
    },
    /// Piecewise-linear translation.
    Keyframes(Vec<Keyframe>),
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrictionSpec {
    pub mu_d: f64,
    /// Defaults to `mu_d`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_s: Option<f64>,
    pub mu_v: f64,
    pub epsilon: f64,
    /// Defaults to `10 ε`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stribeck_velocity: Option<f64>,
}

impl Default for FrictionSpec {
    fn default() -> Self {
        FrictionSpec { mu_d: 0.0, mu_s: None, mu_v: 0.0, epsilon: 1e-3, stribeck_velocity: None }
    }
}

impl FrictionSpec {
    pub fn params(&self) -> FrictionParams {
        FrictionParams {
            mu_d: self.mu_d,
            mu_s: self.mu_s.unwrap_or(self.mu_d),
            mu_v: self.mu_v,
            epsilon: self.epsilon,
            stribeck_velocity: self.stribeck_velocity,
        }
    }
}

fn default_group() -> String {
    "surface".into()
}

fn default_p0() -> f64 {
    1.0
}

/// Volume penalty on a closed triangle group of one body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSpec {
    pub name: String,
    pub body: String,
    #[serde(default = "default_group")]
    pub group: String,
    /// `ideal-gas`, `nearly-incompressible` or `quadratic`.
    #[serde(default, with = "crate::serde_str")]
    pub model: VolumeModel,
    /// Compression coefficient κ_v (1/atm).
    pub kappa_v_per_atm: f64,
    /// Initial pressure (atm).
    #[serde(default = "default_p0")]
    pub p0_atm: f64,
    /// Rest volume (m³); defaults to the enclosed volume of the rest mesh.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
}

impl SceneConfig {
    /// Parses TOML text, rejecting unknown keys. Values are not checked.
    pub fn parse(text: &str) -> Result<SceneConfig, SceneError> {
        let de = toml::Deserializer::parse(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        let mut unknown = Vec::new();
        let config: SceneConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| SceneError::Parse(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(SceneError::UnknownKeys(unknown));
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene configs always serialize")
    }
}

/// A validated scene, ready to simulate.
#[derive(Clone, Debug)]
pub struct Scene {
    /// Configuration with every default filled in.
    pub config: SceneConfig,
    pub model: PhysicsModel,
    pub state: SystemState,
    pub sim: SimConfig,
}

/// Parses and validates a scene; mesh files are resolved against `base`.
pub fn load_scene(text: &str, base: &Path) -> Result<Scene, SceneError> {
    build(SceneConfig::parse(text)?, base)
}

/// Reads a scene file; mesh paths are relative to its directory.
pub fn load_scene_file(path: &Path) -> Result<Scene, SceneError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SceneError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    load_scene(&text, path.parent().unwrap_or(Path::new(".")))
}

impl Scene {
    /// Normalized configuration as TOML.
    pub fn dump(&self) -> String {
        self.config.to_toml()
    }

    pub fn simulation(&self) -> Result<Simulation, SimError> {
        Simulation::new(self.model.clone(), self.state.clone(), self.sim)
    }
}

fn finite3(v: [f64; 3], path: &str) -> Result<(), SceneError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(path, format!("{v:?} is not finite")))
    }
}

fn positive(x: f64, path: &str) -> Result<(), SceneError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive, got {x}")))
    }
}

fn non_negative(x: f64, path: &str) -> Result<(), SceneError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be non-negative, got {x}")))
    }
}

fn unique<'a>(names: impl Iterator<Item = &'a str>, path: &str) -> Result<(), SceneError> {
    let mut seen = BTreeSet::new();
    for (i, n) in names.enumerate() {
        if n.is_empty() {
            return Err(invalid(format!("{path}[{i}].name"), "must not be empty"));
        }
        if !seen.insert(n) {
            return Err(invalid(format!("{path}[{i}].name"), format!("duplicate name `{n}`")));
        }
    }
    Ok(())
}

fn check_material(m: &MaterialParams, path: &str) -> Result<(), SceneError> {
    positive(m.density, &format!("{path}.density"))?;
    positive(m.youngs_modulus, &format!("{path}.youngs_modulus"))?;
    if !(m.poisson_ratio > -1.0 && m.poisson_ratio < 0.5) {
        return Err(invalid(format!("{path}.poisson_ratio"), format!("must lie in (-1, 0.5), got {}", m.poisson_ratio)));
    }
    non_negative(m.rayleigh_alpha, &format!("{path}.rayleigh_alpha"))?;
    non_negative(m.rayleigh_beta, &format!("{path}.rayleigh_beta"))
}

fn check_friction(f: &FrictionSpec, path: &str) -> Result<(), SceneError> {
    non_negative(f.mu_d, &format!("{path}.mu_d"))?;
    if let Some(mu_s) = f.mu_s {
        if !(mu_s >= f.mu_d && mu_s.is_finite()) {
            return Err(invalid(format!("{path}.mu_s"), format!("must be at least mu_d ({}), got {mu_s}", f.mu_d)));
        }
    }
    non_negative(f.mu_v, &format!("{path}.mu_v"))?;
    positive(f.epsilon, &format!("{path}.epsilon"))?;
    if let Some(vs) = f.stribeck_velocity {
        positive(vs, &format!("{path}.stribeck_velocity"))?;
    }
    Ok(())
}

fn check_config(c: &SceneConfig) -> Result<(), SceneError> {
    positive(c.duration, "duration")?;
    positive(c.h, "h")?;
    finite3(c.gravity, "gravity")?;
    if c.integrator.friction != FrictionMode::Implicit && !c.integrator.scheme.supports_lagged() {
        return Err(invalid(
            "integrator.friction",
            format!("lagged friction needs scheme be or tr, not {}", c.integrator.scheme),
        ));
    }
    let s = &c.solver;
    positive(s.tolerance_factor, "solver.tolerance_factor")?;
    positive(s.r_tol_rel, "solver.r_tol_rel")?;
    if let Some(r) = s.r_tol_abs {
        positive(r, "solver.r_tol_abs")?;
    }
    if let Some(v) = s.v_tol {
        positive(v, "solver.v_tol")?;
    }
    for (name, x) in [("c1", s.c1), ("sigma", s.sigma), ("rho", s.rho)] {
        if !(x > 0.0 && x < 1.0) {
            return Err(invalid(format!("solver.{name}"), format!("must lie in (0, 1), got {x}")));
        }
    }
    positive(s.phi, "solver.phi")?;
    positive(s.min_alpha, "solver.min_alpha")?;
    if s.max_iterations == 0 {
        return Err(invalid("solver.max_iterations", "must be at least 1"));
    }
    if s.max_krylov_iterations == 0 {
        return Err(invalid("solver.max_krylov_iterations", "must be at least 1"));
    }
    let k = &c.contact;
    positive(k.delta, "contact.delta")?;
    positive(k.kappa_max, "contact.kappa_max")?;
    if let Some(kappa) = k.kappa {
        if !(kappa > 0.0 && kappa <= k.kappa_max) {
            return Err(invalid("contact.kappa", format!("must lie in (0, kappa_max = {}], got {kappa}", k.kappa_max)));
        }
    }
    if !(k.candidate_factor >= 1.0 && k.candidate_factor.is_finite()) {
        return Err(invalid("contact.candidate_factor", format!("must be at least 1, got {}", k.candidate_factor)));
    }
    if c.output.sample_every == 0 {
        return Err(invalid("output.sample_every", "must be at least 1"));
    }
    if c.bodies.is_empty() {
        return Err(invalid("bodies", "a scene needs at least one body"));
    }
    unique(c.bodies.iter().map(|b| b.name.as_str()), "bodies")?;
    for (i, b) in c.bodies.iter().enumerate() {
        let p = format!("bodies[{i}]");
        finite3(b.translation, &format!("{p}.translation"))?;
        finite3(b.rotation_degrees, &format!("{p}.rotation_degrees"))?;
        finite3(b.velocity, &format!("{p}.velocity"))?;
        finite3(b.angular_velocity, &format!("{p}.angular_velocity"))?;
        check_material(&b.material, &format!("{p}.material"))?;
        match &b.mesh {
            MeshSpec::File(_) => {}
            MeshSpec::Tet { edge } => positive(*edge, &format!("{p}.mesh.tet.edge"))?,
            MeshSpec::Box { size, cells } => {
                for k in 0..3 {
                    positive(size[k], &format!("{p}.mesh.box.size"))?;
                    if cells[k] == 0 {
                        return Err(invalid(format!("{p}.mesh.box.cells"), "every count must be at least 1"));
                    }
                }
            }
            MeshSpec::HollowSphere { inner, outer, subdivisions, layers } => {
                positive(*inner, &format!("{p}.mesh.hollow-sphere.inner"))?;
                if !(outer > inner && outer.is_finite()) {
                    return Err(invalid(format!("{p}.mesh.hollow-sphere.outer"), format!("must exceed inner ({inner}), got {outer}")));
                }
                if *subdivisions > 5 {
                    return Err(invalid(format!("{p}.mesh.hollow-sphere.subdivisions"), "at most 5 levels are supported"));
                }
                if *layers == 0 {
                    return Err(invalid(format!("{p}.mesh.hollow-sphere.layers"), "must be at least 1"));
                }
            }
        }
    }
    unique(c.obstacles.iter().map(|o| o.name.as_str()), "obstacles")?;
    for (i, o) in c.obstacles.iter().enumerate() {
        let p = format!("obstacles[{i}]");
        match o.shape {
            ShapeSpec::HalfSpace { point, normal } => {
                finite3(point, &format!("{p}.shape.half-space.point"))?;
                finite3(normal, &format!("{p}.shape.half-space.normal"))?;
                if linalg::norm(normal) == 0.0 {
                    return Err(invalid(format!("{p}.shape.half-space.normal"), "must be non-zero"));
                }
            }
            ShapeSpec::Sphere { center, radius, .. } => {
                finite3(center, &format!("{p}.shape.sphere.center"))?;
                positive(radius, &format!("{p}.shape.sphere.radius"))?;
            }
        }
        match &o.motion {
            MotionSpec::Static => {}
            MotionSpec::Constant { velocity, angular_velocity, anchor } => {
                finite3(*velocity, &format!("{p}.motion.constant.velocity"))?;
                finite3(*angular_velocity, &format!("{p}.motion.constant.angular_velocity"))?;
                finite3(*anchor, &format!("{p}.motion.constant.anchor"))?;
            }
            MotionSpec::Keyframes(frames) => {
                if frames.is_empty() {
                    return Err(invalid(format!("{p}.motion.keyframes"), "needs at least one keyframe"));
                }
                for (j, f) in frames.iter().enumerate() {
                    finite3(f.translation, &format!("{p}.motion.keyframes[{j}].translation"))?;
                    if !f.time.is_finite() || (j > 0 && f.time <= frames[j - 1].time) {
                        return Err(invalid(format!("{p}.motion.keyframes[{j}].time"), "times must be finite and strictly increasing"));
                    }
                }
            }
        }
        check_friction(&o.friction, &format!("{p}.friction"))?;
    }
    unique(c.volumes.iter().map(|v| v.name.as_str()), "volumes")?;
    for (i, v) in c.volumes.iter().enumerate() {
        let p = format!("volumes[{i}]");
        if !c.bodies.iter().any(|b| b.name == v.body) {
            return Err(invalid(format!("{p}.body"), format!("no body named `{}`", v.body)));
        }
        positive(v.kappa_v_per_atm, &format!("{p}.kappa_v_per_atm"))?;
        positive(v.p0_atm, &format!("{p}.p0_atm"))?;
        if let Some(v0) = v.v0 {
            positive(v0, &format!("{p}.v0"))?;
        }
    }
    Ok(())
}

/// Parses a mesh file's text; `path` is only used in error messages.
pub fn parse_mesh(text: &str, path: &Path) -> Result<TetMesh, SceneError> {
    let mut positions = Vec::new();
    let mut tets = Vec::new();
    let mut groups: Vec<(String, Vec<[usize; 3]>, usize)> = Vec::new();
    let bad = |line: usize, reason: String| SceneError::MeshFormat { path: path.to_path_buf(), line, reason };
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut fields = content.split_whitespace();
        let Some(tag) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        let arity = |k: usize| {
            if rest.len() == k {
                Ok(())
            } else {
                Err(bad(line, format!("`{tag}` takes {k} values, got {}", rest.len())))
            }
        };
        match tag {
            "v" => {
                arity(3)?;
                let mut p = [0.0f64; 3];
                for (k, s) in rest.iter().enumerate() {
                    p[k] = s.parse().map_err(|_| bad(line, format!("`{s}` is not a number")))?;
                }
                if !p.iter().all(|x| x.is_finite()) {
                    return Err(bad(line, "vertex is not finite".into()));
                }
                positions.push(p);
            }
            "t" | "f" => {
                let k = if tag == "t" { 4 } else { 3 };
                arity(k)?;
                let idx: Vec<usize> = rest
                    .iter()
                    .map(|s| s.parse().map_err(|_| bad(line, format!("`{s}` is not a vertex index"))))
                    .collect::<Result<_, _>>()?;
                if tag == "t" {
                    tets.push(([idx[0], idx[1], idx[2], idx[3]], line));
                } else {
                    let Some(group) = groups.last_mut() else {
                        return Err(bad(line, "`f` before any `g`".into()));
                    };
                    group.1.push([idx[0], idx[1], idx[2]]);
                }
            }
            "g" => {
                arity(1)?;
                let name = rest[0];
                if name == "surface" {
                    return Err(bad(line, "group name `surface` is reserved for the boundary".into()));
                }
                if groups.iter().any(|g| g.0 == name) {
                    return Err(bad(line, format!("duplicate group `{name}`")));
                }
                groups.push((name.to_string(), Vec::new(), line));
            }
            other => return Err(bad(line, format!("unknown record `{other}`"))),
        }
    }
    let nv = positions.len();
    if tets.is_empty() {
        return Err(bad(text.lines().count(), "no tetrahedra".into()));
    }
    for (t, line) in &tets {
        if let Some(i) = t.iter().find(|&&i| i >= nv) {
            return Err(bad(*line, format!("vertex index {i} out of range ({nv} vertices)")));
        }
    }
    for (name, tris, line) in &groups {
        if let Some(i) = tris.iter().flatten().find(|&&i| i >= nv) {
            return Err(bad(*line, format!("group `{name}` uses vertex {i}, out of range ({nv} vertices)")));
        }
    }
    let mut mesh = TetMesh::new(positions, tets.into_iter().map(|(t, _)| t).collect());
    for (name, tris, _) in groups {
        mesh.groups.insert(name, tris);
    }
    Ok(mesh)
}

/// Writes a mesh in the format read by [`parse_mesh`]. The `"surface"` group is implied and not written.
pub fn format_mesh(mesh: &TetMesh) -> String {
    let mut out = String::new();
    for p in &mesh.positions {
        let _ = writeln!(out, "v {:e} {:e} {:e}", p[0], p[1], p[2]);
    }
    for t in &mesh.tets {
        let _ = writeln!(out, "t {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    for (name, tris) in mesh.groups.iter().filter(|(k, _)| k.as_str() != "surface") {
        let _ = writeln!(out, "g {name}");
        for t in tris {
            let _ = writeln!(out, "f {} {} {}", t[0], t[1], t[2]);
        }
    }
    out
}

fn body_mesh(spec: &MeshSpec, base: &Path) -> Result<TetMesh, SceneError> {
    Ok(match spec {
        MeshSpec::File(rel) => {
            let path = base.join(rel);
            if !path.is_file() {
                return Err(SceneError::MissingFile(path));
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|e| SceneError::Io { path: path.clone(), message: e.to_string() })?;
            parse_mesh(&text, &path)?
        }
        MeshSpec::Tet { edge } => TetMesh::single_tet(*edge),
        MeshSpec::Box { size, cells } => TetMesh::box_grid(*size, *cells),
        MeshSpec::HollowSphere { inner, outer, subdivisions, layers } => {
            TetMesh::hollow_sphere(*inner, *outer, *subdivisions, *layers)
        }
    })
}

fn obstacle(o: &ObstacleSpec) -> ImplicitObstacle {
    let shape = match o.shape {
        ShapeSpec::HalfSpace { point, normal } => ObstacleShape::HalfSpace { point, normal },
        ShapeSpec::Sphere { center, radius, inside } => ObstacleShape::Sphere { center, radius, inside },
    };
    let motion = match &o.motion {
        MotionSpec::Static => RigidMotion::Static,
        MotionSpec::Constant { velocity, angular_velocity, anchor } => {
            RigidMotion::Constant { velocity: *velocity, angular_velocity: *angular_velocity, anchor: *anchor }
        }
        MotionSpec::Keyframes(frames) => RigidMotion::Keyframes(frames.clone()),
    };
    ImplicitObstacle::new(&o.name, shape, o.friction.params()).with_motion(motion)
}

/// Validates `config`, builds the model and fills in every default.
pub fn build(mut config: SceneConfig, base: &Path) -> Result<Scene, SceneError> {
    check_config(&config)?;
    for o in &mut config.obstacles {
        if let ShapeSpec::HalfSpace { normal, .. } = &mut o.shape {
            *normal = linalg::scale(*normal, 1.0 / linalg::norm(*normal));
        }
        let f = &mut o.friction;
        f.mu_s.get_or_insert(f.mu_d);
        f.stribeck_velocity.get_or_insert(10.0 * f.epsilon);
    }

    let mut bodies = Vec::with_capacity(config.bodies.len());
    for b in &config.bodies {
        let rotation = linalg::rotation_from_vector(b.rotation_degrees.map(f64::to_radians));
        let mesh = body_mesh(&b.mesh, base)?.transformed(&rotation, b.translation);
        bodies.push((b.name.clone(), mesh, b.material));
    }
    let mesh = TetMeshModel::from_bodies(bodies).map_err(|e| invalid("bodies", e.to_string()))?;
    let mut model = PhysicsModel::new(mesh, config.gravity);
    for (i, o) in config.obstacles.iter().enumerate() {
        let o = obstacle(o);
        o.validate().map_err(|e| invalid(format!("obstacles[{i}]"), e.to_string()))?;
        model = model.with_obstacle(o);
    }
    let rest = model.mesh.rest_q();
    for (i, v) in config.volumes.iter_mut().enumerate() {
        let body = model.mesh.body(&v.body).expect("checked above");
        let Some(tris) = body.groups.get(&v.group) else {
            let known: Vec<&str> = body.groups.keys().map(String::as_str).collect();
            return Err(invalid(format!("volumes[{i}].group"), format!("body `{}` has no group `{}` (has {})", v.body, v.group, known.join(", "))));
        };
        let v0 = *v.v0.get_or_insert_with(|| volume::enclosed_volume(tris, &rest));
        let params = VolumePenaltyParams::from_atm(v.model, v.kappa_v_per_atm, v.p0_atm * ATM, v0);
        let region = VolumeRegion::new(&v.name, tris.clone(), params)
            .map_err(|e| invalid(format!("volumes[{i}]"), e.to_string()))?;
        model = model.with_volume(region);
    }

    let mut state = SystemState::at_rest(&model.mesh);
    for (b, spec) in model.mesh.bodies.iter().zip(&config.bodies) {
        let c = model.centroid(&state.q, Some(b.vertices.clone()));
        for i in b.vertices.clone() {
            let r = linalg::sub(state.position(i), c);
            let v = linalg::add(spec.velocity, linalg::cross(spec.angular_velocity, r));
            state.v[3 * i..3 * i + 3].copy_from_slice(&v);
        }
    }

    let contact = &mut config.contact;
    let kappa = *contact.kappa.get_or_insert_with(|| sim::initial_kappa(&model, contact.delta).min(contact.kappa_max));
    let s = &mut config.solver;
    let r_tol_abs = *s.r_tol_abs.get_or_insert_with(|| sim::residual_tolerance(&model, config.h, s.tolerance_factor));
    let v_tol = *s.v_tol.get_or_insert_with(|| sim::velocity_tolerance(&model));
    let solver = SolverConfig {
        kind: s.kind,
        max_iterations: s.max_iterations,
        r_tol_abs,
        r_tol_rel: s.r_tol_rel,
        v_tol,
        c1: s.c1,
        sigma: s.sigma,
        rho: s.rho,
        phi: s.phi,
        max_krylov_iterations: s.max_krylov_iterations,
        min_alpha: s.min_alpha,
    };
    let integrator = IntegratorConfig {
        scheme: config.integrator.scheme,
        friction: config.integrator.friction,
        detail: config.integrator.jacobian,
        solver,
    };
    let penalty = PenaltyParams { delta: contact.delta, kappa, kappa_max: contact.kappa_max };
    let mut sim = SimConfig::new(config.h, config.duration, integrator, penalty);
    sim.candidate_factor = contact.candidate_factor;
    sim.max_kappa_retries = contact.max_kappa_retries;
    sim.sample_every = config.output.sample_every;
    sim.snapshot_every = (config.output.snapshot_every > 0).then_some(config.output.snapshot_every);
    Ok(Scene { config, model, state, sim })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
duration = 0.1
h = 0.01

[[bodies]]
name = "tet"
mesh = { tet = { edge = 0.1 } }
translation = [0.0, 0.01, 0.0]
material = { density = 1000.0, youngs_modulus = 1e5, poisson_ratio = 0.3 }

[[obstacles]]
name = "ground"
shape = { half-space = { point = [0.0, 0.0, 0.0], normal = [0.0, 2.0, 0.0] } }
friction = { mu_d = 0.3 }
"#;

    fn here() -> &'static Path {
        Path::new(".")
    }

    #[test]
    fn minimal_scene_round_trips() {
        let scene = load_scene(MINIMAL, here()).unwrap();
        let dump = scene.dump();
        let again = load_scene(&dump, here()).unwrap();
        assert_eq!(again.dump(), dump);
        assert_eq!(again.config, scene.config);
        assert_eq!(scene.model.mesh.num_vertices(), 4);
        assert_eq!(scene.sim.num_steps(), 10);
    }

    #[test]
    fn defaults_are_filled_in() {
        let scene = load_scene(MINIMAL, here()).unwrap();
        let c = &scene.config;
        assert_eq!(c.gravity, [0.0, -9.8, 0.0]);
        assert_eq!(c.integrator.scheme, Scheme::BackwardEuler);
        assert!(c.contact.kappa.is_some() && c.solver.r_tol_abs.is_some() && c.solver.v_tol.is_some());
        let f = c.obstacles[0].friction;
        assert_eq!(f.mu_s, Some(0.3));
        assert_eq!(f.stribeck_velocity, Some(1e-2));
        assert_eq!(c.obstacles[0].shape, ShapeSpec::HalfSpace { point: [0.0; 3], normal: [0.0, 1.0, 0.0] });
        assert_eq!(scene.sim.integrator.solver.v_tol, 1e-4);
    }

    #[test]
    fn invalid_poisson_ratio_names_the_field() {
        let text = MINIMAL.replace("poisson_ratio = 0.3", "poisson_ratio = 0.6");
        let err = load_scene(&text, here()).unwrap_err();
        assert!(matches!(&err, SceneError::Invalid { path, .. } if path == "bodies[0].material.poisson_ratio"), "{err}");
        assert!(err.to_string().contains("poisson_ratio"));
    }

    #[test]
    fn unknown_keys_are_listed() {
        let text = MINIMAL.replace("h = 0.01", "h = 0.01\nstep_count = 3").replace("mu_d = 0.3", "mu_d = 0.3, mu = 1.0");
        match load_scene(&text, here()).unwrap_err() {
            SceneError::UnknownKeys(keys) => {
                assert_eq!(keys.len(), 2, "{keys:?}");
                assert!(keys.iter().any(|k| k.contains("step_count")));
                assert!(keys.iter().any(|k| k.ends_with("mu")));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unrecognized_enum_values_are_rejected() {
        let text = MINIMAL.replace("h = 0.01", "h = 0.01\n[integrator]\nscheme = \"rk4\"");
        let err = load_scene(&text, here()).unwrap_err();
        assert!(err.to_string().contains("rk4"), "{err}");
        let text = MINIMAL.replace("h = 0.01", "h = 0.01\n[integrator]\nscheme = \"bdf2\"\nfriction = \"lagged:2\"");
        let err = load_scene(&text, here()).unwrap_err();
        assert!(matches!(&err, SceneError::Invalid { path, .. } if path == "integrator.friction"), "{err}");
    }

    #[test]
    fn missing_mesh_file_names_the_path() {
        let text = MINIMAL.replace("{ tet = { edge = 0.1 } }", "{ file = \"no_such_mesh.mesh\" }");
        let err = load_scene(&text, Path::new("/tmp")).unwrap_err();
        assert_eq!(err, SceneError::MissingFile(PathBuf::from("/tmp/no_such_mesh.mesh")));
        assert!(err.to_string().contains("/tmp/no_such_mesh.mesh"));
        assert_eq!(err.category(), "io");
    }

    #[test]
    fn mesh_file_round_trips() {
        let mesh = TetMesh::hollow_sphere(0.5, 1.0, 0, 1);
        let text = format_mesh(&mesh);
        let back = parse_mesh(&text, Path::new("ball.mesh")).unwrap();
        assert_eq!(back.positions, mesh.positions);
        assert_eq!(back.tets, mesh.tets);
        assert_eq!(back.groups, mesh.groups);
    }

    #[test]
    fn mesh_errors_carry_line_numbers() {
        let err = parse_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nt 0 1 2 7\n", Path::new("m.mesh")).unwrap_err();
        assert!(matches!(err, SceneError::MeshFormat { line: 4, .. }), "{err}");
        let err = parse_mesh("v 0 0\n", Path::new("m.mesh")).unwrap_err();
        assert!(matches!(err, SceneError::MeshFormat { line: 1, .. }), "{err}");
    }

    #[test]
    fn spin_is_about_the_body_centre() {
        let text = MINIMAL.replace("translation = [0.0, 0.01, 0.0]", "translation = [0.0, 0.01, 0.0]\nvelocity = [1.0, 0.0, 0.0]\nangular_velocity = [0.0, 0.0, 3.0]");
        let scene = load_scene(&text, here()).unwrap();
        let m = scene.model.mass();
        let total: f64 = m.iter().step_by(3).sum();
        let p: f64 = (0..4).map(|i| m[3 * i] * scene.state.v[3 * i]).sum();
        assert!((p / total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cavity_volume_defaults_to_the_rest_volume() {
        let text = r#"
duration = 0.01
h = 0.01
gravity = [0.0, 0.0, 0.0]

[[bodies]]
name = "ball"
mesh = { hollow-sphere = { inner = 0.04, outer = 0.05, subdivisions = 1, layers = 1 } }
material = { density = 500.0, youngs_modulus = 1e6, poisson_ratio = 0.4 }

[[volumes]]
name = "air"
body = "ball"
group = "cavity"
kappa_v_per_atm = 1.0
"#;
        let scene = load_scene(text, here()).unwrap();
        let v0 = scene.config.volumes[0].v0.unwrap();
        assert!((v0 - scene.model.volumes[0].volume(&scene.state.q)).abs() < 1e-15);
        let bad = text.replace("group = \"cavity\"", "group = \"inside\"");
        let err = load_scene(&bad, here()).unwrap_err();
        assert!(matches!(&err, SceneError::Invalid { path, .. } if path == "volumes[0].group"), "{err}");
    }
}
