//! Implicit FEM elastodynamics with smoothed frictional contact.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod contact;
pub mod elasticity;
pub mod export;
pub mod experiments;
pub mod forces;
pub mod friction;
pub mod integrators;
pub mod linalg;
pub mod mesh;
pub mod scene;
mod serde_str;
pub mod sim;
pub mod solvers;
pub mod volume;

pub use contact::{ImplicitObstacle, Keyframe, ObstacleShape, PenaltyParams, RigidMotion};
pub use export::{run_scene, ExportError};
pub use forces::PhysicsModel;
pub use friction::{FrictionMode, FrictionParams, JacobianDetail};
pub use integrators::{IntegratorConfig, Scheme};
pub use mesh::{MaterialParams, SystemState, TetMesh, TetMeshModel};
pub use scene::{load_scene, load_scene_file, Scene, SceneConfig, SceneError};
pub use sim::{RunSummary, SimConfig, SimError, Simulation, TrajectorySample};
pub use solvers::{LinearSolverKind, SolveReport, SolverConfig};
pub use volume::{VolumeModel, VolumePenaltyParams, VolumeRegion};
