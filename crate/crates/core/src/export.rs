//! Trajectory, snapshot and manifest output.
//!
//! A run directory holds:
//!
//! * `trajectory.csv`: one row per sample, columns [`TRAJECTORY_COLUMNS`]
//!   followed by one `volume:<region>` column per volume region. Values are
//!   written with 17 significant digits so they parse back to the same
//!   `f64`; `deepest_gap` is `inf` when the scene has no obstacles.
//! * `frame_000000.obj`, ...: Wavefront meshes with every simulated vertex
//!   and the boundary triangles.
//! * `manifest.json`: normalized scene, crate version, file list, run
//!   summary and the error, if any.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forces::PhysicsModel;
use crate::integrators::StepError;
use crate::scene::Scene;
use crate::sim::{RunSummary, SimError, TrajectorySample};

/// Fixed leading columns of `trajectory.csv`.
pub const TRAJECTORY_COLUMNS: [&str; 13] = [
    "time",
    "centroid_x",
    "centroid_y",
    "centroid_z",
    "kinetic",
    "elastic",
    "penalty",
    "gravity",
    "volume_energy",
    "total_energy",
    "deepest_gap",
    "sliding_speed",
    "kappa",
];

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExportError {
    #[error("{}: {message}", .path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}: {message}", .path.display())]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl ExportError {
    /// Machine-readable error category.
    pub fn category(&self) -> &'static str {
        match self {
            ExportError::Io { .. } => "io",
            ExportError::Format { .. } => "format",
            ExportError::Sim(e) => e.category(),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExportError + '_ {
    move |e| ExportError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// Frame file name for snapshot `frame`.
pub fn snapshot_name(frame: usize) -> String {
    format!("frame_{frame:06}.obj")
}

pub fn trajectory_header(volume_names: &[String]) -> Vec<String> {
    TRAJECTORY_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(volume_names.iter().map(|n| format!("volume:{n}")))
        .collect()
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trajectory_row(s: &TrajectorySample) -> Vec<String> {
    let fixed = [
        s.time,
        s.centroid[0],
        s.centroid[1],
        s.centroid[2],
        s.kinetic,
        s.elastic,
        s.penalty,
        s.gravity,
        s.volume_energy,
        s.total_energy(),
        s.deepest_gap,
        s.sliding_speed,
        s.kappa,
    ];
    fixed.iter().chain(&s.volumes).map(|&x| fmt(x)).collect()
}

/// Streams samples into a CSV file. The header is written on creation, so
/// a run without samples still leaves a valid file.
pub struct TrajectoryWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path, volume_names: &[String]) -> Result<Self, ExportError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = TrajectoryWriter { path: path.to_path_buf(), writer: csv::Writer::from_writer(file) };
        let header = trajectory_header(volume_names);
        out.writer.write_record(&header).map_err(|e| out.csv_err(e))?;
        Ok(out)
    }

    fn csv_err(&self, e: csv::Error) -> ExportError {
        ExportError::Io { path: self.path.clone(), message: e.to_string() }
    }

    pub fn write(&mut self, sample: &TrajectorySample) -> Result<(), ExportError> {
        let row = trajectory_row(sample);
        self.writer.write_record(&row).map_err(|e| self.csv_err(e))
    }

    pub fn finish(mut self) -> Result<(), ExportError> {
        self.writer.flush().map_err(io_err(&self.path))
    }
}

/// Reads a trajectory written by [`TrajectoryWriter`].
pub fn read_trajectory(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), ExportError> {
    let bad = |message: String| ExportError::Format { path: path.to_path_buf(), message };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = reader.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("row {}: `{s}` is not a number", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Writes the configuration `q` of every vertex plus the boundary triangles.
pub fn write_obj(path: &Path, model: &PhysicsModel, q: &[f64]) -> Result<(), ExportError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        for p in q.chunks_exact(3) {
            writeln!(w, "v {} {} {}", fmt(p[0]), fmt(p[1]), fmt(p[2]))?;
        }
        for t in &model.mesh.surface_tris {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

/// Failure recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub category: String,
    pub message: String,
    /// Newton report of the failed solve, when the failure was a solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_report: Option<String>,
}

impl RunFailure {
    pub fn from_sim(e: &SimError) -> Self {
        let solve_report = match e {
            SimError::Step { source: StepError::Solve { report, .. }, .. } => Some(format!("{report:#?}")),
            _ => None,
        };
        RunFailure { category: e.category().to_string(), message: e.to_string(), solve_report }
    }
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    /// Normalized scene as TOML.
    pub scene: String,
    pub trajectory: String,
    pub columns: Vec<String>,
    pub snapshots: Vec<String>,
    pub summary: Option<RunSummary>,
    pub failure: Option<RunFailure>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), ExportError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifests always serialize");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// Runs `scene` and writes the trajectory, snapshots and manifest into `out_dir`.
/// On a simulation failure, everything up to the failing step is kept and the
/// manifest records the failure.
pub fn run_scene(scene: &Scene, out_dir: &Path) -> Result<RunSummary, ExportError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let volume_names: Vec<String> = scene.model.volumes.iter().map(|r| r.name.clone()).collect();
    let mut writer = TrajectoryWriter::create(&out_dir.join(TRAJECTORY_FILE), &volume_names)?;
    let mut manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        scene: scene.dump(),
        trajectory: TRAJECTORY_FILE.to_string(),
        columns: trajectory_header(&volume_names),
        snapshots: Vec::new(),
        summary: None,
        failure: None,
    };
    let mut sim = scene.simulation()?;
    let model = sim.model.clone();
    let mut sample_error: Option<ExportError> = None;
    let mut snapshot_error: Option<ExportError> = None;
    let mut snapshots = Vec::new();
    let result = sim.run(
        |s| {
            if sample_error.is_none() {
                sample_error = writer.write(s).err();
            }
        },
        |frame, state| {
            let name = snapshot_name(frame);
            if snapshot_error.is_none() {
                snapshot_error = write_obj(&out_dir.join(&name), &model, &state.q).err();
            }
            snapshots.push(name);
        },
    );
    writer.finish()?;
    if let Some(e) = sample_error.or(snapshot_error) {
        return Err(e);
    }
    manifest.snapshots = snapshots;
    match result {
        Ok(summary) => {
            manifest.summary = Some(summary.clone());
            write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
            Ok(summary)
        }
        Err(e) => {
            manifest.failure = Some(RunFailure::from_sim(&e));
            write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
            Err(e.into())
        }
    }
}
