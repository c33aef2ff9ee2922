//! `fricsim` command-line front end.
//!
//! Exit codes: 0 on success, 1 when a simulation fails, 2 for invalid
//! arguments or configuration, 3 for file-system errors. Failures print one
//! JSON object with `category` and `message` on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fricsim::experiments::{block_slide_matrix, BlockSlideOutcome, BlockSlideSetup, BlockSlideVariant};
use fricsim::export::{self, RunFailure};
use fricsim::{load_scene_file, ExportError, SceneError};

#[derive(Parser, Debug)]
#[command(name = "fricsim", version, about = "Implicit FEM simulation with frictional contact")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Random seed. Reserved: every built-in computation is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the block-slide variant matrix (all cores by default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scene file and write trajectory.csv, snapshots and manifest.json.
    Run { config: PathBuf },
    /// Run the sliding-block benchmark over all schemes, friction modes and steps.
    BlockSlide,
    /// Validate a scene file and print its normalized form.
    Check { config: PathBuf },
}

#[derive(Debug)]
enum Failure {
    Scene(SceneError),
    Export(ExportError),
    Io { path: PathBuf, message: String },
}

impl Failure {
    fn category(&self) -> &'static str {
        match self {
            Failure::Scene(e) => e.category(),
            Failure::Export(e) => e.category(),
            Failure::Io { .. } => "io",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Scene(e) => e.to_string(),
            Failure::Export(e) => e.to_string(),
            Failure::Io { path, message } => format!("{}: {message}", path.display()),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.category() {
            "config" => 2,
            "io" | "format" => 3,
            _ => 1,
        }
    }
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn run(config: &Path, out: &Path) -> Result<(), Failure> {
    let scene = load_scene_file(config).map_err(Failure::Scene)?;
    log::info!("{}: {} vertices, {} steps", config.display(), scene.model.mesh.num_vertices(), scene.sim.num_steps());
    match export::run_scene(&scene, out) {
        Ok(summary) => {
            println!(
                "{} steps to t = {}, {} Newton iterations, at most {} stiffness retries per step, smallest gap {:e}",
                summary.steps, summary.final_time, summary.newton_iterations, summary.max_kappa_retries, summary.min_accepted_gap
            );
            println!("wrote {}", out.display());
            Ok(())
        }
        Err(ExportError::Sim(e)) => {
            if let Some(report) = RunFailure::from_sim(&e).solve_report {
                eprintln!("{report}");
            }
            Err(Failure::Export(ExportError::Sim(e)))
        }
        Err(e) => Err(Failure::Export(e)),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |x| format!("{x:.16e}"))
}

fn write_block_slide(outcomes: &[BlockSlideOutcome], out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(io_failure(out))?;
    let json = out.join("block_slide.json");
    let text = serde_json::to_string_pretty(outcomes).expect("outcomes always serialize");
    std::fs::write(&json, text + "\n").map_err(io_failure(&json))?;
    let csv_path = out.join("block_slide.csv");
    let csv_err = |e: csv::Error| Failure::Io { path: csv_path.clone(), message: e.to_string() };
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    w.write_record([
        "scheme",
        "friction",
        "h",
        "stop_distance",
        "stop_time",
        "distance_error",
        "time_error",
        "final_distance",
        "steps",
        "newton_iterations",
        "max_kappa_retries",
        "error",
    ])
    .map_err(csv_err)?;
    for o in outcomes {
        let v = o.variant;
        w.write_record([
            v.scheme.to_string(),
            v.friction.to_string(),
            v.h.to_string(),
            opt(o.stop_distance),
            opt(o.stop_time),
            opt(o.distance_error()),
            opt(o.time_error()),
            format!("{:.16e}", o.final_distance),
            o.steps.to_string(),
            o.newton_iterations.to_string(),
            o.max_kappa_retries.to_string(),
            o.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_failure(&csv_path))
}

fn block_slide(out: &Path, threads: Option<usize>) -> Result<(), Failure> {
    let setup = BlockSlideSetup::default();
    let variants = BlockSlideVariant::matrix();
    let outcomes = block_slide_matrix(&setup, &variants, threads);
    println!("{:<4} {:<10} {:>6} {:>10} {:>9} {:>9} {:>9}  note", "", "friction", "h", "distance", "time", "err x", "err T");
    for o in &outcomes {
        let v = o.variant;
        let pct = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{:+.2}%", 100.0 * x));
        let num = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<4} {:<10} {:>6} {:>10} {:>9} {:>9} {:>9}  {}",
            v.scheme.to_string(),
            v.friction.to_string(),
            v.h,
            num(o.stop_distance),
            num(o.stop_time),
            pct(o.distance_error()),
            pct(o.time_error()),
            o.error.as_deref().unwrap_or(if o.stop_time.is_none() { "did not stop" } else { "" })
        );
    }
    write_block_slide(&outcomes, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    if let Some(seed) = cli.seed {
        log::info!("seed {seed} accepted; no built-in computation is randomized");
    }
    let result = match &cli.command {
        Command::Run { config } => run(config, &cli.out),
        Command::BlockSlide => block_slide(&cli.out, cli.threads),
        Command::Check { config } => load_scene_file(config).map(|s| print!("{}", s.dump())).map_err(Failure::Scene),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let record = serde_json::json!({ "category": f.category(), "message": f.message() });
            eprintln!("{record}");
            ExitCode::from(f.exit_code())
        }
    }
}
