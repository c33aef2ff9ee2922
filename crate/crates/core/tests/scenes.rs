use std::path::{Path, PathBuf};

use fricsim::export::{read_trajectory, run_scene, TRAJECTORY_FILE};
use fricsim::linalg::norm_inf;
use fricsim::{load_scene, load_scene_file, Simulation};

fn scene_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

fn shipped() -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(scene_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    out.sort();
    assert!(out.len() >= 5, "{out:?}");
    out
}

#[test]
fn shipped_scenes_dump_stably() {
    for path in shipped() {
        let scene = load_scene_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let dump = scene.dump();
        let again = load_scene(&dump, &scene_dir()).unwrap();
        assert_eq!(again.dump(), dump, "{}", path.display());
    }
}

#[test]
fn shipped_scenes_keep_every_gap_positive() {
    for path in shipped() {
        let scene = load_scene_file(&path).unwrap();
        let mut sim = scene.simulation().unwrap();
        for _ in 0..sim.cfg.num_steps() {
            let info = sim.step().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(info.kappa_retries <= 5, "{}: {} retries", path.display(), info.kappa_retries);
            if let Some((gap, _)) = sim.model.deepest_gap(&sim.state.q, sim.state.t) {
                assert!(gap > 0.0, "{}: gap {gap}", path.display());
            }
        }
    }
}

#[test]
fn trajectory_rows_follow_the_sample_rate() {
    let scene = load_scene_file(&scene_dir().join("incline_slide.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summary = run_scene(&scene, dir.path()).unwrap();
    let (_, rows) = read_trajectory(&dir.path().join(TRAJECTORY_FILE)).unwrap();
    assert_eq!(rows.len(), summary.steps + 1);
    assert!(rows.iter().flatten().all(|x| x.is_finite()));
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
}

const TET: &str = r#"
duration = 0.01
h = 0.01

[[bodies]]
name = "tet"
mesh = { tet = { edge = 0.1 } }
material = { density = 1000.0, youngs_modulus = 1e5, poisson_ratio = 0.3 }
"#;

#[test]
fn free_fall_gains_h_g_in_one_step() {
    let scene = load_scene(TET, Path::new(".")).unwrap();
    let mut sim = scene.simulation().unwrap();
    sim.step().unwrap();
    for i in 0..4 {
        let v = sim.state.velocity(i);
        let want = [0.0, -9.8 * 0.01, 0.0];
        assert!((0..3).all(|k| (v[k] - want[k]).abs() < 1e-14), "{v:?}");
    }
}

#[test]
fn resting_box_comes_to_rest() {
    let scene = load_scene_file(&scene_dir().join("resting_box.toml")).unwrap();
    let v_tol = scene.sim.integrator.solver.v_tol;
    let mut sim: Simulation = scene.simulation().unwrap();
    sim.run(|_| {}, |_, _| {}).unwrap();
    let v = norm_inf(&sim.state.v);
    assert!(v <= v_tol, "{v} > {v_tol}");
    // Static balance: the contact force carries the weight.
    let s = sim.sample().unwrap();
    assert!(s.deepest_gap > 0.0 && s.deepest_gap < scene.sim.penalty.delta);
}

#[test]
fn backward_euler_never_gains_energy_without_contact_or_friction() {
    let text = TET.replace("duration = 0.01", "duration = 0.5").replace(
        "mesh = { tet = { edge = 0.1 } }",
        "mesh = { tet = { edge = 0.1 } }\nvelocity = [0.3, 1.0, 0.0]\nangular_velocity = [0.0, 0.0, 1.0]\nrotation_degrees = [10.0, 20.0, 0.0]",
    );
    let scene = load_scene(&text, Path::new(".")).unwrap();
    let mut sim = scene.simulation().unwrap();
    let mut energies = Vec::new();
    sim.run(|s| energies.push(s.total_energy()), |_, _| {}).unwrap();
    for w in energies.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
    }
}
