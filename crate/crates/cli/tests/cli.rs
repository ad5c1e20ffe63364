use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use latent_depth::io;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latent-depth"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

/// Renders the small textured-plane suite into `dir/scenes`.
fn small_scene(dir: &Path) -> PathBuf {
    let cfg = write(
        &dir.join("synth.json"),
        &format!(
            r#"{{"out": {:?}, "benchmark": {{"width": 64, "height": 48, "focal": 50.0}}, "suites": ["textured-plane"]}}"#,
            dir.join("scenes")
        ),
    );
    let out = run(&["synth", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("scenes").join("textured-plane")
}

fn refine_config(dir: &Path) -> PathBuf {
    write(&dir.join("refine.json"), r#"{"latent_grid": [6, 8]}"#)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["refine", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);

    let bad = write(&dir.path().join("bad.json"), r#"{"seeds": 2, "seed": 1}"#);
    assert_eq!(code(&run(&["matrix-model", "--config", s(&bad)])), 2);
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&run(&["matrix-model", "--config", s(&missing)])), 2);
    assert_eq!(code(&run(&["matrix-model", "--seeds", "0"])), 2);

    let scene = dir.path().join("absent-scene");
    let out = dir.path().join("out");
    assert_eq!(code(&run(&["refine", "--scene", s(&scene), "--out", s(&out)])), 3);
    assert_eq!(code(&run(&["synth", "--suite", "no-such-suite", "--out", s(&out)])), 2);
}

#[test]
fn matrix_model_writes_one_row_per_configuration() {
    let out = run(&["matrix-model", "--seeds", "1", "--latent-dim", "0"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# matrix-model v1\n"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 3);
    let configs: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(configs, ["10d-no-z", "13d-no-z", "10+0d-with-z"]);
    // without latent variables the with-z model is the 10D model
    assert_eq!(rows[0][4..], rows[2][4..]);
}

#[test]
fn refine_without_iterations_writes_the_prior() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let out = dir.path().join("refined");
    let cfg = refine_config(dir.path());
    let res = run(&[
        "refine", "--config", s(&cfg), "--scene", s(&scene), "--out", s(&out), "--max-iters", "0", "--export-masks",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["codes.json", "trace.csv", "metrics.csv", "summary.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    assert!(out.join("masks").join("0000_0001_combined.pgm").is_file());
    // z = 0 decodes to the mean map, ρ = 0.5, so every depth equals α
    for id in 0..3 {
        let gt = io::read_pfm(&scene.join(format!("depth/{id:04}.pfm"))).unwrap();
        let pred = io::read_pfm(&out.join(format!("depth/{id:04}.pfm"))).unwrap();
        let alpha = gt.mean().unwrap();
        for d in pred.depth.as_slice() {
            assert!((d - alpha).abs() <= 1e-6 * alpha, "{d} vs {alpha}");
        }
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], 0);
}

#[test]
fn refine_without_ground_truth_needs_an_alpha_and_skips_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    std::fs::remove_dir_all(scene.join("depth")).unwrap();
    let out = dir.path().join("refined");
    let cfg = refine_config(dir.path());
    let base = ["refine", "--config", s(&cfg), "--scene", s(&scene), "--out", s(&out), "--max-iters", "3"];
    assert_eq!(code(&run(&base)), 2);

    let mut args = base.to_vec();
    args.extend(["--initial-alpha", "5.5"]);
    let res = run(&args);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("depth/0001.pfm").is_file());
    assert!(!out.join("metrics.csv").exists());
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("# loss-trace v1\n"));
    assert!(csv_rows(&trace).len() >= 2);
}

#[test]
fn eval_scores_ground_truth_and_scaled_copies() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let res = run(&["eval", "--pred", s(&scene), "--gt", s(&scene)]);
    assert_eq!(code(&res), 0);
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.starts_with("# depth-metrics v1\n"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3][0], "mean");
    for r in &rows {
        let v: Vec<f64> = r[1..8].iter().map(|x| x.parse().unwrap()).collect();
        assert_eq!(&v[..4], &[0.0; 4]);
        assert_eq!(&v[4..], &[1.0; 3]);
    }

    let doubled = dir.path().join("doubled");
    std::fs::create_dir_all(&doubled).unwrap();
    for id in 0..3 {
        let gt = io::read_pfm(&scene.join(format!("depth/{id:04}.pfm"))).unwrap();
        io::write_pfm(&doubled.join(format!("{id:04}.pfm")), &gt.scaled(2.0)).unwrap();
    }
    let plain = csv_rows(&String::from_utf8(run(&["eval", "--pred", s(&doubled), "--gt", s(&scene)]).stdout).unwrap());
    let abs_rel: f64 = plain[3][2].parse().unwrap();
    assert!((abs_rel - 1.0).abs() < 1e-6, "{abs_rel}");

    let csv = dir.path().join("eval.csv");
    let res = run(&["eval", "--pred", s(&doubled), "--gt", s(&scene), "--median-scale", "--out", s(&csv)]);
    assert_eq!(code(&res), 0);
    let rows = csv_rows(&std::fs::read_to_string(&csv).unwrap());
    for r in &rows {
        let rmse: f64 = r[1].parse().unwrap();
        let scale: f64 = r[8].parse().unwrap();
        assert!(rmse < 1e-5, "{rmse}");
        assert!((scale - 0.5).abs() < 1e-6);
    }

    std::fs::remove_file(scene.join("depth/0001.pfm")).unwrap();
    assert_eq!(code(&run(&["eval", "--pred", s(&doubled), "--gt", s(&scene)])), 3);
}

#[test]
fn covis_lists_one_set_per_reference() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let res = run(&["covis", "--scene", s(&scene), "--set-size", "2"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let lines: Vec<serde_json::Value> = String::from_utf8(res.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    for (id, set) in lines.iter().enumerate() {
        let members = set["members"].as_array().unwrap();
        assert_eq!(members.len(), 2);
        assert_eq!(members[0], id);
    }
}

#[test]
fn fit_basis_round_trips_through_refine() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let basis = dir.path().join("basis.bin");
    let res = run(&[
        "fit-basis", "--mode", "fitted", "--latent-dim", "2", "--train", s(&scene), "--out", s(&basis),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let b = io::read_basis(&basis).unwrap();
    assert_eq!(b.latent_dim(), 2);
    let out = dir.path().join("refined");
    let res = run(&[
        "refine", "--scene", s(&scene), "--basis", s(&basis), "--out", s(&out), "--max-iters", "2",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let codes: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("codes.json")).unwrap()).unwrap();
    for z in codes["z"].as_array().unwrap() {
        assert_eq!(z.as_array().unwrap().len(), 2);
    }
}
