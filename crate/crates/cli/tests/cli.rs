use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pupil-design"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pupil-design")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse::<f64>().unwrap()))
        .unwrap_or_else(|| panic!("no {key} in output:\n{out}"))
}

fn write_triangle(dir: &Path) -> String {
    let path = dir.join("triangle.txt");
    std::fs::write(&path, "# equilateral triangle\n0 1\n-0.8660254 -0.5\n0.8660254 -0.5\n").unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn asymmetry_of_triangle_hull() {
    let dir = tempfile::tempdir().unwrap();
    let tri = write_triangle(dir.path());
    let o = run(&["asymmetry", "--hull", &tri]);
    assert!(o.status.success());
    let alpha = value(&stdout(&o), "alpha");
    assert!((0.33..=0.35).contains(&alpha), "alpha {alpha}");
}

#[test]
fn property1_slope_is_two() {
    let o = run(&["property1", "--eps", "1e-3:1e-1", "--steps", "10"]);
    assert!(o.status.success());
    let slope = value(&stdout(&o), "slope");
    assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
}

#[test]
fn gen_pupils_writes_verified_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["--seed", "1", "--out", out, "gen-pupils", "--bins", "30", "--per-bin", "5", "--max-samples", "4096"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let counts: Vec<u64> = manifest["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(counts.len(), 30);
    assert!(counts.iter().all(|&c| c <= 5));
    let total: u64 = counts.iter().sum();
    assert_eq!(value(&text, "pupils") as u64, total);
    assert!(text.contains("manifest counts verified"));
    // only the rarest top bins may stay short at this budget
    assert!(counts[..28].iter().all(|&c| c == 5), "{counts:?}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["asymmetry", "--shape", "circle", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["asymmetry"]).status.code(), Some(1));
    assert_eq!(run(&["asymmetry", "--shape", "circle", "--hull", "x.txt"]).status.code(), Some(1));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    for cmd in [
        "gen-pupils", "gen-dataset", "asymmetry", "psf", "retrieve", "trend", "scales", "property1", "search",
        "correct", "slm",
    ] {
        let o = run(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        let text = stdout(&o);
        for flag in ["--config", "--seed", "--out", "--jobs"] {
            assert!(text.contains(flag), "{cmd} help lacks {flag}");
        }
    }
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let o = run(&["asymmetry", "--hull", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("line.txt");
    std::fs::write(&bad, "0 0\n0.1 0.1\n0.2 0.2\n").unwrap();
    assert_eq!(run(&["asymmetry", "--hull", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn config_file_precedence_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 4\nphases_per_pupil = 3\nbins = 3\nper_bin = 1\nalpha_max = 0.3\n").unwrap();
    let out = dir.path().join("trend");
    let o = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "trend",
        "--phases-per-pupil",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run_json["seed"], 4);
    assert_eq!(run_json["config"]["experiment"]["phases_per_pupil"], 2);
    assert_eq!(run_json["config"]["pupil_set"]["bins"], 3);

    std::fs::write(&cfg, "colour = red\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "asymmetry", "--shape", "circle"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seeded_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let outputs: Vec<Vec<u8>> = (0..2)
        .map(|k| {
            let out = dir.path().join(format!("run{k}"));
            let o = run(&[
                "--seed",
                "9",
                "--out",
                out.to_str().unwrap(),
                "trend",
                "--bins",
                "3",
                "--per-bin",
                "2",
                "--alpha-max",
                "0.3",
                "--phases-per-pupil",
                "3",
                "--sigmas",
                "0,0.01",
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read(out.join("trend.csv")).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn psf_retrieve_correct_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let common = ["--shape", "triangle", "--scale", "0.5", "--phase-index", "1"];
    let mut args = vec!["--out", out, "psf"];
    args.extend(common);
    assert!(run(&args).status.success());

    let psf = dir.path().join("psf.f32");
    assert_eq!(std::fs::metadata(&psf).unwrap().len(), 128 * 128 * 4);
    let o = run(&[
        "--out", out, "retrieve", "--psf", psf.to_str().unwrap(), "--shape", "triangle", "--restarts", "2",
        "--max-iters", "200",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(value(&stdout(&o), "residual") < 1e-6);

    let scene = dir.path().join("scene.pgm");
    let img = image::GrayImage::from_fn(64, 64, |x, y| image::Luma([((x * 7 + y * 3) % 256) as u8]));
    img.save(&scene).unwrap();
    let est = dir.path().join("estimate.f32");
    let mut args = vec!["--out", out, "correct", "--image", scene.to_str().unwrap(), "--estimate", est.to_str().unwrap()];
    args.extend(common);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(value(&stdout(&o), "phase_mse") < 1e-6);
    assert!(dir.path().join("aberrated.png").exists());
    assert!(dir.path().join("corrected.png").exists());
}

#[test]
fn search_ranks_triangle_first() {
    let o = run(&["--seed", "5", "search", "--phases", "10"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("best triangle"), "{text}");
}

#[test]
fn slm_and_dataset_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["--out", out, "slm", "--shape", "hexagon", "--scale", "0.3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("slm_psf.f32").exists());

    let ds = dir.path().join("ds");
    let o = run(&[
        "--seed", "2", "--out", ds.to_str().unwrap(), "gen-dataset", "--bins", "3", "--per-bin", "1",
        "--alpha-max", "0.3", "--phases-per-pupil", "2", "--sigmas", "0,0.01",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&stdout(&o), "records"), 12.0);
}

#[test]
fn scales_command_reports_gap_trend() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "--seed", "3", "--out", dir.path().to_str().unwrap(), "scales", "--bins", "3", "--per-bin", "2",
        "--alpha-max", "0.3", "--phases-per-pupil", "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("scales.json").exists());
    assert_eq!(stdout(&o).lines().filter(|l| l.contains(" scale ")).count(), 4);
}
