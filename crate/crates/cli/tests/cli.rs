use std::path::Path;
use std::process::{Command as Proc, Output};

use rfinterp::data::load_mask;
use rfinterp::eval::ExperimentReport;
use rfinterp::phantom::ArrayKind;
use rfinterp_cli::manifest::{hash_file, Manifest};
use rfinterp_cli::{parse_args, Command};

fn rfinterp(dir: &Path, args: &[&str]) -> Output {
    Proc::new(env!("CARGO_BIN_EXE_rfinterp"))
        .current_dir(dir)
        .arg("-q")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_flags_resolve() {
    let (cli, cfg) = parse_args(["rfinterp", "simulate", "--preset", "linear", "--seed", "7", "--out", "a.rfc"]).unwrap();
    assert!(matches!(cli.command, Command::Simulate(_)));
    assert_eq!(cfg.scene.geometry, ArrayKind::Linear);
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.paths.out.as_deref(), Some(Path::new("a.rfc")));
}

#[test]
fn ratio_four_keeps_sixteen_of_sixty_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = rfinterp(dir.path(), &["mask", "--rx", "64", "--sc", "384", "--ratio", "4", "--out", "m.msk"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mask = load_mask(dir.path().join("m.msk")).unwrap();
    assert_eq!(mask.per_column(), 16);
    assert_eq!(mask.count_active(), 16 * 384);
}

#[test]
fn closed_preset_conflict_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = rfinterp(dir.path(), &["train", "--preset", "full", "--conv-layers", "8", "--out", "n.nnp"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("presets are closed"));
    assert!(!dir.path().join("n.nnp").exists());
}

#[test]
fn unknown_command_and_flag_suggest() {
    let dir = tempfile::tempdir().unwrap();
    let o = rfinterp(dir.path(), &["simulte"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("simulate"));
    let o = rfinterp(dir.path(), &["mask", "--ratoi", "4"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--ratio"));
}

#[test]
fn help_exits_zero_per_command() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in [
        "simulate",
        "mask",
        "complete",
        "train",
        "interpolate",
        "beamform",
        "evaluate",
        "universality",
        "framelet-check",
    ] {
        let o = rfinterp(dir.path(), &[cmd, "--help"]);
        assert_eq!(code(&o), 0, "{cmd}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{cmd}");
    }
}

#[test]
fn missing_input_is_a_runtime_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = rfinterp(dir.path(), &["beamform", "--input", "nowhere.rfc", "--out", "b.png"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere.rfc"));
}

#[test]
fn flags_override_config_file_and_unknown_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, "seed = 3\n[mask]\nratio = 2\n[train]\nepochs = 5\n").unwrap();
    let cfg_arg = cfg_path.to_str().unwrap();
    let (_, cfg) = parse_args(["rfinterp", "--config", cfg_arg, "train", "--epochs", "9", "--out", "n"]).unwrap();
    assert_eq!((cfg.seed, cfg.mask.ratio, cfg.train.epochs), (3, 2, 9));
    let (_, cfg) = parse_args(["rfinterp", "--config", cfg_arg, "--seed", "5", "mask", "--out", "m"]).unwrap();
    assert_eq!((cfg.seed, cfg.mask.ratio), (5, 2));

    std::fs::write(&cfg_path, "[mask]\nratio = 2\nsede = 1\n").unwrap();
    let o = rfinterp(dir.path(), &["--config", cfg_arg, "mask", "--out", "m.msk"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("sede"));
}

fn run_ok(dir: &Path, args: &[&str]) {
    let o = rfinterp(dir, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
}

fn pipeline(dir: &Path, force: bool) {
    let f: &[&str] = if force { &["--force"] } else { &[] };
    let steps: [&[&str]; 7] = [
        &["simulate", "--preset", "linear", "--seed", "7", "--out", "a.rfc", "--scene-out", "a.scene"],
        &["mask", "--input", "a.rfc", "--ratio", "4", "--out", "m.msk"],
        &["complete", "--input", "a.rfc", "--mask", "m.msk", "--d", "4", "--iters", "10", "--out", "c.rfc"],
        &[
            "train", "--preset", "toy", "--width", "8", "--epochs", "1", "--lr-start", "0.02", "--lr-end", "0.002",
            "--per-scene", "4", "--out", "n.nnp",
        ],
        &["interpolate", "--model", "n.nnp", "--input", "a.rfc", "--mask", "m.msk", "--out", "i.rfc"],
        &["beamform", "--input", "i.rfc", "--scene", "a.scene", "--out", "i.png", "--raw", "i.img"],
        &["evaluate", "--model", "n.nnp", "--per-scene", "4", "--out", "report"],
    ];
    for step in steps {
        let args: Vec<&str> = f.iter().chain(step.iter()).copied().collect();
        run_ok(dir, &args);
    }
}

const ARTIFACTS: [&str; 9] = [
    "a.rfc",
    "a.scene",
    "m.msk",
    "c.rfc",
    "n.nnp",
    "i.rfc",
    "i.png",
    "i.img",
    "report/report.json",
];

fn hashes(dir: &Path) -> Vec<String> {
    ARTIFACTS.iter().map(|a| hash_file(&dir.join(a)).unwrap()).collect()
}

#[test]
fn toy_pipeline_runs_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d, false);
    let report = ExperimentReport::load(&d.join("report/report.json")).unwrap();
    assert_eq!(report.methods.len(), 3);
    assert!(report.split.is_some());
    assert!(d.join("report/scene0-frame0-cnn.png").exists());
    for a in ARTIFACTS {
        assert!(d.join(format!("{a}.fingerprint.json")).exists(), "{a}");
    }
    let first = hashes(d);

    // unchanged fingerprints: nothing recomputed
    pipeline(d, false);
    let m: Manifest =
        serde_json::from_str(&std::fs::read_to_string(d.join("n.nnp.manifest.json")).unwrap()).unwrap();
    assert!(m.skipped);
    assert_eq!(m.config.seed, 0);

    // forced recomputation reproduces every byte
    pipeline(d, true);
    assert_eq!(hashes(d), first);

    // a different seed changes the fingerprint and the output
    run_ok(d, &["simulate", "--preset", "linear", "--seed", "8", "--out", "a.rfc"]);
    assert_ne!(hash_file(&d.join("a.rfc")).unwrap(), first[0]);
}

#[test]
fn framelet_check_reports_exact_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(d, &["simulate", "--seed", "1", "--out", "a.rfc"]);
    let o = rfinterp(d, &["framelet-check", "--input", "a.rfc", "--d", "8", "--depth", "500"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let last = text.lines().last().unwrap();
    let residual: f64 = last.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(residual < 1e-10, "{last}");
    assert_eq!(text.lines().count(), 2 + 16 + 1);
}
