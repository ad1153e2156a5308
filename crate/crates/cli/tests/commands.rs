use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use crossdiff_cli::output::sha256_hex;
use crossdiff_cli::{
    emit_plot_script, execute, parse_config, run_command, Command, PlotKind, RunFlags, RunManifest, EXIT_NUMERICAL,
    EXIT_OK, EXIT_VALIDATION,
};

const REFERENCE: &str = include_str!("../../../configs/reference.cfg");

fn flags(dir: &Path) -> RunFlags {
    RunFlags {
        out: Some(dir.to_path_buf()),
        ..RunFlags::default()
    }
}

fn run(cmd: Command, text: &str, flags: &RunFlags) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = execute(cmd, text, flags, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn short(text: &str) -> String {
    text.replace("T = 0.1", "T = 0.02").replace("samples = 100000", "samples = 2000")
}

#[test]
fn check_certifies_all_four_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(Command::Check, &short(REFERENCE), &flags(dir.path()));
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("strong margins"));
    let csv = fs::read_to_string(dir.path().join("certificates.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for (row, kind) in rows.iter().zip(["L1", "L2", "L3", "L4"]) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], kind);
        let relative: f64 = cols[5].parse().unwrap();
        assert!(relative >= -1e-9, "{row}");
    }
    assert!(dir.path().join("noise.csv").is_file());
}

#[test]
fn simulate_at_time_zero_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let text = REFERENCE.replace("T = 0.1", "T = 0");
    let (code, _, err) = run(Command::Simulate, &text, &flags(dir.path()));
    assert_eq!(code, EXIT_OK, "{err}");
    let csv = fs::read_to_string(dir.path().join("monitors.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "t,l2_sq,grad_sq,grad_us_sq,grad_us2_sq,entropy,mass_1,mass_2,min_nodal,us_l2");
}

#[test]
fn dominance_violation_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = REFERENCE.replace("a = 1, 0.5; 0.5, 1", "a = 0.5, 2; 2, 0.5");
    let (code, _, err) = run(Command::Simulate, &text, &flags(dir.path()));
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("strong self-diffusion dominance condition"), "{err}");
    assert!(!dir.path().join("monitors.csv").exists());
}

#[test]
fn parse_errors_are_all_printed() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(Command::Check, "[model]\nn = 2\ns = x\n[grid]\nN = -3\n", &flags(dir.path()));
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("line 5"), "{err}");
}

#[test]
fn failed_paths_exit_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[model]\nn = 1\ns = 3\n[run]\nscheme = transformed\nT = 0.01\npaths = 2\n[initial]\nprofile = cosine\nbase = 0.2\namplitude = 0.2\n";
    let (code, _, err) = run(Command::Simulate, text, &flags(dir.path()));
    assert_eq!(code, EXIT_NUMERICAL, "{err}");
    assert!(dir.path().join("monitors.csv").is_file());
    let (code, _, err) = run(Command::Ensemble, text, &flags(dir.path()));
    assert_eq!(code, EXIT_NUMERICAL);
    assert!(err.contains("truncated"), "{err}");
}

#[test]
fn manifest_checksums_match_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&short(REFERENCE)).unwrap();
    let outcome = run_command(Command::Simulate, &cfg, &flags(dir.path())).unwrap();
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("command = simulate"));
    assert!(manifest.contains("seeds = 42"));
    let files = RunManifest::parse_files(&manifest);
    assert_eq!(files.len(), outcome.files.len() - 1);
    for (name, hash) in files {
        let bytes = fs::read(dir.path().join(&name)).unwrap();
        assert_eq!(sha256_hex(&bytes), hash, "{name}");
    }
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&short(REFERENCE)).unwrap();
    let f = RunFlags {
        seed: Some(7),
        paths: Some(3),
        out: Some(dir.path().to_path_buf()),
        threads: Some(2),
    };
    run_command(Command::Ensemble, &cfg, &f).unwrap();
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seeds = 7..=9"), "{manifest}");
    let csv = fs::read_to_string(dir.path().join("moments.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",3,0"));
    let bad = RunFlags {
        paths: Some(0),
        ..flags(dir.path())
    };
    assert!(run_command(Command::Ensemble, &cfg, &bad).is_err());
}

fn outputs(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), sha256_hex(&fs::read(&p).unwrap())))
        .collect()
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let text = short(REFERENCE).replace("paths = 8", "paths = 6");
    let cfg = parse_config(&text).unwrap();
    for cmd in [Command::Simulate, Command::Ensemble] {
        let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
        for (d, threads) in dirs.iter().zip([Some(1), Some(1), Some(4)]) {
            let f = RunFlags {
                threads,
                ..flags(d.path())
            };
            run_command(cmd, &cfg, &f).unwrap();
        }
        let first = outputs(dirs[0].path());
        assert!(!first.is_empty());
        for d in &dirs[1..] {
            assert_eq!(outputs(d.path()), first, "{}", cmd.name());
        }
    }
}

#[test]
fn converge_writes_refinement_and_uniformity_tables() {
    let dir = tempfile::tempdir().unwrap();
    let text = short(REFERENCE)
        .replace("tau = 1e-3", "tau = 5e-4")
        .replace("paths = 8", "paths = 2")
        .replace("levels = 1e-2, 5e-3\n", "levels = 1e-2, 5e-3, 2.5e-3\n");
    let (code, _, err) = run(Command::Converge, &text, &flags(dir.path()));
    assert_eq!(code, EXIT_OK, "{err}");
    let csv = fs::read_to_string(dir.path().join("refinement.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("level,value,mean_distance,std_error,order"));
    assert_eq!(csv.lines().count(), 4);
    assert!(dir.path().join("plot_refinement.py").is_file());

    let dir = tempfile::tempdir().unwrap();
    let text = text
        .replace("kind = eta", "kind = N")
        .replace("levels = 1e-2, 5e-3, 2.5e-3", "levels = 12, 16");
    let (code, _, err) = run(Command::Converge, &text, &flags(dir.path()));
    assert_eq!(code, EXIT_OK, "{err}");
    let csv = fs::read_to_string(dir.path().join("uniformity.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("N,name,mean,std_error,paths,truncated,ratio"));
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
}

#[test]
fn plot_scripts_reference_columns_and_reject_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_plot_script(&[], PlotKind::Monitors).is_err());
    assert!(emit_plot_script(&[dir.path().join("absent.csv")], PlotKind::Monitors).is_err());

    let cfg = parse_config(&short(REFERENCE)).unwrap();
    run_command(Command::Simulate, &cfg, &flags(dir.path())).unwrap();
    let script = fs::read_to_string(dir.path().join("plot_monitors.py")).unwrap();
    for col in ["\"entropy\"", "\"mass_2\"", "\"min_nodal\"", "\"us_l2\""] {
        assert!(script.contains(col), "{col}");
    }
    let monitors = dir.path().join("monitors.csv");
    assert!(emit_plot_script(&[monitors], PlotKind::Refinement).is_err());
}

#[test]
fn plot_scripts_run_when_python_is_available() {
    let has_matplotlib = Process::new("python3")
        .args(["-c", "import matplotlib"])
        .status()
        .map(|s| s.success())
        .unwrap_or(false);
    if !has_matplotlib {
        eprintln!("matplotlib unavailable; skipping script execution");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&short(REFERENCE)).unwrap();
    run_command(Command::Simulate, &cfg, &flags(dir.path())).unwrap();
    let status = Process::new("python3").arg(dir.path().join("plot_monitors.py")).status().unwrap();
    assert!(status.success());
    assert!(dir.path().join("monitors.png").is_file());
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_crossdiff");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, REFERENCE.replace("T = 0.1", "T = 0")).unwrap();
    let out = dir.path().join("out");
    let status = Process::new(bin)
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "3", "--threads", "1"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(out.join("monitors.csv").is_file());
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seeds = 3"));

    let missing = Process::new(bin).args(["simulate", "--config", "/nonexistent.cfg"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(EXIT_VALIDATION));
}
