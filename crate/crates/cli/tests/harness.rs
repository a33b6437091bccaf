use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Duration;

use safari_cli::experiment::{evaluate_config, Problem};
use safari_cli::report::{manifest_of, read_sweep_csv, MetricsTable};
use safari_cli::{parse_config, run_experiment, run_sweep, ExperimentConfig, SweepAxis};
use safari_core::score::ProcessScoreModel;
use safari_core::{GradientMode, GuidanceConfig, Image, RunTrace, ScoreModel, Seed};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_safari"))
}

fn config_text(task: &str, mode: &str, out: &Path) -> String {
    format!(
        r#"[experiment]
task = "{task}"
dataset = "imagenet-preset"
mode = "{mode}"
seed = 7
steps = 30
sigma = 0.025
output = "{}"
batch = 4

[gallery]
size = 8
image_size = 16
"#,
        out.display()
    )
}

fn config(task: &str, mode: &str, out: &Path) -> ExperimentConfig {
    parse_config(&config_text(task, mode, out), &[]).unwrap()
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn run_writes_the_full_inventory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("inpaint-random", "safari", dir.path());
    let summary = run_experiment(&cfg).unwrap();
    assert_eq!(summary.items.len(), 4);
    let expected: Vec<String> = (0..4).map(|i| format!("item_{i:03}.png")).collect();
    assert_eq!(file_names(&dir.path().join("panels")), expected);
    assert_eq!(file_names(&dir.path().join("restored")), expected);
    assert_eq!(
        file_names(&dir.path().join("traces")),
        (0..4).map(|i| format!("item_{i:03}.csv")).collect::<Vec<_>>()
    );

    let hash = cfg.manifest_hash();
    let metrics_text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(manifest_of(&metrics_text), Some(hash.as_str()));
    let table = MetricsTable::read(metrics_text.as_bytes()).unwrap();
    let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["0", "1", "2", "3", "mean", "std"]);
    assert_eq!(table.rows[4].psnr, summary.psnr_mean);
    for (row, m) in table.rows.iter().zip(&summary.items) {
        assert_eq!((row.psnr, row.ssim), (m.psnr, m.ssim));
    }

    let trace_text = fs::read_to_string(dir.path().join("traces/item_002.csv")).unwrap();
    assert_eq!(manifest_of(&trace_text), Some(hash.as_str()));
    let trace = RunTrace::read_csv(trace_text.as_bytes()).unwrap();
    assert_eq!(trace.records.len(), 30);
    let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains(&hash) && manifest.contains("\"task\": \"inpaint-random\""));

    let panel = safari_core::io::read_image(&dir.path().join("panels/item_000.png")).unwrap();
    assert_eq!((panel.shape().height, panel.shape().width), (16, 48));
}

#[test]
fn unconditional_mode_still_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(&config("deblur-gauss", "unconditional", dir.path())).unwrap();
    assert_eq!(s.items.len(), 4);
    assert!(s.psnr_mean.is_finite() && s.ssim_mean.is_finite());
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg_b = config("sr", "safari", b.path());
    cfg_b.threads = 1;
    run_experiment(&config("sr", "safari", a.path())).unwrap();
    run_experiment(&cfg_b).unwrap();
    for rel in ["metrics.csv", "manifest.json", "traces/item_001.csv", "panels/item_003.png", "restored/item_000.png"] {
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn single_value_sweep_matches_a_plain_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("inpaint-box", "safari", dir.path());
    let plain = evaluate_config(&cfg).unwrap();
    let rows = run_sweep(&cfg, SweepAxis::R0, &[cfg.guidance.r0 as f64]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].psnr_mean, plain.psnr_mean);
    assert_eq!(rows[0].ssim_std, plain.ssim_std);
    assert_eq!(rows[0].manifest, cfg.manifest_hash());
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(read_sweep_csv(text.as_bytes()).unwrap(), rows);
}

#[test]
fn sigma_sweep_has_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("inpaint-random", "safari", dir.path());
    cfg.batch = 2;
    let rows = run_sweep(&cfg, SweepAxis::Sigma, &[0.0, 0.025, 0.05, 0.1]).unwrap();
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), [0.0, 0.025, 0.05, 0.1]);
    let hashes: std::collections::HashSet<_> = rows.iter().map(|r| r.manifest.clone()).collect();
    assert_eq!(hashes.len(), 4);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(&good, config_text("inpaint-box", "dps", &dir.path().join("out"))).unwrap();

    let ok = bin().args(["run", "--config"]).arg(&good).args(["--override", "experiment.batch=1"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("out/metrics.csv").exists());

    let moved = bin()
        .args(["run", "--config"])
        .arg(&good)
        .args(["--seed", "9", "--override", "experiment.batch=1", "--out"])
        .arg(dir.path().join("moved"))
        .output()
        .unwrap();
    assert_eq!(moved.status.code(), Some(0));
    assert!(dir.path().join("moved/metrics.csv").exists());

    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    let out = bin().args(["run", "--config"]).arg(&empty).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("experiment.task") && err.contains("guidance.late.high"), "{err}");

    let typo = dir.path().join("typo.toml");
    fs::write(&typo, config_text("sr", "safari", dir.path()) + "\n[guidance]\nrO = 2\n").unwrap();
    assert_eq!(bin().args(["run", "--config"]).arg(&typo).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().args(["run", "--config"]).arg(dir.path().join("absent.toml")).output().unwrap().status.code(), Some(2));

    let sweep = bin().args(["sweep", "--config"]).arg(&good).args(["--axis", "sr_factor", "--values", "2"]).output().unwrap();
    assert_eq!(sweep.status.code(), Some(2));

    let missing_data = dir.path().join("folder.toml");
    let text = config_text("sr", "safari", dir.path()).replace("imagenet-preset", &dir.path().join("nope").display().to_string())
        + "[guidance]\nr0 = 2\ntau = 0.5\nupsample_factor = 4\ndps_weight = 0.5\n[guidance.early]\nspatial = 0.1\nhigh = 0.1\nlow = 0.1\n[guidance.late]\nspatial = 0.1\nhigh = 0.1\nlow = 0.1\n";
    fs::write(&missing_data, text).unwrap();
    assert_eq!(bin().args(["run", "--config"]).arg(&missing_data).output().unwrap().status.code(), Some(1));
}

#[test]
fn selftest_and_theory_commands_succeed() {
    let out = bin().arg("selftest").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 5 && !text.contains("FAIL"), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["verify-theory", "--instances", "40", "--pairs", "500", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("bound_reports.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
}

#[test]
fn process_backend_matches_in_process_prior() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("serve.toml");
    fs::write(&path, config_text("inpaint-random", "safari", dir.path())).unwrap();
    let cfg = config("inpaint-random", "safari", dir.path());
    let problem = Problem::build(&cfg).unwrap();

    let mut cmd = bin();
    cmd.arg("serve-score").arg("--config").arg(&path);
    let remote = ProcessScoreModel::spawn(cmd, Duration::from_secs(30)).unwrap();
    let mut rng = Seed(3).rng();
    for t in [1, 15, 30] {
        let x = Image::standard_normal(problem.shape, &mut rng);
        let local = problem.prior.score(&x, t, &problem.schedule).unwrap();
        assert_eq!(remote.score(&x, t, &problem.schedule).unwrap(), local);
    }
    assert!(remote.score(&Image::zeros(problem.shape), 31, &problem.schedule).is_err());

    // The adapter has no Jacobian, so guidance falls back to the frozen denoiser.
    let op = problem.degradation(0).unwrap();
    let y = op.measure(&problem.truth(0), safari_core::NoiseModel::new(0.025).unwrap(), Seed(1)).unwrap();
    let frozen = GuidanceConfig {
        gradient_mode: GradientMode::FrozenDenoiser,
        ..cfg.guidance.clone()
    };
    let (a, _) = safari_core::guidance::run(&y, &op, &remote, &frozen, &problem.schedule, Seed(2)).unwrap();
    let (b, _) = safari_core::guidance::run(&y, &op, &problem.prior, &frozen, &problem.schedule, Seed(2)).unwrap();
    assert_eq!(a, b);
    assert!(safari_core::guidance::run(&y, &op, &remote, &cfg.guidance, &problem.schedule, Seed(2)).is_err());
}
