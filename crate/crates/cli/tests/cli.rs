//! Black-box checks of the command-line surface: exit codes, prerequisite
//! guards, the output lock, and plot emission.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;

use thermopose_cli::config::{OutLayout, PipelineConfig, Profile};
use thermopose_cli::plots::emit_plots;
use thermopose_cli::stages::ReportFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thermopose"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("thermopose-cli-{}-{name}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// tiny config so dataset generation is instant
fn mini_config(dir: &PathBuf) -> PathBuf {
    let mut cfg = PipelineConfig::preset(Profile::Toy, 7);
    cfg.phantom.subjects = thermopose::data::SplitSizes { source: 1, thin: 1, thick: 1, test: 1 };
    cfg.phantom.poses_per_subject = 1;
    cfg.phantom.dims = (48, 36);
    let path = dir.join("config.json");
    cfg.save(&path).unwrap();
    path
}

#[test]
fn synth_gen_writes_a_valid_tree() {
    let dir = scratch("synth");
    let cfg = mini_config(&dir);
    let out = dir.join("run");
    let status = bin()
        .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "synth-gen"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("dataset/train_source/src000/image_000000.png").is_file());
    assert!(out.join("dataset/train_source/src000/joints.json").is_file());
    assert!(out.join("dataset/test/tst000/joints.json").is_file());
    assert!(!out.join("dataset/train_thin/thn000/joints.json").exists());
    assert!(out.join("manifests/synth-gen.json").is_file());
    assert!(out.join("config.json").is_file());
    // lock released after the stage
    assert!(!out.join("run.lock").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_prerequisites_exit_with_code_3() {
    let dir = scratch("prereq");
    let cfg = mini_config(&dir);
    let out = dir.join("run");

    // augment before anything exists
    let status = bin()
        .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "augment"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&status.stderr);
    assert!(msg.contains("synth-gen"), "unhelpful message: {msg}");

    // distill without a teacher checkpoint names the missing stage
    let status = bin()
        .args([
            "--config", cfg.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
            "distill", "--teacher", out.join("pose/cycaug_extreme").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&status.stderr);
    assert!(msg.contains("pose-train"), "unhelpful message: {msg}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_config_exits_with_code_2() {
    let dir = scratch("badcfg");
    let path = dir.join("config.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = dir.join("run");
    let status = bin()
        .args(["--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "synth-gen"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn plot_without_reports_exits_with_code_2() {
    let dir = scratch("plot2");
    let cfg = mini_config(&dir);
    let out = dir.join("run");
    let status = bin()
        .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "plot"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn lock_file_blocks_concurrent_stages() {
    let dir = scratch("lock");
    let cfg = mini_config(&dir);
    let out = dir.join("run");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("run.lock"), "held").unwrap();
    let status = bin()
        .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "synth-gen"])
        .output()
        .unwrap();
    assert!(!status.status.success());
    let msg = String::from_utf8_lossy(&status.stderr);
    assert!(msg.contains("locked"), "message: {msg}");
    std::fs::remove_dir_all(&dir).ok();
}

fn fake_report(method: &str, order: usize, base: f64) -> ReportFile {
    ReportFile {
        method: method.into(),
        order,
        backbone: "Hourglass".into(),
        threshold: 0.5,
        aggregate: base,
        per_joint: (0..14).map(|j| (base + j as f64).min(100.0)).collect(),
        per_domain: BTreeMap::from([("thin".to_string(), base + 3.0), ("thick".to_string(), base - 3.0)]),
        n_samples: 36,
        excluded: 0,
        sweep: vec![(0.1, base * 0.4), (0.5, base), (1.0, (base * 1.4).min(100.0)), (2.0, 100.0f64.min(base * 1.8))],
    }
}

#[test]
fn emit_plots_writes_two_files() {
    let dir = scratch("plots");
    let reports = vec![fake_report("source_only", 0, 20.0)];
    let files = emit_plots(&reports, &dir).unwrap();
    assert_eq!(files.len(), 2);
    for f in &files {
        assert!(f.is_file());
        assert!(std::fs::metadata(f).unwrap().len() > 0);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn ablation_table_keeps_method_row_order() {
    let dir = scratch("table");
    let out = dir.join("run");
    let layout = OutLayout::new(&out);
    std::fs::create_dir_all(layout.eval_dir()).unwrap();
    // write reports out of row order
    for (m, o, v) in [("cycaug_extreme", 2, 25.0), ("source_only", 0, 12.0), ("distilled", 3, 26.0), ("cycaug", 1, 30.0)] {
        let r = fake_report(m, o, v);
        std::fs::write(layout.report_json(m), serde_json::to_string(&r).unwrap()).unwrap();
    }
    let reports = thermopose_cli::stages::rebuild_table(&layout).unwrap();
    let methods: Vec<&str> = reports.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["source_only", "cycaug", "cycaug_extreme", "distilled"]);
    let table = std::fs::read_to_string(layout.eval_dir().join("ablation_table.txt")).unwrap();
    let rows: Vec<usize> = ["source_only", "cycaug ", "cycaug_extreme", "distilled"]
        .iter()
        .map(|m| table.find(m).unwrap_or(usize::MAX))
        .collect();
    assert!(rows.windows(2).all(|w| w[0] < w[1]), "table rows out of order:\n{table}");

    // the 4-method series also renders grouped plots in that order
    let files = emit_plots(&reports, &layout.eval_dir()).unwrap();
    assert_eq!(files.len(), 2);
    std::fs::remove_dir_all(&dir).ok();
}
