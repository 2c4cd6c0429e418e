use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn optma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optma"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes `cfg` with edits applied to a file in `dir`.
fn edited(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(configs().join(name)).unwrap()).unwrap();
    edit(&mut cfg);
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn quick_quadrant(dir: &Path) -> PathBuf {
    edited(dir, "acoustic_quadrant.json", |c| {
        c["mlp"]["max_epochs"] = 2.into();
        c["seeds"] = serde_json::json!([1, 2]);
    })
}

#[test]
fn grad_check_passes_and_lists_every_op() {
    let o = optma(&["grad-check"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    for op in ["cos", "matmul", "monopole_spl_points", "gramacy_pp"] {
        let line = out.lines().find(|l| l.starts_with(op)).unwrap_or_else(|| panic!("{op} missing"));
        assert!(line.contains("max rel err") && line.ends_with("ok"), "{line}");
    }
}

#[test]
fn wrong_cos_adjoint_exits_nonzero() {
    let o = optma(&["grad-check", "--points", "5", "--inject-fault", "cos-adjoint", "--quiet"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cos"));
}

#[test]
fn bad_json_is_a_config_error_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"problem\": \"acoustic\",\n  oops\n}").unwrap();
    for cmd in ["experiment", "gen-data", "train"] {
        let o = optma(&[cmd, "--config", bad.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        assert!(stderr(&o).contains("line 3"), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = optma(&["experiment", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = optma(&["experiment"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn optma_without_physics_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(dir.path(), "acoustic_quadrant.json", |c| {
        c.as_object_mut().unwrap().remove("physics");
    });
    let out = dir.path().join("out");
    let o = optma(&["experiment", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("physics"), "{}", stderr(&o));
    assert!(!out.join("report.json").exists());
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("gen_acoustic.json");
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = optma(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "-q"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(o.stdout.is_empty());
        (fs::read(out.join("acoustic.csv")).unwrap(), fs::read(out.join("acoustic.csv.meta.json")).unwrap())
    };
    let (a, meta_a) = run("a");
    let (b, meta_b) = run("b");
    assert_eq!(a, b);
    assert_eq!(meta_a, meta_b);
    let text = String::from_utf8(a).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("x,")).count();
    assert_eq!(rows, 1728);
    let meta: Value = serde_json::from_slice(&meta_a).unwrap();
    assert!(text.contains(meta["config_hash"].as_str().unwrap()));
}

#[test]
fn seed_flag_changes_generated_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("gen_fp1.json");
    let read = |seed: &str| {
        let out = dir.path().join(seed);
        let o = optma(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success());
        fs::read(out.join("fp1.csv")).unwrap()
    };
    assert_ne!(read("1"), read("2"));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let cfg = configs().join("gen_fp1.json");
    let o = optma(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn experiment_writes_report_and_scatter_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_quadrant(dir.path());
    let run = |sub: &str, jobs: &str| {
        let out = dir.path().join(sub);
        let o = optma(&["experiment", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a", "1");
    let b = run("b", "2");
    for f in ["report.json", "scatter_yz.csv", "scatter_xz.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let report: Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"].as_array().unwrap().len(), 3);
    for seed in report["seeds"].as_array().unwrap() {
        assert_eq!(seed["runs"].as_array().unwrap().len(), 3);
        // the y >= 0, z >= 0 quadrant holds about a quarter of the box
        let train = seed["train_size"].as_f64().unwrap();
        assert!((train - 432.0).abs() <= 43.2, "train size {train}");
        assert_eq!(seed["fit_size"].as_u64().unwrap() + seed["val_size"].as_u64().unwrap(), train as u64);
    }
    let scatter = fs::read_to_string(a.join("scatter_yz.csv")).unwrap();
    assert_eq!(scatter.lines().next(), Some("family,seed,y,z,re"));

    let o = optma(&["report", a.join("report.json").to_str().unwrap(), "--out", dir.path().join("again").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8(o.stdout).unwrap().contains("optma_net"));
    assert_eq!(
        fs::read(a.join("scatter_xz.csv")).unwrap(),
        fs::read(dir.path().join("again/scatter_xz.csv")).unwrap()
    );
}

#[test]
fn train_writes_loadable_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_quadrant(dir.path());
    let out = dir.path().join("t");
    let o = optma(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--family", "optma_net", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck: Value = serde_json::from_slice(&fs::read(out.join("optma_net.checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ck["format"], "optma-checkpoint");
    assert_eq!(ck["spec"]["n_outputs"], 4);
    let runs: Value = serde_json::from_slice(&fs::read(out.join("train.json")).unwrap()).unwrap();
    assert_eq!(runs.as_array().unwrap().len(), 1);

    let o = optma(&["train", "--config", cfg.to_str().unwrap(), "--family", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("r.json");
    fs::write(&f, "[]").unwrap();
    assert_eq!(optma(&["report", f.to_str().unwrap()]).status.code(), Some(2));
}
