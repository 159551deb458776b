//! End-to-end command tests: exit codes, artifact layout, determinism of
//! summaries, and the structured error paths.

use std::path::{Path, PathBuf};
use std::process::Command;

fn donn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_donn"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

/// Base config without `method` or `data.source`, so tests can choose both.
fn base_config(out: &Path) -> String {
    format!(
        "precision = f64\n\
         seed = 5\n\
         out_dir = {}\n\
         optics.grid_size = 16\n\
         optics.distance_m = 0.05\n\
         optics.pixel_pitch_um = 36\n\
         train.layers = 1\n\
         train.epochs = 1\n\
         train.batch_size = 16\n\
         schedule.kind = static\n\
         schedule.tau = 5\n",
        out.display()
    )
}

fn tiny_config(out: &Path, extra: &str) -> String {
    format!(
        "{}method = gs\n\
         data.source = synth\n\
         data.synth_train = 32\n\
         data.synth_test = 16\n\
         {extra}",
        base_config(out)
    )
}

fn tiny_float_config(out: &Path, param: &str) -> String {
    format!(
        "{}method = float\n\
         float.param = {param}\n\
         data.source = synth\n\
         data.synth_train = 32\n\
         data.synth_test = 16\n",
        base_config(out)
    )
}

#[test]
fn train_writes_checkpoints_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "t.cfg", &tiny_config(&out, ""));
    let status = donn().args(["train", "--config"]).arg(&cfg).status().unwrap();
    assert!(status.success());
    assert!(out.join("checkpoint_epoch_0000.donn").exists());
    assert!(out.join("checkpoint_final.donn").exists());
    assert!(out.join("loss_curve.csv").exists());
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("digest ="));
    assert!(summary.contains("test_acc ="));
}

#[test]
fn identical_runs_have_identical_summaries_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    // identical config content except the out dir, which is not hashed into
    // the artifacts themselves
    for out in [&out_a, &out_b] {
        let cfg = write_config(dir.path(), "same.cfg", &tiny_config(&PathBuf::from("unused"), ""));
        let status = donn()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let sa = std::fs::read(out_a.join("summary.txt")).unwrap();
    let sb = std::fs::read(out_b.join("summary.txt")).unwrap();
    assert_eq!(sa, sb);
    let ca = std::fs::read(out_a.join("loss_curve.csv")).unwrap();
    let cb = std::fs::read(out_b.join("loss_curve.csv")).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn zero_epochs_produces_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "t.cfg", &tiny_config(&out, ""));
    let status = donn()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--epochs", "0"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("checkpoint_final.donn").exists());
}

#[test]
fn missing_device_csv_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        "t.cfg",
        &tiny_config(&out, "device.table = /nonexistent/dev.csv\n"),
    );
    let output = donn().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("/nonexistent/dev.csv"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "t.cfg", &tiny_config(&out, "optics.typo = 3\n"));
    let output = donn().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("optics.typo"));
}

#[test]
fn eval_confidence_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "t.cfg", &tiny_config(&out, ""));
    assert!(donn().args(["train", "--config"]).arg(&cfg).status().unwrap().success());

    let eval_out = dir.path().join("eval");
    let output = donn()
        .args(["eval", "--checkpoint"])
        .arg(out.join("checkpoint_final.donn"))
        .args(["--config"])
        .arg(&cfg)
        .args(["--confidence", "--histogram", "--dump-sample", "0", "--out"])
        .arg(&eval_out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("accuracy "), "stdout: {stdout}");

    let conf = std::fs::read_to_string(eval_out.join("confidence.csv")).unwrap();
    for eps in ["0,", "0.01,", "0.03,", "0.05,"] {
        assert!(conf.contains(&format!(",{eps}")), "missing eps {eps}: {conf}");
    }
    assert!(eval_out.join("hist_layer0.csv").exists());
    // one layer: input + 1 stage + detector plane
    for i in 0..3 {
        assert!(eval_out.join(format!("prop_plane{i}.pgm")).exists());
        assert!(eval_out.join(format!("prop_plane{i}.csv")).exists());
    }
    assert!(!eval_out.join("prop_plane3.pgm").exists());
}

#[test]
fn eval_bad_checkpoint_magic_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "t.cfg", &tiny_config(&out, ""));
    let bad = dir.path().join("bad.donn");
    std::fs::write(&bad, b"NOTACKPTxxxxxxxxxxxxxxxx").unwrap();
    let output = donn()
        .args(["eval", "--checkpoint"])
        .arg(&bad)
        .args(["--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn quantize_wsq_reports_both_accuracies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("float");
    let cfg = write_config(
        dir.path(),
        "f.cfg",
        &tiny_float_config(&out, "phase"),
    );
    assert!(donn().args(["train", "--config"]).arg(&cfg).status().unwrap().success());

    let qout = dir.path().join("wsq");
    let output = donn()
        .args(["quantize", "--checkpoint"])
        .arg(out.join("checkpoint_final.donn"))
        .args(["--config"])
        .arg(&cfg)
        .args(["--method", "wsq", "--kmeans-k", "4", "--out"])
        .arg(&qout)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let comparison = std::fs::read_to_string(qout.join("comparison.csv")).unwrap();
    assert!(comparison.contains("wsq_nopost,"), "{comparison}");
    assert!(comparison.lines().any(|l| l.starts_with("wsq,")), "{comparison}");
    assert!(qout.join("quantized.donn").exists());
}

#[test]
fn ptq_on_phase_model_is_a_structured_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("float");
    let cfg = write_config(
        dir.path(),
        "f.cfg",
        &tiny_float_config(&out, "phase"),
    );
    assert!(donn().args(["train", "--config"]).arg(&cfg).status().unwrap().success());
    let output = donn()
        .args(["quantize", "--checkpoint"])
        .arg(out.join("checkpoint_final.donn"))
        .args(["--config"])
        .arg(&cfg)
        .args(["--method", "ptq", "--out"])
        .arg(dir.path().join("q"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("voltage"));
}

#[test]
fn quantize_ptq_and_qat_from_voltage_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("float");
    let cfg = write_config(
        dir.path(),
        "f.cfg",
        &tiny_float_config(&out, "voltage"),
    );
    assert!(donn().args(["train", "--config"]).arg(&cfg).status().unwrap().success());

    for (method, extra) in [("ptq", vec![]), ("qat", vec!["--quantize-every", "32"])] {
        let qout = dir.path().join(method);
        let mut cmd = donn();
        cmd.args(["quantize", "--checkpoint"])
            .arg(out.join("checkpoint_final.donn"))
            .args(["--config"])
            .arg(&cfg)
            .args(["--method", method, "--out"])
            .arg(&qout);
        for a in extra {
            cmd.arg(a);
        }
        let output = cmd.output().unwrap();
        assert!(
            output.status.success(),
            "{method}: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        assert!(qout.join("quantized.donn").exists());
        let comparison = std::fs::read_to_string(qout.join("comparison.csv")).unwrap();
        assert!(comparison.lines().any(|l| l.starts_with(method)));
    }
}

#[test]
fn gradcheck_pass_fail_and_size_cap() {
    let ok = donn()
        .args(["gradcheck", "--size", "8", "--layers", "1", "--levels", "3", "--batch", "1"])
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("max_rel_error"));

    let corrupted = donn()
        .args(["gradcheck", "--size", "8", "--layers", "1", "--levels", "3", "--batch", "1", "--corrupt-vjp"])
        .output()
        .unwrap();
    assert_eq!(corrupted.status.code(), Some(1));

    let refused = donn().args(["gradcheck", "--size", "64"]).output().unwrap();
    assert_eq!(refused.status.code(), Some(1));
}

#[test]
fn export_device_levels() {
    let dir = tempfile::tempdir().unwrap();
    for levels in [8usize, 12, 16] {
        let path = dir.path().join(format!("dev{levels}.csv"));
        let status = donn()
            .args(["export-device", "--levels", &levels.to_string(), "--out"])
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success());
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), levels + 1); // header + rows
    }
    let bad = donn()
        .args(["export-device", "--levels", "9", "--out", "/tmp/na.csv"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn data_dir_env_fallback_is_reported_when_missing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        "idx.cfg",
        &format!("{}method = gs\ndata.source = idx\n", base_config(&out)),
    );
    let output = donn()
        .args(["train", "--config"])
        .arg(&cfg)
        .env_remove("DONN_DATA_DIR")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("DONN_DATA_DIR"));
}
