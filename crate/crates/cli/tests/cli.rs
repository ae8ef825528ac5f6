use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[stft]
window_length = 512
dft_length = 512
hop = 128
window = "sqrt_hann"
[fit]
iters = 5
kmeans_attempts = 2
"#;

fn record(id: &str, m: usize, seconds: f64) -> String {
    format!(
        r#"{{"id": "{id}", "sources": [{{"synthetic": {{"seconds": {seconds}}}}}, {{"synthetic": {{"seconds": {seconds}}}}}], "rir": {{"synthetic": {{"m": {m}, "n": 2, "rt60": 0.2}}}}, "labels": {{"m": {m}, "n": 2, "rt60": 0.2}}}}"#
    )
}

fn cstmm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cstmm"))
        .current_dir(dir)
        .env_remove("CSTMM_OUTPUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = cstmm(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Temp dir with a small config and a two-record dataset at `ds/`.
fn workspace() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("small.toml"), SMALL).unwrap();
    let manifest = format!("# desk test\n{}\n\n{}\n", record("a", 3, 0.5), record("b", 3, 0.5));
    std::fs::write(d.path().join("m.jsonl"), manifest).unwrap();
    ok(d.path(), &["mix", "--manifest", "m.jsonl", "--out", "ds"]);
    d
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn mix_is_reproducible() {
    let d = workspace();
    ok(d.path(), &["mix", "--manifest", "m.jsonl", "--out", "ds2"]);
    for id in ["a", "b"] {
        for f in ["mixture.wav", "ref0.wav", "ref1.wav", "meta.json"] {
            let x = std::fs::read(d.path().join("ds").join(id).join(f)).unwrap();
            let y = std::fs::read(d.path().join("ds2").join(id).join(f)).unwrap();
            assert_eq!(x, y, "{id}/{f}");
        }
    }
    assert!(d.path().join("ds/dataset.json").exists());
    // a different seed changes the audio
    ok(d.path(), &["mix", "--manifest", "m.jsonl", "--out", "ds3", "--seed", "5"]);
    assert_ne!(std::fs::read(d.path().join("ds/a/mixture.wav")).unwrap(), std::fs::read(d.path().join("ds3/a/mixture.wav")).unwrap());
}

#[test]
fn mix_reports_the_broken_record() {
    let d = tempfile::tempdir().unwrap();
    let bad = r#"{"id": "broken7", "sources": [{"path": "nope.wav"}], "rir": {"synthetic": {"m": 2, "n": 1}}, "labels": {"m": 2, "n": 1, "rt60": 0.3}}"#;
    std::fs::write(d.path().join("m.jsonl"), format!("{}\n{bad}\n", record("fine", 2, 0.3))).unwrap();
    let o = cstmm(d.path(), &["mix", "--manifest", "m.jsonl", "--out", "ds"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("broken7"), "{err}");
}

#[test]
fn separate_writes_sources_and_cacg_matches_nu_m() {
    let d = workspace();
    let p = d.path();
    ok(p, &["separate", "--input", "ds/a/mixture.wav", "--config", "small.toml", "--out", "s1", "--nu", "M", "--masks"]);
    ok(p, &["separate", "--input", "ds/a/mixture.wav", "--config", "small.toml", "--out", "s2", "--model", "cacg"]);
    let names: Vec<_> = files(&p.join("s1")).iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["config.toml", "masks.cstmask", "separation.json", "source_0.wav", "source_1.wav"]);
    for k in 0..2 {
        let f = format!("source_{k}.wav");
        assert_eq!(std::fs::read(p.join("s1").join(&f)).unwrap(), std::fs::read(p.join("s2").join(&f)).unwrap());
    }
    let mask = std::fs::read(p.join("s1/masks.cstmask")).unwrap();
    assert_eq!(&mask[..8], b"CSTMASK1");
    assert_eq!(u32::from_le_bytes(mask[8..12].try_into().unwrap()), 2);

    let csv = ok(p, &["eval", "--estimates", "s1", "--references", "ds/a", "--mixture", "ds/a/mixture.wav"]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "estimate,reference,sdr,input_sdr,sdri");
    assert_eq!(rows.len(), 3);
}

#[test]
fn separate_output_dir_from_environment() {
    let d = workspace();
    let o = Command::new(env!("CARGO_BIN_EXE_cstmm"))
        .current_dir(d.path())
        .env("CSTMM_OUTPUT_DIR", "runs")
        .args(["separate", "--input", "ds/b/mixture.wav", "--config", "small.toml"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("runs/separate/source_1.wav").exists());
}

#[test]
fn separate_missing_input_fails() {
    let d = tempfile::tempdir().unwrap();
    let o = cstmm(d.path(), &["separate", "--input", "absent.wav", "--out", "x"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.wav"));
    assert!(!d.path().join("x").exists());
}

#[test]
fn sweep_pairs_and_reruns_from_snapshot() {
    let d = workspace();
    let p = d.path();
    let out = ok(p, &["sweep", "--config", "small.toml", "--dataset", "ds", "--out", "sw", "--nu-list", "1,M"]);
    assert!(out.contains("delta"), "{out}");
    let cond = std::fs::read_to_string(p.join("sw/conditions.csv")).unwrap();
    assert_eq!(cond.lines().count(), 2, "{cond}");
    assert_eq!(std::fs::read_to_string(p.join("sw/means.csv")).unwrap().lines().count(), 3);

    ok(p, &["sweep", "--config", "sw/config.toml", "--out", "sw2"]);
    assert_eq!(std::fs::read(p.join("sw/report.json")).unwrap(), std::fs::read(p.join("sw2/report.json")).unwrap());

    ok(p, &["plot", "--report", "sw/report.json", "--out", "fig/curve.svg"]);
    let svg = std::fs::read_to_string(p.join("fig/curve.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn sweep_single_arm_reports_means_only() {
    let d = workspace();
    let p = d.path();
    ok(p, &["sweep", "--config", "small.toml", "--dataset", "ds", "--out", "sw", "--nu-list", "1"]);
    let means = std::fs::read_to_string(p.join("sw/means.csv")).unwrap();
    assert_eq!(means.lines().count(), 2);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("sw/report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["paired"].as_array().unwrap().len(), 0);
}

#[test]
fn sweep_without_dataset_fails() {
    let d = tempfile::tempdir().unwrap();
    let o = cstmm(d.path(), &["sweep", "--out", "sw"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataset"));
}

#[test]
fn recover_cacg_arm_is_exact() {
    let d = workspace();
    let p = d.path();
    ok(p, &["recover", "--config", "small.toml", "--dataset", "ds", "--out", "rc"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("rc/report.json")).unwrap()).unwrap();
    let arms = report["report"]["arms"].as_array().unwrap();
    assert_eq!(arms.len(), 3);
    assert_eq!(arms[0]["name"], "cacg");
    assert!(arms[0]["max_mask_diff"].as_f64().unwrap() <= 1e-8);
    assert!(p.join("rc/recovery.csv").exists());
}

#[test]
fn eval_perfect_and_mismatched() {
    let d = workspace();
    let p = d.path();
    std::fs::create_dir(p.join("refs")).unwrap();
    for f in ["ref0.wav", "ref1.wav"] {
        std::fs::copy(p.join("ds/a").join(f), p.join("refs").join(f)).unwrap();
    }
    ok(p, &["eval", "--estimates", "refs", "--references", "refs", "--out", "e.csv"]);
    let csv = std::fs::read_to_string(p.join("e.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let sdr: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!(sdr >= 99.0, "{row}");
    }
    std::fs::remove_file(p.join("refs/ref1.wav")).unwrap();
    let o = cstmm(p, &["eval", "--estimates", "ds/a", "--references", "refs"]);
    assert!(!o.status.success());
}
