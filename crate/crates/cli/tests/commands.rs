use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn objdepth(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objdepth"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, toml: &str) {
    std::fs::write(dir.join("cfg.toml"), toml).unwrap();
    let o = objdepth(&["synth", "--config", "cfg.toml", "--out", "run"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn oracle_pair_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "seed = 1\nn_frames = 30\n");
    let o = objdepth(
        &[
            "evaluate",
            "run.gt.jsonl",
            "run.pred.jsonl",
            "--out",
            "r.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("fitness     1.0000"), "{out}");
    assert!(!out.contains('{'), "JSON must not go to stdout");
    let r = report(dir.path(), "r.json");
    assert_eq!(r["results"]["fitness"], 1.0);
    assert_eq!(r["results"]["map_2d"], 1.0);
    assert_eq!(r["results"]["male_m"], 0.0);
    assert_eq!(r["config"]["decode"]["mode"], "continuous");
}

#[test]
fn report_reproduces_itself() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "seed = 9\nn_frames = 40\nbox_jitter_px = 4.0\nfp_rate_per_frame = 0.5\n\
         [prediction]\nkind = \"binned\"\nsoftness_m = 60.0\nbeta = 3.0\n",
    );
    let first = objdepth(
        &[
            "evaluate",
            "run.gt.jsonl",
            "run.pred.jsonl",
            "--decode",
            "interp:maxfit",
            "--out",
            "a.json",
        ],
        dir.path(),
    );
    assert!(first.status.success(), "{}", stderr(&first));
    let again = objdepth(
        &["evaluate", "--from-report", "a.json", "--out", "b.json"],
        dir.path(),
    );
    assert!(again.status.success(), "{}", stderr(&again));
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b);
    assert_eq!(stdout(&first), stdout(&again));
}

#[test]
fn tampered_report_fails_reproduction() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "seed = 2\nn_frames = 10\nbox_jitter_px = 3.0\n");
    assert!(objdepth(
        &[
            "evaluate",
            "run.gt.jsonl",
            "run.pred.jsonl",
            "--out",
            "a.json"
        ],
        dir.path()
    )
    .status
    .success());
    let mut r = report(dir.path(), "a.json");
    r["results"]["map_2d"] = Value::from(0.123);
    std::fs::write(
        dir.path().join("a.json"),
        serde_json::to_string(&r).unwrap(),
    )
    .unwrap();
    let o = objdepth(&["evaluate", "--from-report", "a.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does not reproduce"));
}

#[test]
fn mismatched_bin_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        "[prediction]\nkind = \"binned\"\nsoftness_m = 50.0\nbeta = 3.0\n",
    );
    let o = objdepth(
        &["evaluate", "run.gt.jsonl", "run.pred.jsonl", "--bins", "6"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("line 1"));

    let o = objdepth(
        &[
            "evaluate",
            "run.gt.jsonl",
            "run.pred.jsonl",
            "--decode",
            "continuous",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let o = objdepth(
        &[
            "evaluate",
            "run.gt.jsonl",
            "run.pred.jsonl",
            "--decode",
            "interp:cubic",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let o = objdepth(
        &[
            "evaluate",
            "run.gt.jsonl",
            "run.pred.jsonl",
            "--grid-conf-step",
            "0.3",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_records_name_their_line() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "n_frames = 3\n");
    let gt = std::fs::read_to_string(dir.path().join("run.gt.jsonl")).unwrap();
    let mut lines: Vec<&str> = gt.lines().collect();
    lines.insert(
        1,
        r#"{"frame_id":"x","bbox":[0,0,10],"class":"bird","depth_m":3}"#,
    );
    std::fs::write(dir.path().join("bad.gt.jsonl"), lines.join("\n")).unwrap();
    let o = objdepth(&["evaluate", "bad.gt.jsonl", "run.pred.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 2") && err.contains("bbox"), "{err}");

    let o = objdepth(&["evaluate", "missing.jsonl", "run.pred.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn encode_and_decode() {
    let dir = tempfile::tempdir().unwrap();
    let o = objdepth(
        &["encode", "--transfer", "inverse", "--value", "4"],
        dir.path(),
    );
    assert_eq!(stdout(&o).trim(), "0.25");
    let o = objdepth(
        &[
            "encode",
            "--transfer",
            "relu_like",
            "--value",
            "-10",
            "--direction",
            "decode",
        ],
        dir.path(),
    );
    assert_eq!(stdout(&o).trim(), "0");
    let o = objdepth(
        &["encode", "--transfer", "sigmoid", "--value", "350"],
        dir.path(),
    );
    assert_eq!(stdout(&o).trim(), "0");
    let o = objdepth(
        &["encode", "--transfer", "sigmoid", "--value", "700"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "n_frames = 20\nbox_jitter_px = 2.0\n");
    let o = objdepth(
        &[
            "sweep",
            "run.gt.jsonl",
            "run.pred.jsonl",
            "--grid-conf-step",
            "0.1",
            "--iou-set",
            "0.5,0.75",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_reader(o.stdout.as_slice());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["t_c", "t_iou", "mf1_od", "mf1_de", "f1_comb"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 11 * 2);
    for row in &rows {
        let v: f64 = row[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn loss_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = objdepth(
        &[
            "loss-check",
            "--seed",
            "3",
            "--trials",
            "25",
            "--out",
            "g.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let reports: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 13);
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = "seed = 42\nn_frames = 25\nbox_jitter_px = 5.0\nfp_rate_per_frame = 1.0\n";
    synth(a.path(), cfg);
    synth(b.path(), cfg);
    for f in ["run.gt.jsonl", "run.pred.jsonl"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
}
