use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn volsal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volsal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = volsal(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Relative path to file contents, for every file below `root`.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn make_synthetic_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["make-synthetic", "--seed", "7", "--output", s(d.path()), "--shadow-count", "2", "--per-class", "1"]);
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.contains_key("room/manifest.txt"));
    assert!(ta.contains_key("classes/train.txt"));
    assert!(ta.contains_key("room.toml"));
    assert_eq!(ta, tb);
}

#[test]
fn evaluate_identical_dirs_is_ideal() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["make-synthetic", "--output", s(dir.path()), "--shadow-count", "2", "--per-class", "1"]);
    let gt = dir.path().join("shadow/gt");
    let out = dir.path().join("eval");
    ok(&["evaluate", "--pred", s(&gt), "--gt", s(&gt), "--output", s(&out)]);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "id,F,E,S,MAE");
    assert_eq!(lines.len(), 4);
    for row in &lines[1..] {
        assert!(row.ends_with(",1.000000,1.000000,1.000000,0.000000"), "{row}");
    }
}

#[test]
fn evaluate_missing_prediction_is_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["make-synthetic", "--output", s(dir.path()), "--shadow-count", "2", "--per-class", "1"]);
    let gt = dir.path().join("shadow/gt");
    let pred = dir.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::copy(gt.join("shadow_00.png"), pred.join("shadow_00.png")).unwrap();
    let out = volsal(&["evaluate", "--pred", s(&pred), "--gt", s(&gt), "--output", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[saliency]\ntau = 3.0\n").unwrap();
    assert_eq!(volsal(&["run", "--config", s(&bad)]).status.code(), Some(2));
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(volsal(&["run", "--config", s(&bad)]).status.code(), Some(2));
    assert_eq!(volsal(&["run"]).status.code(), Some(2));
    let missing = dir.path().join("missing.txt");
    assert_eq!(volsal(&["run", "--manifest", s(&missing)]).status.code(), Some(2));
    assert_eq!(volsal(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn print_config_round_trips() {
    let out = ok(&["print-config"]);
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.txt");
    std::fs::write(&manifest, "").unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, &out.stdout).unwrap();
    ok(&["run", "--config", s(&cfg), "--manifest", s(&manifest), "--output", s(&dir.path().join("o"))]);
}

#[test]
fn empty_manifest_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.txt");
    std::fs::write(&manifest, "# nothing\n").unwrap();
    let out = dir.path().join("out");
    ok(&["run", "--manifest", s(&manifest), "--output", s(&out)]);
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["images"].as_array().unwrap().len(), 0);
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn unreadable_image_is_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["make-synthetic", "--output", s(dir.path()), "--shadow-count", "1", "--per-class", "1"]);
    let manifest = dir.path().join("mixed.txt");
    std::fs::write(&manifest, "room/rgb/room.png, room/depth/room.png, room/gt/room.png\nnope.png, nope.png\n").unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("room.toml");
    let res = volsal(&["run", "--config", s(&cfg), "--manifest", s(&manifest), "--output", s(&out)]);
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stderr));
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["images"].as_array().unwrap().len(), 2);
    assert!(out.join("room/mask.png").is_file());
}

#[test]
fn room_end_to_end_and_staged_equals_monolithic() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["make-synthetic", "--output", s(dir.path()), "--shadow-count", "1", "--per-class", "1"]);
    let cfg = dir.path().join("room.toml");
    let full = dir.path().join("full");
    let again = dir.path().join("again");
    let staged = dir.path().join("staged");
    for out in [&full, &again] {
        ok(&["run", "--config", s(&cfg), "--output", s(out)]);
    }
    let csv = std::fs::read_to_string(full.join("metrics.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with("room,1.000000,"), "{row}");

    ok(&["segment", "--config", s(&cfg), "--output", s(&staged)]);
    assert!(staged.join("room/segments.raw").is_file());
    assert!(!staged.join("room/mask.png").exists());
    ok(&["saliency", "--config", s(&cfg), "--output", s(&staged)]);

    let (tf, ta, ts) = (tree(&full), tree(&again), tree(&staged));
    assert_eq!(tf.keys().collect::<Vec<_>>(), ta.keys().collect::<Vec<_>>());
    for (name, bytes) in &tf {
        if name != "run.json" {
            assert!(ta[name] == *bytes, "{name} differs between reruns");
        }
    }
    // run.json records the output directory, and nothing else may differ
    let (mut rf, mut ra) = (read_json(&full.join("run.json")), read_json(&again.join("run.json")));
    rf["config"]["output"] = serde_json::Value::Null;
    ra["config"]["output"] = serde_json::Value::Null;
    assert_eq!(rf, ra);
    for (name, bytes) in &tf {
        if name.starts_with("room/") {
            assert!(ts.get(name) == Some(bytes), "{name} differs between staged and monolithic runs");
        }
    }
    assert!(tf["metrics.csv"] == ts["metrics.csv"]);
}

#[test]
fn classify_scenes_writes_report_and_model() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["make-synthetic", "--output", s(dir.path()), "--shadow-count", "1", "--per-class", "2"]);
    let report = dir.path().join("report.json");
    let model = dir.path().join("model.bin");
    let classes = dir.path().join("classes");
    ok(&[
        "classify-scenes",
        "--train",
        s(&classes.join("train.txt")),
        "--test",
        s(&classes.join("train.txt")),
        "--vocabulary",
        "20",
        "--report",
        s(&report),
        "--model",
        s(&model),
    ]);
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("\"test_view\": \"full\""));
    assert!(text.contains("\"accuracy\": 1.0"), "{text}");
    assert_eq!(&std::fs::read(&model).unwrap()[..4], b"VSSM");
    let res = volsal(&["classify-scenes", "--train", s(&classes.join("train.txt")), "--test", s(&classes.join("test.txt")), "--view", "summaries"]);
    assert_eq!(res.status.code(), Some(2));
}
