use std::path::Path;
use std::process::{Command, Output};

use coda::annotator::read_annotations;
use coda::cli::{EXIT_DATA, EXIT_USAGE};
use coda::synth::{coda_templates, template_database, ClickShape, EventKind, SceneEvent, SceneScript};

fn coda(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coda"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run coda")
}

fn status(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_scene(dir: &Path) {
    let mut script = SceneScript::new(4.0, 96_000.0, 21, 0.01);
    let (label, ici) = coda_templates().into_iter().find(|(l, _)| *l == "5R1").unwrap();
    script.events.push(SceneEvent {
        kind: EventKind::Coda,
        source_id: "whale-1".into(),
        start_time: 0.6,
        ici,
        train: None,
        click: ClickShape::coda(1.5),
        level_db: 25.0,
        type_label: Some(label.into()),
    });
    script.save(dir.join("scene.json")).unwrap();
    std::fs::write(dir.join("db.csv"), template_database(60, 0.01, 2).unwrap().to_csv()).unwrap();
}

#[test]
fn detect_without_model_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = coda(dir.path(), &["detect", "--in", "x.wav", "--out", "a.json"]);
    assert_eq!(status(&out), EXIT_USAGE);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("db.csv"), template_database(20, 0.01, 1).unwrap().to_csv()).unwrap();
    let out = coda(dir.path(), &["train", "--db", "db.csv", "--out", "m.json", "--set", "cluster.nonsense=1"]);
    assert_eq!(status(&out), EXIT_USAGE);
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn corrupt_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path());
    assert_eq!(status(&coda(dir.path(), &["simulate", "--script", "scene.json", "--out", "s.wav", "--truth", "t.json"])), 0);
    std::fs::write(dir.path().join("m.json"), "{\"version\": 1, \"per_W\": ").unwrap();
    let out = coda(dir.path(), &["detect", "--in", "s.wav", "--model", "m.json", "--out", "a.json"]);
    assert_eq!(status(&out), EXIT_DATA);
    assert!(String::from_utf8_lossy(&out.stderr).contains("m.json"));
}

#[test]
fn missing_recording_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path());
    assert_eq!(status(&coda(dir.path(), &["train", "--db", "db.csv", "--out", "m.json"])), 0);
    let out = coda(dir.path(), &["detect", "--in", "absent.wav", "--model", "m.json", "--out", "a.json"]);
    assert_eq!(status(&out), EXIT_DATA);
}

#[test]
fn full_pipeline_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scene(d);
    for args in [
        &["simulate", "--script", "scene.json", "--out", "s.wav", "--truth", "t.json", "--encoding", "pcm16"][..],
        &["train", "--db", "db.csv", "--out", "m.json"],
        &["detect", "--in", "s.wav", "--model", "m.json", "--out", "a.json", "--csv", "a.csv"],
        &["analyze", "--annotations", "a.json", "--out-dir", "stats"],
        &["eval", "--detections", "a.json", "--truth", "t.json", "--out", "roc.csv"],
    ] {
        let out = coda(d, args);
        assert_eq!(status(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["s.wav", "t.json", "m.json", "m.manifest.json", "a.json", "a.csv", "stats/manifest.json", "roc.csv"] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    let doc = read_annotations(d.join("a.json")).unwrap();
    assert_eq!(doc.detections.len(), 1, "{:?}", doc.detections);
    assert_eq!(doc.detections[0].n_clicks(), 5);
    assert_eq!(doc.detections[0].type_label, "5R1");
    assert!(doc.manifest.is_some());
    let roc = std::fs::read_to_string(d.join("roc.csv")).unwrap();
    assert!(roc.lines().next().unwrap().starts_with("rho_d"));
}

#[test]
fn version_names_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let out = coda(dir.path(), &["--version"]);
    assert_eq!(status(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("coda-annotations/1") && text.contains("coda-scene/1"), "{text}");
}
