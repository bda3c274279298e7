use std::path::PathBuf;
use std::process::Command;

use sentiprobe::embedding::{BackendKind, BackendSpec, Encoder, ExternalEncoder};
use sentiprobe::Error;

const CHILD: &str = r#"
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    text = req["text"]
    if text == "break":
        print(json.dumps({"id": req["id"] + 1, "vector": [0.0, 0.0, 0.0]}), flush=True)
    elif text == "short":
        print(json.dumps({"id": req["id"], "vector": [1.0]}), flush=True)
    else:
        print(json.dumps({"id": req["id"], "vector": [len(text), text.count("a"), 0.5]}), flush=True)
"#;

fn python() -> Option<String> {
    Command::new("python3")
        .arg("--version")
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|_| "python3".to_string())
}

fn script() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("child.py");
    std::fs::write(&path, CHILD).unwrap();
    (dir, path)
}

#[test]
fn line_protocol_round_trip() {
    let Some(py) = python() else {
        eprintln!("python3 not available; skipping");
        return;
    };
    let (_dir, path) = script();
    let enc = ExternalEncoder::spawn(&[py, path.display().to_string()], 3, "<mask>").unwrap();
    assert_eq!(enc.mask_token(), "<mask>");
    assert_eq!(enc.encode("banana").unwrap().as_slice(), &[6.0, 3.0, 0.5]);
    let batch = enc.encode_batch(&["a", "bb"]).unwrap();
    assert_eq!(batch[1].as_slice(), &[2.0, 0.0, 0.5]);
    assert!(enc.encode_batch(&[]).unwrap().is_empty());
}

#[test]
fn protocol_violations_are_reported() {
    let Some(py) = python() else {
        return;
    };
    let (_dir, path) = script();
    let enc = ExternalEncoder::spawn(&[py.clone(), path.display().to_string()], 3, "[MASK]").unwrap();
    assert!(matches!(enc.encode("short"), Err(Error::DimensionMismatch { expected: 3, actual: 1 })));
    assert!(matches!(enc.encode("break"), Err(Error::Transport(_))));

    let err = enc.encode_batch(&["ok", "short"]).unwrap_err();
    assert!(matches!(err, Error::AtIndex { index: 1, .. }), "{err}");
}

#[test]
fn spawn_failure_is_transport_error() {
    let err = ExternalEncoder::spawn(&["/nonexistent/encoder".into()], 3, "[MASK]").err().unwrap();
    assert!(matches!(err, Error::Transport(_)));
}

#[test]
fn backend_spec_builds_external() {
    let Some(py) = python() else {
        return;
    };
    let (_dir, path) = script();
    let mut spec = BackendSpec::synthetic(3, 0);
    spec.kind = BackendKind::External;
    spec.command = Some(vec![py, path.display().to_string()]);
    let enc = spec.build(&[], 0).unwrap();
    assert_eq!(enc.encode("aa").unwrap().as_slice(), &[2.0, 2.0, 0.5]);
}
