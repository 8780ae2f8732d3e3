use std::fs;
use std::path::Path;

use motionatt::eval::{load_checkpoint, save_checkpoint, Checkpoint};
use motionatt::model::{ModelConfig, ModelParams};
use motionatt::numerics::Parameters;
use motionatt::{AttentionKind, Error};
use serde_json::Value;

fn saved(dir: &Path, kind: AttentionKind) -> Checkpoint {
    let mut config = ModelConfig::tiny();
    config.attention.kind = kind;
    let params = ModelParams::init(&config, 11).unwrap();
    let ckpt = Checkpoint {
        config,
        params,
        seed: 11,
        epoch: 4,
    };
    save_checkpoint(&ckpt, dir).unwrap();
    ckpt
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn write_manifest(dir: &Path, v: &Value) {
    fs::write(dir.join("manifest.json"), serde_json::to_vec(v).unwrap()).unwrap();
}

fn load_error(dir: &Path) -> (String, String) {
    match load_checkpoint(dir) {
        Err(Error::Load { param, message }) => (param, message),
        other => panic!("expected a load error, got {other:?}"),
    }
}

#[test]
fn round_trip_is_exact_for_both_variants() {
    for kind in [AttentionKind::Motion, AttentionKind::FrameWise] {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = saved(dir.path(), kind);
        assert_eq!(load_checkpoint(dir.path()).unwrap(), ckpt);
    }
}

#[test]
fn blob_is_little_endian_f64_at_manifest_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = saved(dir.path(), AttentionKind::Motion);
    let blob = fs::read(dir.path().join("params.bin")).unwrap();
    let m = manifest(dir.path());
    let entry = m["params"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["name"] == "query.b1")
        .unwrap();
    let off = entry["offset"].as_u64().unwrap() as usize * 8;
    let first = f64::from_le_bytes(blob[off..off + 8].try_into().unwrap());
    let tensors = ckpt.params.tensors();
    let b1 = &tensors.iter().find(|(n, _)| n == "query.b1").unwrap().1;
    assert_eq!(first.to_bits(), b1.as_slice()[0].to_bits());
}

#[test]
fn truncated_blob_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    saved(dir.path(), AttentionKind::Motion);
    let blob = fs::read(dir.path().join("params.bin")).unwrap();
    fs::write(dir.path().join("params.bin"), &blob[..blob.len() - 3]).unwrap();
    assert_eq!(load_error(dir.path()).0, "blob");
    fs::write(dir.path().join("params.bin"), &blob[..blob.len() - 8]).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn wrong_shape_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    saved(dir.path(), AttentionKind::Motion);
    let mut m = manifest(dir.path());
    let params = m["params"].as_array_mut().unwrap();
    let last = params.last_mut().unwrap();
    let name = last["name"].as_str().unwrap().to_string();
    let shape = last["shape"].as_array().unwrap().clone();
    assert_ne!(shape[0], shape[1]);
    last["shape"] = Value::from(vec![shape[1].clone(), shape[0].clone()]);
    write_manifest(dir.path(), &m);
    let (param, message) = load_error(dir.path());
    assert_eq!(param, name);
    assert!(message.contains("shape"), "{message}");
}

#[test]
fn missing_duplicate_and_unknown_entries_are_named() {
    let dir = tempfile::tempdir().unwrap();
    saved(dir.path(), AttentionKind::Motion);
    let original = manifest(dir.path());

    let mut m = original.clone();
    m["params"][1]["name"] = Value::from("not.a.tensor");
    write_manifest(dir.path(), &m);
    assert_eq!(load_error(dir.path()).0, "not.a.tensor");

    let mut m = original.clone();
    let first = m["params"][0]["name"].clone();
    m["params"][1]["name"] = first.clone();
    write_manifest(dir.path(), &m);
    assert_eq!(load_error(dir.path()).0, first.as_str().unwrap());

    let mut m = original.clone();
    let gap = m["params"][2]["offset"].as_u64().unwrap() + 1;
    m["params"][2]["offset"] = Value::from(gap);
    write_manifest(dir.path(), &m);
    let (param, message) = load_error(dir.path());
    assert_eq!(param, original["params"][2]["name"].as_str().unwrap());
    assert!(message.contains("contiguous"), "{message}");
}

#[test]
fn foreign_format_and_invalid_config_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    saved(dir.path(), AttentionKind::Motion);
    let original = manifest(dir.path());

    let mut m = original.clone();
    m["format"] = Value::from("something-else/2");
    write_manifest(dir.path(), &m);
    assert_eq!(load_error(dir.path()).0, "manifest");

    let mut m = original;
    m["config"]["attention"]["m"] = Value::from(3);
    write_manifest(dir.path(), &m);
    assert_eq!(load_error(dir.path()).0, "config");
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_checkpoint(&dir.path().join("nowhere")).unwrap_err();
    assert!(!matches!(err, Error::Load { .. }), "{err:?}");
}
