use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use motionatt::data::{load_sequence, SyntheticSpec};

fn motionatt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motionatt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_train_predict_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let spec = SyntheticSpec::random_periodic(2, 12, 2, 0.5, 60, 4);
    fs::write(
        root.join("spec.json"),
        serde_json::to_string(&spec).unwrap(),
    )
    .unwrap();
    let data = root.join("data");
    let out = motionatt(&[
        "synth",
        "--spec",
        p(&root.join("spec.json")),
        "--out",
        p(&data),
        "--count",
        "3",
        "--seed",
        "7",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let files: Vec<_> = fs::read_dir(&data).unwrap().collect();
    assert_eq!(files.len(), 3);

    let config = r#"{"m": 12, "t": 4, "d": 8, "hidden": 8, "blocks": 1, "width": 8,
                     "epochs": 3, "batch_size": 8, "lr": 0.001, "n_train": 30, "stride": 3}"#;
    fs::write(root.join("run.json"), config).unwrap();
    let ckpt = root.join("ckpt");
    let log = root.join("loss.csv");
    let out = motionatt(&[
        "train",
        "--config",
        p(&root.join("run.json")),
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--log",
        p(&log),
        "--seed",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(ckpt.join("manifest.json").exists() && ckpt.join("params.bin").exists());
    let log = fs::read_to_string(&log).unwrap();
    assert!(log.starts_with("epoch,lr,train_loss"));
    assert_eq!(log.lines().count(), 4);

    let input = data.join("synth_0000.seq");
    let pred = root.join("pred.seq");
    let att = root.join("att.csv");
    let out = motionatt(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--input",
        p(&input),
        "--out",
        p(&pred),
        "--steps",
        "3",
        "--history",
        "40",
        "--attention",
        p(&att),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let forecast = load_sequence(&pred).unwrap();
    assert_eq!((forecast.len(), forecast.pose_dim()), (12, 6));
    let att = fs::read_to_string(&att).unwrap();
    let header: Vec<i64> = att
        .lines()
        .next()
        .unwrap()
        .split(',')
        .map(|c| c.parse().unwrap())
        .collect();
    assert_eq!(header.first(), Some(&-40));
    assert_eq!(header.len(), 40 + 2 * 4);
    assert_eq!(att.lines().count(), 4);

    let report = root.join("report.csv");
    let out = motionatt(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--test",
        p(&data),
        "--history",
        "40",
        "--horizons",
        "80,160,320",
        "--baseline",
        "--out",
        p(&report),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = fs::read_to_string(&report).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next(),
        Some("horizon_ms,frame,mean_error,zero_velocity")
    );
    assert!(lines.next().unwrap().starts_with("80,2,"));
    assert_eq!(report.lines().count(), 4);

    let out = motionatt(&[
        "eval",
        "--zero-velocity",
        "--test",
        p(&data),
        "--history",
        "40",
        "--horizons",
        "400",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(
        String::from_utf8_lossy(&out.stdout).starts_with("horizon_ms,frame,mean_error\n400,10,")
    );
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(motionatt(&[]).status.code(), Some(2));
    assert_eq!(motionatt(&["train", "--config"]).status.code(), Some(2));
    assert_eq!(
        motionatt(&["eval", "--test", "x", "--history", "5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(motionatt(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one_and_name_the_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = motionatt(&[
        "predict",
        "--checkpoint",
        p(&dir.path().join("none")),
        "--input",
        "x.seq",
        "--out",
        "y.seq",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error kind="), "{}", stderr(&out));

    fs::write(
        dir.path().join("bad.json"),
        r#"{"m": 12, "unknown_key": 1}"#,
    )
    .unwrap();
    let out = motionatt(&[
        "train",
        "--config",
        p(&dir.path().join("bad.json")),
        "--data",
        p(dir.path()),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown_key"), "{}", stderr(&out));
}

#[test]
fn gradcheck_command_passes() {
    let out = motionatt(&["gradcheck", "--seed", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradcheck passed"));
}
