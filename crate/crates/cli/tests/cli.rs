mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::tiny_dataset;
use serde_json::Value;

fn renet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_renet")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = renet(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn eval_json(args: &[&str]) -> Value {
    serde_json::from_slice(&ok(args).stdout).unwrap()
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = p(dir.path());
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "fusion_mode = telepathy\n").unwrap();
    for args in [
        vec!["train", "--data", d, "--out", d, "--config", p(&bad)],
        vec!["train", "--data", d, "--out", d, "--set", "epochs=zero"],
        vec!["train", "--data", d, "--out", d, "--config", "/nonexistent.cfg"],
        vec!["ablate", "--data", d, "--out", d, "--set", "input_size=50"],
    ] {
        assert_eq!(renet(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn data_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let ckpt = dir.path().join("missing.renw");
    let out = renet(&["train", "--data", p(&empty), "--out", p(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    let out = renet(&["eval", "--checkpoint", p(&ckpt), "--data", p(&empty)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gen_train_eval_infer_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_dataset(&data, 5);
    let run = dir.path().join("run");
    let cfg = dir.path().join("model.cfg");
    fs::write(&cfg, "input_size = 48\nepochs = 3\n").unwrap();
    ok(&["train", "--config", p(&cfg), "--set", "epochs=2", "--data", p(&data), "--out", p(&run)]);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["config_source"], "input_size = 48\nepochs = 3\n");
    let ckpt = run.join("checkpoints/epoch_001.renw");

    let at = |tau: &str, extra: &[&str]| {
        let mut args = vec!["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--tau", tau];
        args.extend_from_slice(extra);
        eval_json(&args)
    };
    let m5 = at("0.5", &[]);
    let m2 = at("0.2", &[]);
    assert!(m2["map"].as_f64().unwrap() >= m5["map"].as_f64().unwrap());
    assert_eq!(m5["n_frames"], 20);
    assert_eq!(m5, at("0.5", &[]), "evaluation is deterministic");
    let night = at("0.5", &["--illum", "night"]);
    assert!(night["data"].as_str().unwrap().ends_with("night"));
    let train_split = at("0.5", &["--split", "train"]);
    assert!(train_split["data"].as_str().unwrap().ends_with("train"));

    // A checkpoint of another architecture does not load.
    let out = renet(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--set", "fusion_mode=rgb_only"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint mismatch"));

    let overlays = dir.path().join("overlays");
    ok(&["infer", "--checkpoint", p(&ckpt), "--data", p(&data.join("val")), "--out", p(&overlays)]);
    let seq = overlays.join("seq_0000");
    let img = renet_events::pnm::read_pnm(&seq.join("overlay_00000.ppm")).unwrap();
    assert_eq!((img.width, img.height, img.channels), (48, 48, 3));
    let csv = fs::read_to_string(seq.join("detections.csv")).unwrap();
    assert!(csv.starts_with("frame_id,class_id,score,x1,y1,x2,y2\n"));
    assert_eq!(fs::read_dir(&seq).unwrap().count(), 21);
}

#[test]
fn repr_dump_writes_three_ranges() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path(), 6);
    let seq = dir.path().join("train/seq_0000");
    let out = dir.path().join("repr");
    ok(&["repr-dump", "--seq", p(&seq), "--out", p(&out), "--frame", "4"]);
    for r in 1..=3 {
        let img = renet_events::pnm::read_pnm(&out.join(format!("frame_00004_range{r}.pgm"))).unwrap();
        assert_eq!((img.width, img.channels), (48, 1));
    }
    assert_eq!(renet(&["repr-dump", "--seq", p(&seq), "--out", p(&out), "--frame", "99"]).status.code(), Some(3));
}

#[test]
fn gen_writes_a_dataset_or_a_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let args = ["gen", "--out", p(&data), "--train-seqs", "2", "--val-seqs", "1", "--night-seqs", "1", "--frames", "3", "--size", "32"];
    ok(&args);
    for split in ["train/seq_0000", "train/seq_0001", "val/seq_0000", "night/seq_0000"] {
        assert!(data.join(split).join("events.evt").is_file(), "{split}");
    }
    let scene = dir.path().join("scene.cfg");
    fs::write(&scene, "n_frames = 2\nwidth = 32\nheight = 32\n").unwrap();
    let seq = dir.path().join("one");
    ok(&["gen", "--out", p(&seq), "--scene", p(&scene)]);
    assert!(seq.join("frames/00001.ppm").is_file());
    fs::write(&scene, "n_frames = 2\nn_moving = 9\n").unwrap();
    assert_eq!(renet(&["gen", "--out", p(&seq), "--scene", p(&scene)]).status.code(), Some(2));
}

#[test]
fn ablation_table_has_the_six_variants() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_dataset(&data, 7);
    let out = dir.path().join("ablate");
    let stdout = ok(&["ablate", "--data", p(&data), "--out", p(&out), "--seeds", "0", "--set", "input_size=48", "--set", "epochs=1"]).stdout;
    let table = String::from_utf8(stdout).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 6);
    let flags: Vec<(String, String, String, String)> = rows
        .iter()
        .map(|r| {
            let c: Vec<&str> = r.split('|').map(str::trim).collect();
            (c[3].to_string(), c[4].to_string(), c[5].to_string(), c[6].to_string())
        })
        .collect();
    let expected = [
        ("concat_conv", "single", "", ""),
        ("concat_conv", "etma", "", ""),
        ("renet", "etma", "x", ""),
        ("renet", "etma", "", "x"),
        ("renet", "accumulate", "x", "x"),
        ("renet", "etma", "x", "x"),
    ];
    for (got, want) in flags.iter().zip(expected) {
        assert_eq!((got.0.as_str(), got.1.as_str(), got.2.as_str(), got.3.as_str()), want);
    }
    // Variants 5 and 6 differ only in event_mode, read back from their stored configs.
    let read = |row: usize| fs::read_to_string(out.join(format!("row{row}/seed0/config.cfg"))).unwrap();
    let (c5, c6) = (read(5), read(6));
    let diff: Vec<(&str, &str)> = c5.lines().zip(c6.lines()).filter(|(a, b)| a != b).collect();
    assert_eq!(diff, vec![("event_mode = accumulate", "event_mode = etma")]);
    assert!(out.join("ablation.json").is_file());
}

#[test]
fn gradcheck_subcommand_reports_cases() {
    let out = ok(&["gradcheck", "--seeds", "2", "--case", "relu"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 1 && text.lines().all(|l| l.contains("ok")), "{text}");
}
