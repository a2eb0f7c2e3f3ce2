use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

const SMALL_DATA: &[&str] = &[
    "--dim",
    "20",
    "--classes",
    "3",
    "--n-train",
    "300",
    "--n-test",
    "120",
    "--separation",
    "8",
];

fn wings(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wings"))
        .args(args)
        .env_remove("WINGS_DATA_DIR")
        .output()
        .unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = wings(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn with_data<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL_DATA);
    v
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// Train, compress, infer, attack and report into `dir`; returns the
/// summaries in that order.
fn pipeline(dir: &Path) -> Vec<Value> {
    let model = p(dir, "m.wngs");
    let art = p(dir, "m.wngc");
    let csv = p(dir, "attack.csv");
    let rep = p(dir, "report.json");
    vec![
        ok_json(&with_data(&[
            "train",
            "--arch",
            "dense32-dense16-dense3",
            "--epochs",
            "10",
            "--seed",
            "3",
            "--out",
            &model,
        ])),
        ok_json(&[
            "compress", "--model", &model, "--mode", "fcn", "--eta", "0.9", "--seed", "7", "--out",
            &art,
        ]),
        ok_json(&with_data(&[
            "infer",
            "--artifact",
            &art,
            "--model",
            &model,
        ])),
        ok_json(&with_data(&[
            "attack",
            "--model",
            &model,
            "--artifact",
            &art,
            "--budgets",
            "1,4,16",
            "--trials",
            "4",
            "--seed",
            "7",
            "--out",
            &csv,
        ])),
        ok_json(&[
            "report",
            "--artifact",
            &art,
            "--model",
            &model,
            "--out",
            &rep,
        ]),
    ]
}

#[test]
fn help_documents_every_subcommand_and_flag() {
    let out = wings(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "train",
        "sensitivity",
        "compress",
        "infer",
        "attack",
        "estimate",
        "report",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let out = wings(&["attack", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in [
        "--budgets",
        "--trials",
        "--target",
        "--policy",
        "--seed",
        "--config",
    ] {
        assert!(text.contains(flag), "{flag} missing");
    }
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(wings(&["estimate", "--bogus"]).status.code(), Some(64));
    assert_eq!(wings(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(wings(&["train"]).status.code(), Some(64));
    assert_eq!(
        wings(&[
            "attack",
            "--model",
            "a",
            "--artifact",
            "b",
            "--out",
            "c",
            "--target",
            "nope"
        ])
        .status
        .code(),
        Some(64)
    );
}

#[test]
fn estimate_reproduces_the_bert_row() {
    let v = ok_json(&["estimate", "--params", "110000000", "--bits", "32"]);
    assert_eq!(v["command"], "estimate");
    assert_eq!(v["result"]["estimate"]["memory"], "440 MB");
    let j = v["result"]["estimate"]["energy_ddr3_j"].as_f64().unwrap();
    assert!((j - 0.2464).abs() < 1e-12);
    let v = ok_json(&[
        "estimate",
        "--params",
        "1000",
        "--compression-fraction",
        "0.92",
    ]);
    let ecc = v["result"]["compressed"]["ecc_units"].as_f64().unwrap();
    assert!((ecc - 14.4).abs() < 1e-9);
    // non-positive energy is a contract violation
    assert_eq!(
        wings(&["estimate", "--params", "5", "--ddr3-pj", "0"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn pipeline_is_reproducible_and_hashes_its_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());

    let compress = &first[1];
    assert!(compress["result"]["ratio"].as_f64().unwrap() > 0.0);
    let art = a.path().join("m.wngc");
    assert_eq!(compress["outputs"][0]["sha256"], sha(&art));
    assert_eq!(compress["seed"], 7);
    assert_eq!(compress["config"]["eta"], 0.9);

    let infer = &first[2];
    // toy scale: only check it stays well above chance (1/3)
    assert!(infer["result"]["accuracy"].as_f64().unwrap() > 0.45);
    let residuals = infer["result"]["residuals"].as_array().unwrap();
    assert_eq!(residuals.len(), 3);

    let csv = std::fs::read_to_string(a.path().join("attack.csv")).unwrap();
    assert!(csv.starts_with("budget,trial,target,acc_original,acc_compressed\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    assert_eq!(first[3]["result"]["budgets"].as_array().unwrap().len(), 3);

    let proxy = &first[4]["result"]["attack_complexity_proxy"];
    assert!(proxy["note"].as_str().unwrap().contains("proxy"));

    for (x, y) in first.iter().zip(&second) {
        let hashes = |v: &Value| -> Vec<Value> {
            v["outputs"]
                .as_array()
                .unwrap()
                .iter()
                .map(|o| o["sha256"].clone())
                .collect()
        };
        assert_eq!(hashes(x), hashes(y), "{}", x["command"]);
        assert_eq!(x["result"], y["result"], "{}", x["command"]);
    }
}

#[test]
fn streaming_and_cached_inference_agree() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let art = p(dir.path(), "m.wngc");
    let cached = ok_json(&with_data(&["infer", "--artifact", &art]));
    let streamed = ok_json(&with_data(&[
        "infer",
        "--artifact",
        &art,
        "--no-cache",
        "--batch-size",
        "7",
    ]));
    assert_eq!(
        cached["result"]["predictions_sha256"],
        streamed["result"]["predictions_sha256"]
    );
    assert_eq!(streamed["result"]["weights"], "regenerated per batch");
}

#[test]
fn format_and_contract_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let art = dir.path().join("m.wngc");
    let mut bytes = std::fs::read(&art).unwrap();
    bytes[0] = b'X';
    let bad = dir.path().join("bad.wngc");
    std::fs::write(&bad, &bytes).unwrap();
    let out = wings(&with_data(&["infer", "--artifact", bad.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format error"));

    let model = p(dir.path(), "m.wngs");
    let out = wings(&[
        "compress",
        "--model",
        &model,
        "--mode",
        "fcn",
        "--eta",
        "1.5",
        "--out",
        &p(dir.path(), "x.wngc"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    // a model trained on 20 features cannot read 784-feature data
    let out = wings(&["sensitivity", "--model", &model, "--n-train", "50"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_values_sit_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("est.cfg");
    std::fs::write(
        &cfg,
        "# 340M-parameter row\nparams = 340000000\nbits = 16\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let v = ok_json(&["estimate", "--config", cfg]);
    assert_eq!(v["result"]["estimate"]["memory"], "680 MB");
    let v = ok_json(&["estimate", "--config", cfg, "--bits", "32"]);
    assert_eq!(v["result"]["estimate"]["memory"], "1.36 GB");
    std::fs::write(dir.path().join("bad.cfg"), "unknown_key = 1\n").unwrap();
    let out = wings(&[
        "estimate",
        "--config",
        dir.path().join("bad.cfg").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn cnn_compression_and_summary_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = p(dir.path(), "c.wngs");
    let images = [
        "--data",
        "synth-images",
        "--side",
        "8",
        "--classes",
        "3",
        "--n-train",
        "200",
        "--n-test",
        "60",
    ];
    let mut train = vec![
        "train",
        "--arch",
        "conv4-pool-conv6-dense3",
        "--epochs",
        "2",
        "--lr",
        "0.05",
        "--out",
        &model,
    ];
    train.extend_from_slice(&images);
    ok_json(&train);
    let art = p(dir.path(), "c.wngc");
    let summary = p(dir.path(), "summary.json");
    let mut compress = vec![
        "compress",
        "--model",
        &model,
        "--mode",
        "cnn",
        "--out",
        &art,
        "--summary",
        &summary,
        "--min-dense-weights",
        "1",
    ];
    compress.extend_from_slice(&images);
    let v = ok_json(&compress);
    let on_disk: Value = serde_json::from_slice(&std::fs::read(&summary).unwrap()).unwrap();
    assert_eq!(on_disk, v);
    let sens = &v["result"]["sensitivity"];
    assert_eq!(sens["scores"].as_array().unwrap().len(), 3);
    assert_eq!(sens["selected"].as_array().unwrap().len(), 1);
    let layers = v["result"]["report"]["layers"].as_array().unwrap();
    let modes: Vec<&str> = layers.iter().map(|l| l["mode"].as_str().unwrap()).collect();
    assert!(modes.contains(&"raw"));
    assert!(modes.contains(&"intra-compressed"));
}
