use std::path::Path;
use std::process::{Command, Output};

use longtail_core::anno::parse_dataset;
use longtail_core::ema::{read_checkpoint, write_checkpoint};
use longtail_core::eval::{serialize_results, Detection};
use serde_json::Value;

fn longtail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longtail"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Small fixture with rendered images.
fn fixture(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("fx.json");
    let res = longtail(&[
        "gen-fixture",
        "--categories",
        "12",
        "--zipf",
        "1.0",
        "--images",
        "40",
        "--seed",
        "3",
        "--out",
        p(&out),
        "--render-dir",
        p(&dir.join("imgs")),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out
}

#[test]
fn help_and_usage_codes() {
    assert_eq!(code(&longtail(&["--help"])), 0);
    let help = longtail(&["eval", "--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("--max-per-img"));
    assert_eq!(code(&longtail(&["frobnicate"])), 2);
    assert_eq!(code(&longtail(&[])), 2);
    assert_eq!(code(&longtail(&["eval", "--gt"])), 2);
}

#[test]
fn randomized_commands_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    assert_eq!(code(&longtail(&["rfs", "--annotations", p(&fx)])), 2);
    assert_eq!(
        code(&longtail(&[
            "gen-fixture",
            "--out",
            p(&dir.path().join("x.json"))
        ])),
        2
    );
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "seed = 5\n").unwrap();
    assert_eq!(
        code(&longtail(&[
            "rfs",
            "--annotations",
            p(&fx),
            "--config",
            p(&cfg)
        ])),
        0
    );
}

#[test]
fn gen_fixture_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let res = longtail(&[
            "gen-fixture",
            "--categories",
            "50",
            "--zipf",
            "1.2",
            "--seed",
            "7",
            "--out",
            p(out),
        ]);
        assert_eq!(code(&res), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a.truth.json")).unwrap(),
        std::fs::read(dir.path().join("b.truth.json")).unwrap()
    );
}

#[test]
fn stats_agree_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let out = dir.path().join("stats.json");
    assert_eq!(
        code(&longtail(&[
            "stats",
            "--annotations",
            p(&fx),
            "--out",
            p(&out)
        ])),
        0
    );
    let stats = read_json(&out);
    let truth = read_json(&dir.path().join("fx.truth.json"));
    assert_eq!(stats["category_fractions"], truth["category_fractions"]);
    assert_eq!(stats["instance_fractions"], truth["instance_fractions"]);
}

#[test]
fn malformed_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"images\": [").unwrap();
    let res = longtail(&["stats", "--annotations", p(&bad)]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("byte"));
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[eval]\nmax_dets = 3\n").unwrap();
    assert_eq!(
        code(&longtail(&[
            "stats",
            "--annotations",
            p(&bad),
            "--config",
            p(&cfg)
        ])),
        2
    );
}

#[test]
fn rfs_outputs_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let run = |tag: &str| {
        let (json, csv) = (
            dir.path().join(format!("{tag}.json")),
            dir.path().join(format!("{tag}.csv")),
        );
        let res = longtail(&[
            "rfs",
            "--annotations",
            p(&fx),
            "--threshold",
            "0.2",
            "--epoch",
            "3",
            "--seed",
            "11",
            "--out",
            p(&json),
            "--csv",
            p(&csv),
        ]);
        assert_eq!(code(&res), 0);
        (std::fs::read(json).unwrap(), std::fs::read(csv).unwrap())
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let schedule: Value = serde_json::from_slice(&a.0).unwrap();
    assert_eq!(schedule["epoch"], 3);
    assert!(schedule["entries"].as_array().unwrap().len() >= 40);
    assert!(String::from_utf8_lossy(&a.1).starts_with("image_id,repeat_factor,multiplicity"));
}

#[test]
fn augmentation_commands_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let imgs = dir.path().join("imgs");
    for tag in ["a", "b"] {
        let out = dir.path().join(format!("cp_{tag}"));
        let res = longtail(&[
            "copypaste",
            "--annotations",
            p(&fx),
            "--images",
            p(&imgs),
            "--image-id",
            "4",
            "--seed",
            "2",
            "--n-instances",
            "3",
            "--out-dir",
            p(&out),
        ]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        let out = dir.path().join(format!("mo_{tag}"));
        let res = longtail(&[
            "mosaic",
            "--annotations",
            p(&fx),
            "--images",
            p(&imgs),
            "--seed",
            "2",
            "--count",
            "3",
            "--out-dir",
            p(&out),
            "--config",
            p(&write_small_mosaic_config(dir.path())),
        ]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    for sub in ["cp", "mo"] {
        let a = std::fs::read(dir.path().join(format!("{sub}_a/annotations.json"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("{sub}_b/annotations.json"))).unwrap();
        assert_eq!(a, b);
        parse_dataset(std::str::from_utf8(&a).unwrap()).unwrap();
    }
    assert_eq!(
        std::fs::read(dir.path().join("cp_a/images/000004.png")).unwrap(),
        std::fs::read(dir.path().join("cp_b/images/000004.png")).unwrap()
    );
}

fn write_small_mosaic_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("mosaic.toml");
    std::fs::write(
        &path,
        "[mosaic]\nbase_size = [64, 64]\nshort_side_range = [48, 96]\n",
    )
    .unwrap();
    path
}

#[test]
fn eval_perfect_results() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let ds = parse_dataset(&std::fs::read_to_string(&fx).unwrap()).unwrap();
    let dets: Vec<Detection> = ds
        .annotations()
        .iter()
        .map(|a| {
            let im = ds.image(a.image_id).unwrap();
            Detection {
                image_id: a.image_id,
                category_id: a.category_id,
                score: 1.0 / (1.0 + a.id as f64),
                mask: a
                    .segmentation
                    .to_rle(im.height as usize, im.width as usize)
                    .unwrap(),
                iou_pred: Some(0.9),
            }
        })
        .collect();
    let results = dir.path().join("results.json");
    std::fs::write(&results, serialize_results(&dets)).unwrap();
    for metric in ["mask", "boundary"] {
        let report = dir.path().join(format!("{metric}.json"));
        let res = longtail(&[
            "eval",
            "--gt",
            p(&fx),
            "--results",
            p(&results),
            "--metric",
            metric,
            "--rescore",
            "--report",
            p(&report),
        ]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        let r = read_json(&report);
        assert_eq!(r["AP"], 100.0);
    }
}

#[test]
fn ema_and_select() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (k, v) in [1.0f32, 2.0, 3.0].into_iter().enumerate() {
        let path = dir.path().join(format!("ck{k}.bin"));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[v, -v]).unwrap();
        std::fs::write(&path, buf).unwrap();
        paths.push(path);
    }
    let out = dir.path().join("ema.bin");
    let mut args = vec!["ema", "--decay", "0.9", "--out", p(&out), "--checkpoints"];
    args.extend(paths.iter().map(|x| p(x)));
    assert_eq!(code(&longtail(&args)), 0);
    let shadow = read_checkpoint(&std::fs::read(&out).unwrap()[..]).unwrap();
    assert!((shadow[0] - 1.29).abs() < 1e-6 && (shadow[1] + 1.29).abs() < 1e-6);

    let curve = dir.path().join("curve.json");
    let records: Vec<Value> = (1..=8)
        .map(|e| {
            let r = if e <= 3 { 10.0 + e as f64 } else { 16.0 - e as f64 };
            serde_json::json!({"epoch": e, "AP": 20.0 + e as f64, "APr": r, "APc": 30.0, "APf": 35.0})
        })
        .collect();
    std::fs::write(&curve, serde_json::to_string(&records).unwrap()).unwrap();
    let pick = |criterion: &str| {
        let res = longtail(&["select", "--curve", p(&curve), "--criterion", criterion]);
        assert_eq!(code(&res), 0);
        serde_json::from_slice::<Value>(&res.stdout).unwrap()["epoch"]
            .as_u64()
            .unwrap()
    };
    assert_eq!(pick("max_ap"), 8);
    assert_eq!(pick("max_min_bucket"), 3);
    assert_eq!(
        code(&longtail(&[
            "select",
            "--curve",
            p(&curve),
            "--criterion",
            "best"
        ])),
        2
    );
}

#[test]
fn tta_fuse_duplicate_views() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let ds = parse_dataset(&std::fs::read_to_string(&fx).unwrap()).unwrap();
    let im = &ds.images()[0];
    let dets: Vec<Value> = ds
        .annotations()
        .iter()
        .filter(|a| a.image_id == im.id)
        .map(|a| {
            let d = Detection {
                image_id: a.image_id,
                category_id: a.category_id,
                score: 0.5,
                mask: a
                    .segmentation
                    .to_rle(im.height as usize, im.width as usize)
                    .unwrap(),
                iou_pred: None,
            };
            serde_json::to_value(d).unwrap()
        })
        .collect();
    let view = serde_json::json!({"w": im.width, "h": im.height, "hflip": false});
    let one = serde_json::json!([{"view": view, "results": dets}]);
    let two = serde_json::json!([{"view": view, "results": dets}, {"view": view, "results": dets}]);
    let run = |v: &Value, name: &str| {
        let (views, out) = (
            dir.path().join(format!("{name}.views.json")),
            dir.path().join(format!("{name}.json")),
        );
        std::fs::write(&views, v.to_string()).unwrap();
        let res = longtail(&[
            "tta-fuse",
            "--annotations",
            p(&fx),
            "--views",
            p(&views),
            "--out",
            p(&out),
        ]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        std::fs::read(out).unwrap()
    };
    assert_eq!(run(&one, "one"), run(&two, "two"));
}

#[test]
fn seesaw_subcommands() {
    let res = longtail(&[
        "seesaw", "loss", "--logits", "0,0", "--label", "1", "--counts", "100,1",
    ]);
    assert_eq!(code(&res), 0);
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!((v["loss"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    let res = longtail(&["seesaw", "grad-check", "--seed", "4"]);
    assert_eq!(code(&res), 0);
    assert_eq!(
        code(&longtail(&[
            "seesaw", "loss", "--logits", "0,0", "--label", "5", "--counts", "1,1"
        ])),
        1
    );
}
