mod common;

use std::fs;
use std::path::Path;

use common::*;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn preprocess_mirrors_the_drone_tree_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    gen_toy(&root.join("toy"), 3, 2, 32);
    let (sat, drone) = (root.join("toy/train/satellite"), root.join("toy/train/drone"));
    for run in ["a", "b"] {
        geoloc_ok([
            "preprocess",
            "--satellite-dir",
            s(&sat),
            "--drone-dir",
            s(&drone),
            "--out-dir",
            s(&root.join(run)),
            "--mapping-out",
            s(&root.join(format!("{run}.map"))),
        ]);
    }
    assert_eq!(files_under(&drone), files_under(&root.join("a")));
    assert_eq!(files_under(&drone).len(), 6);
    assert_eq!(
        fs::read(root.join("a.map")).unwrap(),
        fs::read(root.join("b.map")).unwrap()
    );
    for f in files_under(&drone) {
        assert_eq!(
            fs::read(root.join("a").join(&f)).unwrap(),
            fs::read(root.join("b").join(&f)).unwrap()
        );
    }

    // a saved mapping reproduces the same tree
    geoloc_ok([
        "preprocess",
        "--mapping-in",
        s(&root.join("a.map")),
        "--drone-dir",
        s(&drone),
        "--out-dir",
        s(&root.join("c")),
    ]);
    for f in files_under(&drone) {
        assert_eq!(
            fs::read(root.join("a").join(&f)).unwrap(),
            fs::read(root.join("c").join(&f)).unwrap()
        );
    }

    geoloc_ok([
        "plot-mapping",
        "--mapping",
        s(&root.join("a.map")),
        "--out",
        s(&root.join("plot.png")),
    ]);
    assert!(fs::metadata(root.join("plot.png")).unwrap().len() > 0);
}

#[test]
fn missing_satellite_dir_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geoloc([
        "preprocess",
        "--satellite-dir",
        s(&tmp.path().join("absent")),
        "--mapping-out",
        s(&tmp.path().join("m.map")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no satellite mappings"), "{}", stderr(&out));
    assert!(!tmp.path().join("m.map").exists());
}

#[test]
fn malformed_mapping_fails_to_plot() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.map"), "not a mapping\n").unwrap();
    let out = geoloc([
        "plot-mapping",
        "--mapping",
        s(&tmp.path().join("bad.map")),
        "--out",
        s(&tmp.path().join("p.png")),
    ]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!tmp.path().join("p.png").exists());
}

#[test]
fn negative_learning_rate_fails_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = geoloc([
        "train",
        "--preset",
        "toy",
        "--set",
        "optim.lr=-0.1",
        "--out-dir",
        s(&run),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!run.exists());

    let out = geoloc(["train", "--set", "optim.no_such_key=1", "--out-dir", s(&run)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown config key"));
    assert!(!run.exists());
}

#[test]
fn empty_query_dir_reports_no_queries() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir_all(tmp.path().join("q")).unwrap();
    fs::create_dir_all(tmp.path().join("g")).unwrap();
    let out = geoloc([
        "evaluate",
        "--checkpoint",
        s(&tmp.path().join("none.ckpt")),
        "--query-dir",
        s(&tmp.path().join("q")),
        "--gallery-dir",
        s(&tmp.path().join("g")),
    ]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("no queries"), "{}", stderr(&out));
}

fn tiny_train(toy: &Path, run: &Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec![
        "train".to_string(),
        "--preset".into(),
        "toy".into(),
        "--out-dir".into(),
        s(run).into(),
    ];
    for kv in [
        format!("data.satellite_dir={}", s(&toy.join("train/satellite"))),
        format!("data.drone_dir={}", s(&toy.join("train/drone"))),
        "model.base_width=4".into(),
        "model.input_size=32".into(),
        "optim.batch_size=4".into(),
        "optim.epochs=1".into(),
    ]
    .into_iter()
    .chain(extra.iter().map(|e| e.to_string()))
    {
        args.push("--set".into());
        args.push(kv);
    }
    geoloc(args)
}

#[test]
fn training_is_reproducible_and_evaluation_follows_the_direction() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = tmp.path().join("toy");
    gen_toy(&toy, 4, 2, 32);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for run in [&a, &b] {
        let out = tiny_train(&toy, run, &[]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let first = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(first, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert!(first.starts_with("epoch,"));
    for f in [
        "best.ckpt",
        "last.ckpt",
        "config.toml",
        "manifest.tsv",
        "train_report.txt",
    ] {
        assert!(a.join(f).is_file(), "{f}");
    }

    let ckpt = a.join("last.ckpt");
    let eval = |direction: &str, q: &str, g: &str, out: &Path| {
        geoloc_ok([
            "evaluate",
            "--checkpoint",
            s(&ckpt),
            "--query-dir",
            s(&toy.join(q)),
            "--gallery-dir",
            s(&toy.join(g)),
            "--direction",
            direction,
            "--out-dir",
            s(out),
        ])
    };
    let d2s = tmp.path().join("d2s");
    let s2d = tmp.path().join("s2d");
    eval("drone-to-satellite", "query/drone", "gallery/satellite", &d2s);
    eval("satellite-to-drone", "gallery/satellite", "query/drone", &s2d);
    let (kd, ks) = (key_values(&d2s.join("report.txt")), key_values(&s2d.join("report.txt")));
    assert_eq!(
        (kd["direction"].as_str(), kd["queries"].as_str(), kd["gallery"].as_str()),
        ("drone-to-satellite", "8", "4")
    );
    assert_eq!(
        (ks["direction"].as_str(), ks["queries"].as_str(), ks["gallery"].as_str()),
        ("satellite-to-drone", "4", "8")
    );
    let ranks = fs::read_to_string(s2d.join("ranks.tsv")).unwrap();
    assert!(ranks.lines().skip(1).all(|l| l.contains("satellite")));

    // a checkpoint only serves the network shape it was trained with
    let out = geoloc([
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--query-dir",
        s(&toy.join("query/drone")),
        "--gallery-dir",
        s(&toy.join("gallery/satellite")),
        "--preset",
        "toy",
        "--set",
        "model.base_width=8",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mismatch"), "{}", stderr(&out));
}

#[test]
fn a_huge_learning_rate_diverges_with_the_step_index() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = tmp.path().join("toy");
    gen_toy(&toy, 4, 2, 32);
    let out = tiny_train(
        &toy,
        &tmp.path().join("run"),
        &["optim.lr=1e300", "optim.clip_norm=0", "optim.epochs=3"],
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged at step"), "{}", stderr(&out));
}

#[test]
fn toy_preset_loss_trends_down_over_ten_epochs() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = tmp.path().join("toy");
    gen_toy(&toy, 20, 8, 64);
    let run = tmp.path().join("run");
    geoloc_ok([
        "train",
        "--preset",
        "toy",
        "--out-dir",
        s(&run),
        "--set",
        &format!("data.satellite_dir={}", s(&toy.join("train/satellite"))),
        "--set",
        &format!("data.drone_dir={}", s(&toy.join("train/drone"))),
        "--set",
        "optim.epochs=10",
    ]);
    let total = metric_column(&run.join("metrics.csv"), "total");
    assert_eq!(total.len(), 10);
    let head: f64 = total[..3].iter().sum::<f64>() / 3.0;
    let tail: f64 = total[7..].iter().sum::<f64>() / 3.0;
    assert!(tail < head, "{total:?}");
    assert!(total[9] < total[0], "{total:?}");
}

#[test]
fn environment_overrides_are_validated_like_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_geoloc"))
        .args(["train", "--preset", "toy", "--out-dir", s(&run)])
        .env("GEOLOC_OPTIM_LR", "-1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("lr"), "{}", stderr(&out));
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_geoloc"))
        .args(["train", "--preset", "toy", "--out-dir", s(&run)])
        .env("GEOLOC_OPTIM_LEARNING_RATE", "0.1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("GEOLOC_OPTIM_LEARNING_RATE"), "{}", stderr(&out));
    assert!(!run.exists());
}
