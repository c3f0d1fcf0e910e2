use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_polyocc"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exited")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Shared 12-building dataset, generated once per test binary.
fn dataset() -> &'static Path {
    static DIR: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let t = tempfile::tempdir().unwrap();
        let d = t.path().join("ds");
        ok(&[
            "gen-data",
            "--out",
            s(&d),
            "--count",
            "12",
            "--max-points",
            "600",
            "--seed",
            "3",
        ]);
        (t, d)
    })
    .1
}

fn write_box_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let mut prims = Vec::new();
    let mut pts = String::new();
    for ax in 0..3 {
        for v in [0.2, 0.8] {
            let mut n = [0.0; 3];
            n[ax] = 1.0;
            let (a, b) = ((ax + 1) % 3, (ax + 2) % 3);
            let mut inliers = Vec::new();
            for (u, w) in [(0.2, 0.2), (0.2, 0.8), (0.8, 0.2), (0.8, 0.8), (0.5, 0.5)] {
                let mut p = [0.0; 3];
                p[ax] = v;
                p[a] = u;
                p[b] = w;
                pts.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
                inliers.push(p);
            }
            prims.push(serde_json::json!({ "normal": n, "offset": v, "inliers": inliers }));
        }
    }
    let (p, q) = (dir.join("pts.xyz"), dir.join("prims.json"));
    fs::write(&p, pts).unwrap();
    fs::write(&q, serde_json::to_string(&prims).unwrap()).unwrap();
    (p, q)
}

#[test]
fn oracle_reconstruction_is_watertight_and_exact() {
    let t = tempfile::tempdir().unwrap();
    let obj = t.path().join("b.obj");
    let r = ok(&[
        "reconstruct",
        "--data",
        s(dataset()),
        "--id",
        "5",
        "--oracle",
        "--out",
        s(&obj),
    ]);
    assert_eq!(r["watertight"], true);
    let (v, iv) = (
        r["volume"].as_f64().unwrap(),
        r["interior_volume"].as_f64().unwrap(),
    );
    assert!((v - iv).abs() <= 1e-6 * iv);
    let i = ok(&["inspect", s(&obj)]);
    assert_eq!(i["kind"], "mesh");
    assert_eq!(i["boundary_edges"], 0);

    let report = t.path().join("r.json");
    let csv = t.path().join("r.csv");
    let e = ok(&[
        "eval",
        "--data",
        s(dataset()),
        "--oracle",
        "--split",
        "all",
        "--samples",
        "500",
        "--report",
        s(&report),
        "--csv",
        s(&csv),
    ]);
    assert_eq!(e["success_rate"], 100.0);
    assert!(e["mean_h_rel"].as_f64().unwrap() < 1e-6);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 13);
}

#[test]
fn generation_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("again");
    ok(&[
        "--threads",
        "1",
        "gen-data",
        "--out",
        s(&d),
        "--count",
        "12",
        "--max-points",
        "600",
        "--seed",
        "3",
    ]);
    let a = ok(&["inspect", s(dataset())]);
    let b = ok(&["inspect", s(&d)]);
    assert_eq!(a["crc32"], b["crc32"]);
    assert_eq!(a["records_crc32"], a["crc32"]);
    assert_eq!(
        fs::read(dataset().join("manifest.json")).unwrap(),
        fs::read(d.join("manifest.json")).unwrap()
    );
}

#[test]
fn strategies_cover_the_same_cells() {
    let t = tempfile::tempdir().unwrap();
    let (pts, prims) = write_box_inputs(t.path());
    let c = t.path().join("c.json");
    let p = ok(&[
        "partition",
        "--points",
        s(&pts),
        "--primitives",
        s(&prims),
        "--out",
        s(&c),
    ]);
    assert_eq!(p["cells"], 27);
    let mut cells = Vec::new();
    for st in ["skeleton", "boundary", "volume"] {
        let q = t.path().join(format!("{st}.json"));
        ok(&[
            "sample-queries",
            "--complex",
            s(&c),
            "--out",
            s(&q),
            "--k",
            "16",
            "--strategy",
            st,
        ]);
        let v: Value = serde_json::from_slice(&fs::read(&q).unwrap()).unwrap();
        let sets = v["queries"].as_array().unwrap();
        assert!(sets
            .iter()
            .all(|q| q["points"].as_array().unwrap().len() == 16));
        cells.push(
            sets.iter()
                .map(|q| q["cell"].as_u64().unwrap())
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(cells[0], cells[1]);
    assert_eq!(cells[1], cells[2]);

    // same seed, same bytes
    let again = t.path().join("again.json");
    ok(&[
        "sample-queries",
        "--complex",
        s(&c),
        "--out",
        s(&again),
        "--k",
        "16",
    ]);
    assert_eq!(
        fs::read(&again).unwrap(),
        fs::read(t.path().join("skeleton.json")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let (pts, prims) = write_box_inputs(t.path());
    let c = t.path().join("c.json");
    ok(&[
        "partition",
        "--points",
        s(&pts),
        "--primitives",
        s(&prims),
        "--out",
        s(&c),
    ]);
    let obj = t.path().join("o.obj");

    assert_eq!(code(&["inspect", s(&t.path().join("missing.xyz"))]), 2);
    assert_eq!(code(&["train"]), 2);

    let labels = t.path().join("l.json");
    fs::write(&labels, "[0, 1]").unwrap();
    assert_eq!(
        code(&[
            "reconstruct",
            "--complex",
            s(&c),
            "--labels",
            s(&labels),
            "--out",
            s(&obj)
        ]),
        2
    );

    fs::write(&labels, serde_json::to_string(&vec![0u8; 27]).unwrap()).unwrap();
    assert_eq!(
        code(&[
            "reconstruct",
            "--complex",
            s(&c),
            "--labels",
            s(&labels),
            "--out",
            s(&obj)
        ]),
        3
    );

    let mut one = vec![0u8; 27];
    one[13] = 1;
    fs::write(&labels, serde_json::to_string(&one).unwrap()).unwrap();
    assert_eq!(
        code(&[
            "--timeout-secs",
            "0",
            "reconstruct",
            "--complex",
            s(&c),
            "--labels",
            s(&labels),
            "--out",
            s(&obj)
        ]),
        4
    );
    let r = ok(&[
        "reconstruct",
        "--complex",
        s(&c),
        "--labels",
        s(&labels),
        "--out",
        s(&obj),
        "--triangulate",
    ]);
    assert_eq!(r["watertight"], true);
    assert_eq!(r["faces"], 6);

    let cfg = t.path().join("bad.toml");
    fs::write(&cfg, "[train]\nepochs = 0\n").unwrap();
    let data = s(dataset());
    assert_eq!(
        code(&[
            "--config",
            s(&cfg),
            "train",
            "--data",
            data,
            "--out",
            s(&t.path().join("run"))
        ]),
        2
    );

    let corrupt = t.path().join("corrupt");
    fs::create_dir(&corrupt).unwrap();
    fs::copy(
        dataset().join("manifest.json"),
        corrupt.join("manifest.json"),
    )
    .unwrap();
    let rec = fs::read(dataset().join("records.bin")).unwrap();
    fs::write(corrupt.join("records.bin"), &rec[..rec.len() / 2]).unwrap();
    let report = t.path().join("r.json");
    assert_eq!(
        code(&[
            "eval",
            "--data",
            s(&corrupt),
            "--oracle",
            "--report",
            s(&report)
        ]),
        2
    );
}

#[test]
fn timeout_zero_marks_every_building_unsolvable() {
    let t = tempfile::tempdir().unwrap();
    let report = t.path().join("r.json");
    let e = ok(&[
        "--timeout-secs",
        "0",
        "eval",
        "--data",
        s(dataset()),
        "--oracle",
        "--split",
        "all",
        "--samples",
        "100",
        "--report",
        s(&report),
    ]);
    assert_eq!(e["success_rate"], 0.0);
    assert_eq!(e["mean_h_rel"], 100.0);
}

#[test]
fn train_predict_resume_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let run_dir = t.path().join("run");
    let cfg = t.path().join("tiny.toml");
    // a small model keeps this test fast
    fs::write(
        &cfg,
        "[train]\nepochs = 2\nbatch_size = 4\n[train.points]\ncount = 128\n[train.model]\nencoder = \"plain\"\npoint_layers = [8]\nknn = 4\nlatent_dim = 8\nfusion_widths = [8]\ntag_layers = 1\ntag_hops = 1\ntag_width = 8\nhead_widths = [8]\n",
    )
    .unwrap();
    let data = s(dataset());
    let a = ok(&[
        "--config",
        s(&cfg),
        "train",
        "--data",
        data,
        "--out",
        s(&run_dir),
    ]);
    assert_eq!(a["epochs"], 2);
    for f in [
        "config.toml",
        "log.jsonl",
        "best.pgnn",
        "epoch_0001.pgnn",
        "epoch_0002.pgnn",
    ] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let b = ok(&[
        "train",
        "--data",
        data,
        "--out",
        s(&run_dir),
        "--resume",
        "--epochs",
        "3",
    ]);
    assert_eq!(b["epochs"], 3);
    let log = ok(&["inspect", s(&run_dir.join("log.jsonl"))]);
    assert_eq!(log["records"], 3);
    let ck = ok(&["inspect", s(&run_dir.join("epoch_0003.pgnn"))]);
    assert_eq!(ck["kind"], "checkpoint");
    assert_eq!(ck["epoch"], 3.0);

    let p1 = t.path().join("p1.json");
    let p2 = t.path().join("p2.json");
    ok(&[
        "predict",
        "--model",
        s(&run_dir),
        "--data",
        data,
        "--ids",
        "1,4",
        "--out",
        s(&p1),
    ]);
    ok(&[
        "--threads",
        "1",
        "predict",
        "--model",
        s(&run_dir),
        "--data",
        data,
        "--ids",
        "1,4",
        "--out",
        s(&p2),
    ]);
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    let v: Value = serde_json::from_slice(&fs::read(&p1).unwrap()).unwrap();
    assert_eq!(v["buildings"][1]["id"], 4);
    let probs = v["buildings"][0]["probabilities"].as_array().unwrap();
    assert!(probs
        .iter()
        .all(|p| (0.0..=1.0).contains(&p.as_f64().unwrap())));

    let report = t.path().join("r.json");
    let e = ok(&[
        "eval",
        "--data",
        data,
        "--model",
        s(&run_dir),
        "--samples",
        "200",
        "--report",
        s(&report),
    ]);
    assert!(e["cell_accuracy"].as_f64().unwrap() > 0.0);

    // a checkpoint that does not fit the config is bad input
    fs::write(run_dir.join("config.toml"), "[model]\nencoder = \"conv\"\n").unwrap();
    assert_eq!(
        code(&[
            "predict",
            "--model",
            s(&run_dir),
            "--data",
            data,
            "--out",
            s(&p1)
        ]),
        2
    );
}

#[test]
fn json_logs_and_format_reference() {
    let out = bin()
        .env("RUST_LOG", "info")
        .args(["--log-format", "json", "gen-data", "--out"])
        .arg(tempfile::tempdir().unwrap().path().join("d"))
        .args(["--count", "2", "--max-points", "200"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().next().expect("a log line");
    let v: Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["level"], "INFO");

    let f = run(&["inspect", "--formats"]);
    assert!(String::from_utf8(f.stdout).unwrap().contains("PGNN"));
}
