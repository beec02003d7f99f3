//! End-to-end workflow through the binary: train, inspect, foldin, eval,
//! bench, plus exit-code and reproducibility contracts.

use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_warmfold"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output, context: &str) {
    assert!(
        out.status.success(),
        "{context} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Two user communities over 40 items with timestamped drift: a handful of
/// users migrate to the other block late in time.
fn write_toy_dataset(path: &Path) {
    let users = 30usize;
    let items = 40usize;
    let half_u = users / 2;
    let half_i = items / 2;
    let mut csv = String::from("# toy two-community dataset\nuser,item,timestamp\n");
    let mut t = 0i64;
    // dense training-era history
    for round in 0..10 {
        for u in 0..users {
            let home = if u < half_u { 0 } else { half_i };
            let item = home + (u * 3 + round * 7) % half_i;
            writeln!(csv, "u{u},i{item},{t}").unwrap();
            t += 1;
        }
    }
    // warm era: users 0..4 switch blocks
    for round in 0..8 {
        for u in 0..users {
            let block = if u < 4 {
                half_i // flipped
            } else if u < half_u {
                0
            } else {
                half_i
            };
            let item = block + (u * 5 + round * 11) % half_i;
            writeln!(csv, "u{u},i{item},{t}").unwrap();
            t += 1;
        }
    }
    // test era continues the warm-era preferences
    for round in 0..8 {
        for u in 0..users {
            let block = if u < 4 {
                half_i
            } else if u < half_u {
                0
            } else {
                half_i
            };
            let item = block + (u * 7 + round * 13) % half_i;
            writeln!(csv, "u{u},i{item},{t}").unwrap();
            t += 1;
        }
    }
    std::fs::write(path, csv).unwrap();
}

fn common_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "--data",
        data,
        "--out",
        out,
        "--set",
        "model.rank=8",
        "--set",
        "model.epochs=12",
        "--set",
        "model.negatives=4",
        "--set",
        "model.batch_size=64",
        "--set",
        "model.learning_rate=0.01",
        "--set",
        "foldin.strategies=linear,sgd,mean,zero,exact_wls",
    ]
}

#[test]
fn full_workflow_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.csv");
    write_toy_dataset(&data);
    let data_s = data.to_str().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    // train
    let mut args = vec!["train"];
    args.extend(common_args(data_s, out_s));
    let output = run(&args);
    assert_ok(&output, "train");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("30 users"), "{stdout}");
    assert!(out.join("model.bin").exists());
    assert!(out.join("split_manifest.txt").exists());
    assert!(out.join("id_map.csv").exists());
    assert!(out.join("graph_stats.csv").exists());

    // inspect echoes the dims
    let model_path = out.join("model.bin");
    let output = run(&["inspect", model_path.to_str().unwrap()]);
    assert_ok(&output, "inspect");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("users:    30"), "{stdout}");
    assert!(stdout.contains("items:    40"), "{stdout}");
    assert!(stdout.contains("rank:     8"), "{stdout}");

    // foldin
    let mut args = vec!["foldin"];
    args.extend(common_args(data_s, out_s));
    let output = run(&args);
    assert_ok(&output, "foldin");
    for strategy in ["linear", "sgd", "mean", "zero", "exact_wls"] {
        assert!(
            out.join(format!("foldin_{strategy}.emb")).exists(),
            "missing {strategy} output"
        );
    }
    let timing = std::fs::read_to_string(out.join("timing.csv")).unwrap();
    assert!(timing.starts_with("user_id,strategy,time_ns,embedding_norm"));

    // the zero strategy exports embeddings identical to the model's rows
    let (model, _) = warmfold::persist::read_model::<f64>(&model_path).unwrap();
    let zero =
        warmfold::persist::read_foldin_embeddings::<f64>(out.join("foldin_zero.emb")).unwrap();
    assert!(!zero.entries.is_empty());
    for entry in &zero.entries {
        let row = model.user_embeddings.row(entry.user as usize);
        for (a, b) in entry.embedding.iter().zip(row) {
            assert!((a - b).abs() < 1e-6, "zero strategy altered an embedding");
        }
    }

    // the closed form must be faster per user than 50-step gradient descent
    let mean_time = |name: &str| {
        let rows: Vec<f64> = timing
            .lines()
            .skip(1)
            .filter(|l| l.split(',').nth(1) == Some(name))
            .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
            .collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    assert!(
        mean_time("linear") < mean_time("sgd"),
        "linear {} vs sgd {}",
        mean_time("linear"),
        mean_time("sgd")
    );

    // eval
    let mut args = vec!["eval"];
    args.extend(common_args(data_s, out_s));
    let output = run(&args);
    assert_ok(&output, "eval");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("strategy"), "{stdout}");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("strategy,hr@5,hr@10,ndcg@5,ndcg@10,coverage@10,users_evaluated,cold_served,model_fingerprint,dataset_fingerprint"));
    for line in metrics.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let hr5: f64 = fields[1].parse().unwrap();
        let hr10: f64 = fields[2].parse().unwrap();
        for v in &fields[1..6] {
            let v: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&v), "metric out of range: {line}");
        }
        assert!(hr5 <= hr10 + 1e-9, "HR@5 > HR@10: {line}");
    }

    // end-to-end reproducibility: identical config + seed => identical bytes
    let out2 = dir.path().join("run2");
    let out2_s = out2.to_str().unwrap();
    for sub in ["train", "foldin", "eval"] {
        let mut args = vec![sub];
        args.extend(common_args(data_s, out2_s));
        assert_ok(&run(&args), sub);
    }
    assert_eq!(
        std::fs::read(out.join("model.bin")).unwrap(),
        std::fs::read(out2.join("model.bin")).unwrap(),
        "same seed must reproduce the model container byte for byte"
    );
    assert_eq!(
        std::fs::read(out.join("metrics.csv")).unwrap(),
        std::fs::read(out2.join("metrics.csv")).unwrap(),
        "same config must reproduce metrics.csv byte for byte"
    );
}

#[test]
fn bench_emits_table_and_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let output = run(&[
        "bench",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "bench.sizes=1000,2000",
        "--set",
        "bench.trials=10",
        "--set",
        "bench.sgd_trials=2",
        "--set",
        "bench.rank=8",
        "--set",
        "sgd.steps=5",
    ]);
    assert_ok(&output, "bench");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(
        stdout.contains("fitted log-log exponent [linear]"),
        "{stdout}"
    );
    let csv = std::fs::read_to_string(out.join("scaling.csv")).unwrap();
    assert!(csv.starts_with("catalogue_size,strategy,rank,trials,mean_ns,std_ns,p50_ns"));
    assert_eq!(csv.lines().count(), 5); // header + 2 sizes x 2 strategies
}

#[test]
fn usage_errors_exit_one() {
    let output = run(&["no-such-command"]);
    assert_eq!(output.status.code(), Some(1));

    let output = run(&["train", "--set", "model.rank"]);
    assert_eq!(output.status.code(), Some(1), "malformed --set");

    let output = run(&["train", "--set", "bogus.key=1"]);
    assert_eq!(output.status.code(), Some(1), "unknown key");
}

#[test]
fn data_errors_exit_two() {
    let output = run(&["train", "--data", "/definitely/not/here.csv"]);
    assert_eq!(output.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "u1,i1,10\nu2,i2,notatime\n").unwrap();
    let output = run(&["train", "--data", bad.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));

    // corrupt model container
    let model = dir.path().join("model.bin");
    std::fs::write(&model, b"WFLD1garbage").unwrap();
    let output = run(&["inspect", model.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn tampered_model_fails_checksum_on_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.csv");
    write_toy_dataset(&data);
    let out = dir.path().join("run");
    let mut args = vec!["train"];
    args.extend(common_args(data.to_str().unwrap(), out.to_str().unwrap()));
    assert_ok(&run(&args), "train");

    let model = out.join("model.bin");
    let mut bytes = std::fs::read(&model).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x55;
    std::fs::write(&model, &bytes).unwrap();
    let output = run(&["inspect", model.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("checksum"), "{stderr}");
}

#[test]
fn fingerprint_mismatch_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.csv");
    write_toy_dataset(&data);
    let data_s = data.to_str().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    let mut args = vec!["train"];
    args.extend(common_args(data_s, out_s));
    assert_ok(&run(&args), "train");
    let mut args = vec!["foldin"];
    args.extend(common_args(data_s, out_s));
    assert_ok(&run(&args), "foldin");

    // retrain with a different seed: the fold-in outputs no longer match
    let mut args = vec!["train"];
    args.extend(common_args(data_s, out_s));
    args.extend(["--seed", "777"]);
    assert_ok(&run(&args), "retrain");
    let mut args = vec!["eval"];
    args.extend(common_args(data_s, out_s));
    let output = run(&args);
    assert_eq!(
        output.status.code(),
        Some(4),
        "stale fold-in outputs must hard-fail\nstderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    // a dataset edit invalidates the manifest chain
    let mut args = vec!["train"];
    args.extend(common_args(data_s, out_s));
    assert_ok(&run(&args), "train again");
    let mut csv = std::fs::read_to_string(&data).unwrap();
    csv.push_str("u0,i1,999999\n");
    std::fs::write(&data, csv).unwrap();
    let mut args = vec!["foldin"];
    args.extend(common_args(data_s, out_s));
    let output = run(&args);
    assert_eq!(output.status.code(), Some(4));
}

#[test]
fn min_count_filters_shrink_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.csv");
    // user u9 appears once; items are shared
    let mut csv = String::new();
    for t in 0..30 {
        writeln!(csv, "u{},i{},{}", t % 3, t % 5, t).unwrap();
    }
    csv.push_str("u9,i0,31\n");
    std::fs::write(&data, &csv).unwrap();
    let out = dir.path().join("run");
    let output = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "dataset.min_user_events=2",
        "--set",
        "model.rank=2",
        "--set",
        "model.epochs=2",
    ]);
    assert_ok(&output, "train with filters");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(
        stdout.contains("3 users"),
        "u9 should be filtered: {stdout}"
    );
}
