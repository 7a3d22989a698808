use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn npchunk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npchunk"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = npchunk(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A 400-sentence corpus split 300/100.
fn corpus(dir: &Path) {
    ok(
        dir,
        &[
            "--seed",
            "2",
            "synth",
            "--sentences",
            "400",
            "--test-size",
            "100",
            "--test-out",
            "test.conll",
            "--out",
            "train.conll",
        ],
    );
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect()
}

#[test]
fn missing_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["train", "nope.conll"][..],
        &["al-sim", "a.conll", "b.conll"],
        &["rules-eval", "r.txt", "g.conll"],
        &["cost-report", "events.jsonl"],
    ] {
        let out = npchunk(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("No such file"));
    }
    assert_eq!(
        npchunk(dir.path(), &["--batch-size", "x", "synth"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn malformed_corpus_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.conll"), "the DT I\ncat NN\n").unwrap();
    let out = npchunk(dir.path(), &["train", "bad.conll"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn train_is_deterministic_and_improves_on_baseline() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let report = ok(dir.path(), &["train", "train.conll", "--out", "a.txt"]);
    ok(dir.path(), &["train", "train.conll", "--out", "b.txt"]);
    let a = fs::read(dir.path().join("a.txt")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.txt")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# tool: npchunk"));
    assert!(text.contains("# seed: 0\n"));

    let field = |name: &str| -> f64 {
        report
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{name}: ")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(field("fmeasure") >= field("initial_fmeasure"));

    // The written chunker loads back despite its header.
    let chunker = npchunk::io::read_chunker(&dir.path().join("a.txt")).unwrap();
    assert!(!chunker.rules.is_empty());
}

#[test]
fn al_sim_rows_and_measures() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let common = [
        "--init-size",
        "50",
        "--batch-size",
        "50",
        "--iterations",
        "3",
    ];
    let run = |measure: &str, out: &str| {
        let mut args = common.to_vec();
        args.extend([
            "--measure",
            measure,
            "--out",
            out,
            "al-sim",
            "train.conll",
            "test.conll",
        ]);
        ok(dir.path(), &args);
        fs::read_to_string(dir.path().join(out)).unwrap()
    };
    let fc = run("f-complement", "fc.csv");
    let ve = run("vote-entropy", "ve.csv");
    assert_eq!(data_rows(&fc).len(), 4);
    assert_eq!(data_rows(&ve).len(), 4);
    assert!(fc.contains("# measure: f-complement"));
    assert!(ve.contains("# measure: vote-entropy"));
    assert_ne!(fc, ve);
    assert_eq!(fc, run("f-complement", "fc2.csv"));

    let mut args = common.to_vec();
    args.extend([
        "al-sim",
        "train.conll",
        "test.conll",
        "--sequential-out",
        "seq.csv",
    ]);
    let stdout = ok(dir.path(), &args);
    assert_eq!(stdout, fc);
    let seq = fs::read_to_string(dir.path().join("seq.csv")).unwrap();
    assert!(seq.contains("# strategy: sequential"));
    assert_eq!(data_rows(&seq).len(), 4);
}

#[test]
fn config_file_loses_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    fs::write(
        dir.path().join("run.toml"),
        "seed = 9\n[al]\ninit_size = 50\nbatch_size = 40\niterations = 1\n",
    )
    .unwrap();
    let csv = ok(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "--batch-size",
            "30",
            "al-sim",
            "train.conll",
            "test.conll",
        ],
    );
    assert!(csv.contains("# seed: 9\n"));
    assert!(csv.contains("# batch_size: 30\n"));
    assert!(csv.contains("# init_size: 50\n"));
    fs::write(dir.path().join("bad.toml"), "[al]\nbatchsize = 3\n").unwrap();
    assert_eq!(
        npchunk(dir.path(), &["--config", "bad.toml", "synth"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn rules_eval_reports() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    fs::write(dir.path().join("empty.txt"), "").unwrap();
    let out = ok(dir.path(), &["rules-eval", "empty.txt", "test.conll"]);
    assert!(out.contains("\nfmeasure: 0.000000\n"));

    fs::write(
        dir.path().join("r.txt"),
        "{ _DT::? _JJ::* _NN::+ }\n\n{ oops\n",
    )
    .unwrap();
    let raw = npchunk(dir.path(), &["rules-eval", "r.txt", "test.conll"]);
    assert!(raw.status.success());
    let stderr = String::from_utf8_lossy(&raw.stderr);
    assert!(stderr.contains("r.txt:3:"), "{stderr}");
    let stdout = String::from_utf8_lossy(&raw.stdout);
    assert!(stdout.contains("rules: 1\n"));
    assert!(stdout.contains("diagnostics: 1\n"));
    assert!(stdout.contains("\n1,"));
}

#[test]
fn cost_report_sums_labor() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = ok(dir.path(), &["cost-report", "empty.jsonl"]);
    assert!(out.contains("# params: defaults\n"));
    assert!(out.contains("labor_hours: 0.000000\n"));
    assert!(out.contains("cost: 0.00\n"));

    fs::write(
        dir.path().join("p.toml"),
        "idc = 5\ns0 = 100\nac_tb = 0.1\n",
    )
    .unwrap();
    let out = ok(
        dir.path(),
        &["cost-report", "empty.jsonl", "--params", "p.toml"],
    );
    assert!(out.contains("cost: 15.00\n"), "{out}");

    // Hand sums: 10 + 20 minutes of work, 3 minutes of machine time between.
    let events = [
        r#"{"seconds":0,"kind":"batch-served","payload":0}"#,
        r#"{"seconds":600,"kind":"annotation-submitted","payload":0}"#,
        r#"{"seconds":780,"kind":"batch-served","payload":1}"#,
        r#"{"seconds":1980,"kind":"annotation-submitted","payload":1}"#,
    ]
    .join("\n");
    fs::write(dir.path().join("ev.jsonl"), events).unwrap();
    let out = ok(dir.path(), &["cost-report", "ev.jsonl"]);
    assert!(out.contains("labor_minutes: 30.000\n"), "{out}");
    assert!(out.contains("cost: 6.12\n"), "{out}");

    fs::write(dir.path().join("bad.jsonl"), "{\"seconds\":1}\n{}\n").unwrap();
    assert_eq!(
        npchunk(dir.path(), &["cost-report", "bad.jsonl"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn cost_report_reads_session_logs_with_curve() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let create = r#"{"seq":0,"ts_ms":1000000,"command":{"type":"create","id":"s1","mode":"rule-writing","config":{}}}"#;
    let r1 = r#"{"seq":1,"ts_ms":1600000,"command":{"type":"rules","text":"{ _NN }"}}"#;
    let r2 =
        r#"{"seq":2,"ts_ms":2800000,"command":{"type":"rules","text":"{ _DT::? _JJ::* _NN::+ }"}}"#;
    fs::write(dir.path().join("log.jsonl"), [create, r1, r2].join("\n")).unwrap();
    let out = ok(
        dir.path(),
        &["cost-report", "log.jsonl", "--gold", "test.conll"],
    );
    assert!(out.contains("# method: rule-writing\n"));
    assert!(out.contains("labor_minutes: 30.000\n"), "{out}");
    let curve: Vec<&str> = out
        .lines()
        .skip_while(|l| !l.starts_with("minutes,"))
        .collect();
    assert_eq!(curve.len(), 3);
    assert!(curve[1].starts_with("10.000,"));
    assert!(curve[2].starts_with("30.000,"));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &["--seed", "4", "synth", "--sentences", "50"]);
    let b = ok(dir.path(), &["--seed", "4", "synth", "--sentences", "50"]);
    let c = ok(dir.path(), &["--seed", "5", "synth", "--sentences", "50"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(npchunk_core::corpus::parse_conll(&a).unwrap().len(), 50);
}
