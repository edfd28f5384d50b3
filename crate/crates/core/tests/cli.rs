use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use halluguard::mockgen::{generate, InjectRates, MockSpec};
use halluguard::pipeline::{default_rules, CycleLedger, DetectionSignals};
use halluguard::records::records_to_string;
use serde_json::Value;
use tempfile::TempDir;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_halluguard"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, content: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    fn corpus(&self, spec: &MockSpec) -> (PathBuf, PathBuf) {
        let (records, store) = generate(spec).unwrap();
        let c = self.write("corpus.jsonl", &records_to_string(&records).unwrap());
        let st = self.write("store.json", &store.to_json().unwrap());
        (c, st)
    }
}

fn injected(n: usize) -> MockSpec {
    MockSpec {
        n_records: n,
        inject_rates: InjectRates {
            model: 0.1,
            context: 0.1,
            data: 0.1,
        },
        seed: 17,
        ..Default::default()
    }
}

#[test]
fn empty_corpus_exits_2() {
    let f = Fixture::new();
    let empty = f.write("empty.jsonl", "\n\n");
    let out = cli(&["analyze", "--input", s(&empty)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no records"));
}

#[test]
fn missing_input_exits_1() {
    let out = cli(&["analyze", "--input", "/nonexistent/corpus.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn invalid_record_exits_2_with_path() {
    let f = Fixture::new();
    let bad = f.write(
        "bad.jsonl",
        r#"{"id": "a", "prompt": "p", "samples": [{"text": "x", "token_dists": [{"labels": ["a", "b"], "probs": [0.7, 0.7]}]}]}"#,
    );
    let out = cli(&["analyze", "--input", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("line 1") && err.contains("samples[0].token_dists[0]"),
        "{err}"
    );
}

#[test]
fn usage_errors_exit_1() {
    let f = Fixture::new();
    let (corpus, _) = f.corpus(&MockSpec {
        n_records: 5,
        ..Default::default()
    });
    assert_eq!(
        cli(&["calibrate", "--input", s(&corpus), "--kind", "platt"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
    let cfg = f.write("cfg.json", r#"{"cluster_threshold": 7}"#);
    assert_eq!(
        cli(&["analyze", "--input", s(&corpus), "--config", s(&cfg)])
            .status
            .code(),
        Some(1)
    );
    let cfg = f.write("cfg2.json", r#"{"rules_path": "missing.json"}"#);
    assert_eq!(
        cli(&["analyze", "--input", s(&corpus), "--config", s(&cfg)])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn analyze_report_rows_and_schema() {
    let f = Fixture::new();
    let (corpus, store) = f.corpus(&injected(60));
    let report = f.path("report.json");
    let out = cli(&[
        "analyze",
        "--input",
        s(&corpus),
        "--store",
        s(&store),
        "--output",
        s(&report),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let rows = v["records"].as_array().unwrap();
    assert_eq!(rows.len(), 60);
    assert_eq!(v["n_records"], 60);
    for row in rows {
        let parsed: DetectionSignals = serde_json::from_value(row.clone()).unwrap();
        assert_eq!(&serde_json::to_value(&parsed).unwrap(), row);
        for key in [
            "h_p_mean",
            "h_s",
            "consensus_support",
            "self_confidence",
            "race",
            "fact_verdicts",
        ] {
            assert!(row.get(key).is_some(), "missing {key}");
        }
    }
    assert!(v["aggregates"]["fact_mismatches"].as_u64().unwrap() > 0);

    let md = cli(&["analyze", "--input", s(&corpus), "--format", "md"]);
    let text = String::from_utf8(md.stdout).unwrap();
    assert!(text.starts_with("# Detection report"));
    assert!(text.contains("| mock-00059 |"));
}

#[test]
fn calibrate_recovers_mock_temperature() {
    let f = Fixture::new();
    let (corpus, _) = f.corpus(&MockSpec {
        n_records: 3000,
        true_temperature: 1.5,
        seed: 5,
        ..Default::default()
    });
    let map = f.path("map.json");
    let out = cli(&[
        "calibrate",
        "--input",
        s(&corpus),
        "--kind",
        "temperature",
        "--output",
        s(&map),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("NLL"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&map).unwrap()).unwrap();
    assert_eq!(v["kind"], "temperature");
    let t = v["T"].as_f64().unwrap();
    assert!((t - 1.5).abs() < 0.15, "{t}");
}

#[test]
fn isotonic_on_monotone_data_is_step_identity() {
    let f = Fixture::new();
    let lines: Vec<String> = [(0.1, false), (0.3, false), (0.6, true), (0.9, true)]
        .iter()
        .enumerate()
        .map(|(i, (c, ok))| {
            format!(
                r#"{{"id": "r{i}", "prompt": "p", "samples": [{{"text": "x", "self_confidence": {c}}}], "ground_truth": {{"is_hallucinated": {}}}}}"#,
                !ok
            )
        })
        .collect();
    let corpus = f.write("mono.jsonl", &lines.join("\n"));
    let out = cli(&["calibrate", "--input", s(&corpus), "--kind", "isotonic"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["kind"], "isotonic");
    // already monotone: every point keeps its own step at its own label
    assert_eq!(v["values"], serde_json::json!([0.0, 0.0, 1.0, 1.0]));
    assert_eq!(v["breakpoints"], serde_json::json!([0.1, 0.3, 0.6, 0.9]));
}

#[test]
fn calibrate_without_labels_exits_2() {
    let f = Fixture::new();
    let corpus = f.write(
        "nolabel.jsonl",
        r#"{"id": "a", "prompt": "p", "samples": [{"text": "x"}]}"#,
    );
    assert_eq!(
        cli(&["calibrate", "--input", s(&corpus), "--kind", "temperature"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        cli(&["calibrate", "--input", s(&corpus), "--kind", "isotonic"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn pipeline_clean_corpus_has_no_tiered_records() {
    let f = Fixture::new();
    let (corpus, store) = f.corpus(&MockSpec {
        n_records: 80,
        ..Default::default()
    });
    let out = cli(&[
        "pipeline",
        "--input",
        s(&corpus),
        "--store",
        s(&store),
        "--format",
        "md",
    ]);
    assert!(out.status.success());
    let md = String::from_utf8(out.stdout).unwrap();
    assert!(md.contains("| Tiered | 0 |"), "{md}");
    assert!(md.contains("| Residual errors | 0 |"));
}

#[test]
fn pipeline_counts_match_injection_labels() {
    let f = Fixture::new();
    let spec = injected(300);
    let (corpus, store) = f.corpus(&spec);
    let ledger_path = f.path("ledger.json");
    let summary = f.path("ledger.md");
    let out = cli(&[
        "pipeline",
        "--input",
        s(&corpus),
        "--store",
        s(&store),
        "--output",
        s(&ledger_path),
        "--summary",
        s(&summary),
        "--timestamp",
        "2026-01-01T00:00:00Z",
    ]);
    assert!(out.status.success());
    let ledger: CycleLedger =
        serde_json::from_str(&std::fs::read_to_string(&ledger_path).unwrap()).unwrap();
    let (records, _) = generate(&spec).unwrap();
    for class in halluguard::records::FailureClass::ALL {
        let expected = records
            .iter()
            .filter(|r| r.ground_truth.as_ref().unwrap().failure_class == Some(class))
            .count();
        assert_eq!(ledger.summary.per_tier[&class], expected, "{class}");
    }
    assert!(ledger
        .entries
        .iter()
        .all(|e| e.timestamp == "2026-01-01T00:00:00Z"));
    assert_eq!(
        ledger.summary.pass + ledger.summary.tiered,
        ledger.summary.total
    );
    assert!(std::fs::read_to_string(&summary)
        .unwrap()
        .contains("## Rules fired"));
}

#[test]
fn pipeline_without_store_skips_data_rules() {
    let f = Fixture::new();
    let (corpus, _) = f.corpus(&MockSpec {
        inject_rates: InjectRates {
            data: 0.5,
            ..Default::default()
        },
        ..injected(40)
    });
    let out = cli(&["pipeline", "--input", s(&corpus)]);
    assert_eq!(out.status.code(), Some(0));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("warning") && err.contains("fact-mismatch"),
        "{err}"
    );
    let ledger: CycleLedger = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        ledger.summary.per_tier[&halluguard::records::FailureClass::Data],
        0
    );
}

#[test]
fn bad_rules_file_names_the_rule() {
    let f = Fixture::new();
    let (corpus, _) = f.corpus(&MockSpec {
        n_records: 3,
        ..Default::default()
    });
    let rules = f.write(
        "rules.json",
        r#"[{"name": "gut-feeling", "signal": "vibes", "comparator": ">", "threshold": 0.5, "tier": "model"}]"#,
    );
    let out = cli(&["pipeline", "--input", s(&corpus), "--rules", s(&rules)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gut-feeling"));

    let good = f.write(
        "good.json",
        &serde_json::to_string(&default_rules()).unwrap(),
    );
    assert!(
        cli(&["pipeline", "--input", s(&corpus), "--rules", s(&good)])
            .status
            .success()
    );
}

#[test]
fn pipeline_validates_retry_records() {
    let f = Fixture::new();
    let flat = r#"{"labels": ["a", "b", "c", "d"], "probs": [0.25, 0.25, 0.25, 0.25]}"#;
    let sharp = r#"{"labels": ["a", "b", "c", "d"], "probs": [0.97, 0.01, 0.01, 0.01]}"#;
    let rec = |id: &str, d: &str| {
        format!(
            r#"{{"id": "{id}", "prompt": "p", "samples": [{{"text": "a", "token_dists": [{d}]}}]}}"#
        )
    };
    let corpus = f.write(
        "retry.jsonl",
        &[
            rec("q1", flat),
            rec("q1.retry", sharp),
            rec("q2", flat),
            rec("q2.retry", flat),
            rec("q3", flat),
        ]
        .join("\n"),
    );
    let out = cli(&["pipeline", "--input", s(&corpus)]);
    assert!(out.status.success());
    let ledger: Value = serde_json::from_slice(&out.stdout).unwrap();
    let outcomes: Vec<&str> = ledger["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["outcome"].as_str().unwrap())
        .collect();
    assert_eq!(outcomes, vec!["improved", "residual", "pending"]);
    assert_eq!(ledger["summary"]["residuals"], 1);
}

#[test]
fn race_and_factcheck_commands() {
    let f = Fixture::new();
    let (corpus, store) = f.corpus(&injected(50));
    let out = cli(&["race", "--input", s(&corpus)]);
    assert!(out.status.success());
    let rows: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 50);

    let out = cli(&[
        "factcheck",
        "--input",
        s(&corpus),
        "--store",
        s(&store),
        "--format",
        "md",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("Mismatches:"));

    let bad_store = f.write("dup.json", r#"{"k": {"value": 1}, "k": {"value": 2}}"#);
    assert_eq!(
        cli(&["factcheck", "--input", s(&corpus), "--store", s(&bad_store)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn mockgen_and_chunk_commands() {
    let f = Fixture::new();
    let spec = f.write("spec.json", r#"{"n_records": 7, "seed": 1}"#);
    let out_path = f.path("c.jsonl");
    let store_path = f.path("s.json");
    let out = cli(&[
        "mockgen",
        "--spec",
        s(&spec),
        "--out",
        s(&out_path),
        "--store-out",
        s(&store_path),
    ]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read_to_string(&out_path).unwrap().lines().count(),
        7
    );
    let bad = f.write("bad.json", r#"{"n_records": 0}"#);
    assert_eq!(cli(&["mockgen", "--spec", s(&bad)]).status.code(), Some(2));

    let doc = f.write("doc.txt", &"lorem ipsum dolor sit amet ".repeat(30));
    let out = cli(&[
        "chunk",
        "--input",
        s(&doc),
        "--target",
        "50",
        "--overlap",
        "0.2",
        "--fan-in",
        "2",
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["chunks"].as_array().unwrap().len() > 10);
    assert!(v["summary"]["tree"]["levels"].as_array().unwrap().len() > 1);
    assert_eq!(
        cli(&[
            "chunk",
            "--input",
            s(&doc),
            "--target",
            "50",
            "--overlap",
            "0.7"
        ])
        .status
        .code(),
        Some(2)
    );
}
