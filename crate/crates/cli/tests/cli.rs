use std::path::Path;
use std::process::{Command, Output};

fn genret(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genret"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_kind(o: &Output) -> String {
    let line = String::from_utf8_lossy(&o.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).expect("stderr is one JSON record");
    v["error"]["kind"].as_str().unwrap().to_owned()
}

const TINY: [&str; 10] = [
    "--set",
    "n_items=30",
    "--set",
    "dim=8",
    "--set",
    "hidden=16",
    "--set",
    "steps_memorize=25",
    "--set",
    "steps_retrieve=25",
];

#[test]
fn inspect_prints_each_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(genret(d, &["synth", "--n", "20", "--dim", "4", "--out", "c.jsonl"]).status.success());
    for (scheme, out) in [("atomic", "a"), ("numeric", "n")] {
        let o = genret(d, &["assign-ids", "--scheme", scheme, "--corpus", "c.jsonl", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = genret(d, &["inspect", "--idmap", "a/idmap.tsv", "--item", "0"]);
    assert_eq!(stdout(&o), "atomic: I_0\n");

    // numeric identifiers spell the item's rank in a seeded permutation
    let rows = std::fs::read_to_string(d.join("n/idmap.tsv")).unwrap();
    let item5 = rows
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .find(|(_, rest)| rest == &"numeric\t5")
        .map(|(item, _)| item.to_owned())
        .expect("some item has rank 5");
    let o = genret(d, &["inspect", "--idmap", "n/idmap.tsv", "--idmap", "a/idmap.tsv", "--item", &item5]);
    assert_eq!(stdout(&o), format!("numeric: 5\natomic: I_{item5}\n"));

    let o = genret(d, &["inspect", "--idmap", "a/idmap.tsv", "--item", "20"]);
    assert!(!o.status.success());
    assert_eq!(error_kind(&o), "UnknownItem");
}

#[test]
fn missing_corpus_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = genret(
        d,
        &["pipeline", "--set", "corpus=\"absent.jsonl\"", "--set", "queries=\"absent-q.jsonl\"", "--out-dir", "run"],
    );
    assert!(!o.status.success());
    assert_eq!(error_kind(&o), "MissingPath");
    assert!(!d.join("run").exists());
}

#[test]
fn pipeline_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut first = vec!["pipeline", "--out-dir", "a"];
    first.extend(TINY);
    let o = genret(d, &first);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut second = vec!["pipeline", "--out-dir", "b"];
    second.extend(TINY);
    assert!(genret(d, &second).status.success());

    for name in ["corpus.jsonl", "idmap.tsv", "vocab.txt", "checkpoint.bin", "results.tsv", "report.csv"] {
        let a = std::fs::read(d.join("a").join(name)).unwrap();
        let b = std::fs::read(d.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    let report = std::fs::read_to_string(d.join("a/report.csv")).unwrap();
    assert!(report.starts_with("#!genret version="));
    assert!(report.contains("seeds=data:7,identifier:0,training:0"));

    first.push("--resume");
    let o = genret(d, &first);
    assert!(o.status.success());
    assert_eq!(stdout(&o).matches("skipped").count(), 5);
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: [&[&str]; 5] = [
        &["synth", "--n", "30", "--dim", "8", "--out", "c.jsonl"],
        &["assign-ids", "--scheme", "structured", "--k", "3", "--c", "5", "--corpus", "c.jsonl", "--out", "ids"],
        &[
            "train", "--corpus", "c.jsonl", "--queries", "queries.jsonl", "--idmap", "ids/idmap.tsv", "--out", "m",
            "--hidden", "16", "--steps-memorize", "10", "--steps-retrieve", "10",
        ],
        &[
            "retrieve", "--checkpoint", "m/checkpoint.bin", "--idmap", "ids/idmap.tsv", "--query-file", "queries.jsonl",
            "--corpus", "c.jsonl", "--beam", "5", "--out", "r.tsv",
        ],
        &["eval", "--results", "r.tsv", "--queries", "queries.jsonl", "--out", "report.csv"],
    ];
    for args in steps {
        let o = genret(d, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let report = std::fs::read_to_string(d.join("report.csv")).unwrap();
    let row = report.lines().last().unwrap();
    assert!(row.starts_with("structured,5,true,true,"), "{row}");
    assert!(row.ends_with(",1.000000"), "constrained validity must be 1: {row}");

    // a vocabulary from another scheme does not fit the checkpoint
    assert!(genret(d, &["assign-ids", "--scheme", "atomic", "--corpus", "c.jsonl", "--out", "other"]).status.success());
    let o = genret(
        d,
        &[
            "retrieve", "--checkpoint", "m/checkpoint.bin", "--idmap", "other/idmap.tsv", "--query-file", "queries.jsonl",
            "--out", "x.tsv",
        ],
    );
    assert_eq!(error_kind(&o), "Checkpoint");
}
