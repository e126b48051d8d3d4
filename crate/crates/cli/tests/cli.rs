use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_refinery");

fn corpus_fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/corpus/tiny.jsonl")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("REFINERY_API_KEY")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A working directory with the fixture corpus and a simulated-backend config.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(corpus_fixture(), dir.path().join("corpus.jsonl")).unwrap();
    fs::write(
        dir.path().join("refinery.toml"),
        "[backends.sim]\nkind = \"simulated\"\n\n[corpus]\npath = \"corpus.jsonl\"\n",
    )
    .unwrap();
    dir
}

#[test]
fn help_matches_snapshot() {
    let out = run(Path::new("."), &["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let snap = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots/help.txt");
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        fs::write(&snap, &text).unwrap();
    }
    assert_eq!(text, fs::read_to_string(&snap).unwrap());
    for name in ["p1-faith", "p1-comp", "p1-conc", "p2", "p3", "p4", "refeed", "dcr", "acueval"] {
        assert!(text.contains(name), "help lacks {name}");
    }
    for policy in ["fixed", "random", "last:DIM"] {
        assert!(text.contains(policy), "help lacks {policy}");
    }
}

#[test]
fn subcommand_help_lists_values() {
    let out = run(Path::new("."), &["experiment", "--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("--order-policy") && text.contains("acueval"));
}

#[test]
fn usage_errors_are_fatal() {
    let dir = workspace();
    let out = run(dir.path(), &["refine", "--pipeline", "p9", "--out", "x.jsonl"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("refeed"), "{}", stderr(&out));

    let out = run(dir.path(), &["--config", "missing.toml", "evaluate", "--out", "x.jsonl"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing.toml"));

    let out = run(dir.path(), &["refine", "--pipeline", "p4", "--order-policy", "sideways", "--out", "x.jsonl"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn evaluate_succeeds_offline() {
    let dir = workspace();
    let out = run(dir.path(), &["evaluate", "--out", "labels.jsonl"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("labels.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().all(|l| l.contains(r#""kind":"labels""#)));
}

#[test]
fn replay_misses_give_partial_then_fatal_exit() {
    let dir = workspace();
    let p = dir.path();
    let first_doc: String = fs::read_to_string(p.join("corpus.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"news-1\"") || l.contains("\"id\":\"news-1\""))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(p.join("news.jsonl"), &first_doc).unwrap();
    fs::write(
        p.join("record.toml"),
        "[backends.sim]\nkind = \"simulated\"\n[backends.model]\nkind = \"record\"\ninner = \"sim\"\ntape = \"tape.jsonl\"\n",
    )
    .unwrap();
    fs::write(p.join("replay.toml"), "[backends.model]\nkind = \"replay\"\ntape = \"tape.jsonl\"\n").unwrap();

    let rec = run(p, &["--config", "record.toml", "evaluate", "--backend", "model", "--corpus", "news.jsonl", "--out", "a.jsonl"]);
    assert_eq!(code(&rec), 0, "{}", stderr(&rec));

    // news-1 is on the tape, the other documents are not
    let partial = run(p, &["--config", "replay.toml", "evaluate", "--corpus", "corpus.jsonl", "--out", "b.jsonl"]);
    assert_eq!(code(&partial), 2, "{}", stderr(&partial));
    let b = fs::read_to_string(p.join("b.jsonl")).unwrap();
    assert_eq!(b.lines().filter(|l| l.contains(r#""kind":"labels""#)).count(), 2);
    assert_eq!(b.lines().filter(|l| l.contains(r#""kind":"failure""#)).count(), 4);

    let rest: String = fs::read_to_string(p.join("corpus.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.contains("news-1"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(p.join("rest.jsonl"), rest).unwrap();
    let fatal = run(p, &["--config", "replay.toml", "evaluate", "--corpus", "rest.jsonl", "--out", "c.jsonl"]);
    assert_eq!(code(&fatal), 1, "{}", stderr(&fatal));
}

#[test]
fn refine_is_deterministic_for_a_seed() {
    let dir = workspace();
    let args = |out: &str| ["refine", "--pipeline", "p3", "--order-policy", "random", "--seed", "5", "--out", out].map(String::from);
    let a = run(dir.path(), &args("a.jsonl").iter().map(String::as_str).collect::<Vec<_>>());
    let b = run(dir.path(), &args("b.jsonl").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!((code(&a), code(&b)), (0, 0), "{}", stderr(&a));
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(dir.path().join("b.jsonl")).unwrap());
}

#[test]
fn experiment_then_csv_report() {
    let dir = workspace();
    let out = run(
        dir.path(),
        &["experiment", "--seed", "2", "--pipeline", "p4", "--pipeline", "refeed", "--out", "exp"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["outcomes.jsonl", "report.md", "report.csv", "manifest.json"] {
        assert!(dir.path().join("exp").join(f).exists(), "{f} missing");
    }
    let report = run(
        dir.path(),
        &["report", "--outcome", "exp/outcomes.jsonl", "--format", "csv", "--resamples", "500"],
    );
    assert_eq!(code(&report), 0, "{}", stderr(&report));
    let csv = String::from_utf8(report.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("pipeline,dimension,before,after,delta,p_value,significant"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.len() == 7));
    assert!(rows.iter().any(|r| r[0] == "ReFeed" && r[1] == "average"));

    let md = run(dir.path(), &["report", "--outcome", "exp/outcomes.jsonl", "--resamples", "500"]);
    assert!(String::from_utf8(md.stdout).unwrap().contains("| Before"));
}

#[test]
fn strict_delta_flag_flips_the_verification_rule() {
    let dir = workspace();
    // m1 is already fully faithful and concise, so it cannot gain strictly
    fs::write(
        dir.path().join("strict.jsonl"),
        r#"{"kind":"document","id":"s1","format":"non_dialogue","text":"The cat sat on the mat. The dog barked at noon. Rain fell in the town."}
{"kind":"keyfacts","doc_id":"s1","facts":["The cat sat on the mat.","The dog barked at noon.","Rain fell in the town."]}
{"kind":"summary","doc_id":"s1","summarizer":"m1","sentences":["The cat sat on the mat."]}
{"kind":"summary","doc_id":"s1","summarizer":"m2","sentences":["The cat sat on the mat.","The zebra danced."]}
"#,
    )
    .unwrap();
    let lenient = run(dir.path(), &["build-dataset", "--corpus", "strict.jsonl", "--seed", "1", "--out", "a"]);
    let strict = run(
        dir.path(),
        &["build-dataset", "--corpus", "strict.jsonl", "--seed", "1", "--strict-delta", "--out", "b"],
    );
    assert_eq!((code(&lenient), code(&strict)), (0, 0), "{}", stderr(&strict));
    let count = |d: &str| fs::read_to_string(dir.path().join(d).join("train.jsonl")).unwrap().lines().count();
    assert_eq!(count("a"), 2);
    assert_eq!(count("b"), 1);
    let ledger = fs::read_to_string(dir.path().join("b/ledger.csv")).unwrap();
    assert!(ledger.starts_with("pipeline,reasoning strategy,feedback tier,original,format-filtered,verification-filtered,ratio"));
    assert!(ledger.contains(",2,2,1,50.00%"), "{ledger}");
}
