use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairr::ingest::{load_report, parse_manifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairr"))
}

fn toy(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn score_toy(dir: &Path) -> PathBuf {
    let table = dir.join("neutrality.tsv");
    ok(&["score-neutrality", "--collection", &s(&toy("collection.tsv")), "--out", &s(&table)]);
    table
}

fn eval_args<'a>(table: &'a str, qrels: &'a str, queries: &'a str) -> Vec<&'a str> {
    vec!["--neutrality", table, "--qrels", qrels, "--queries", queries, "--cutoff", "3"]
}

#[test]
fn score_neutrality_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let coll = dir.path().join("c.tsv");
    fs::write(&coll, "a\tthe weather is mild\nb\tshe said her piece\nc\the and she agreed\n").unwrap();
    let mut outputs = Vec::new();
    for name in ["one.tsv", "two.tsv"] {
        let out = dir.path().join(name);
        ok(&["score-neutrality", "--collection", &s(&coll), "--out", &s(&out)]);
        outputs.push(fs::read_to_string(out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let rows: Vec<&str> = outputs[0].lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows, ["a\t1", "b\t0", "c\t1"]);
}

#[test]
fn missing_wordlist_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let attrs = dir.path().join("attrs.toml");
    fs::write(&attrs, "tau = 1\n[[members]]\nname = \"a\"\nwordlist = \"nope.txt\"\n[[members]]\nname = \"b\"\nwordlist = \"nope2.txt\"\n").unwrap();
    let out = run(&[
        "score-neutrality",
        "--collection",
        &s(&toy("collection.tsv")),
        "--attributes",
        &s(&attrs),
        "--out",
        &s(&dir.path().join("n.tsv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.txt"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["eval"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    let out = run(&["eval", "--run", "/nonexistent/run", "--neutrality", "x", "--qrels", "y", "--queries", "z"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_report_round_trips_and_matches_toy_values() {
    let dir = tempfile::tempdir().unwrap();
    let table = s(&score_toy(dir.path()));
    let (qrels, queries, runf) = (s(&toy("qrels.txt")), s(&toy("queries.tsv")), s(&toy("run.txt")));
    for (format, name) in [("tsv", "r.tsv"), ("json", "r.json")] {
        let out = dir.path().join(name);
        let mut args = vec!["eval", "--run", &runf, "--format", format, "--set-fairness"];
        args.extend(eval_args(&table, &qrels, &queries));
        let out_s = s(&out);
        args.extend(["--out", &out_s]);
        ok(&args);
        let r = load_report(&out).unwrap();
        let q1 = r.row("q1").unwrap();
        assert!((q1.nfairr - 0.91972).abs() < 1e-5);
        assert!((r.aggregate.nfairr - 0.95986).abs() < 1e-5);
        assert!((q1.mrr - 1.0 / 3.0).abs() < 1e-12);
        assert!((q1.ndcg - 0.5).abs() < 1e-12);
        assert!(q1.set_nfairr.is_some());
    }
    let a = load_report(&dir.path().join("r.tsv")).unwrap();
    let b = load_report(&dir.path().join("r.json")).unwrap();
    assert_eq!(a.rows, b.rows);
}

#[test]
fn qrels_oracle_never_lowers_utility() {
    let dir = tempfile::tempdir().unwrap();
    let table = s(&score_toy(dir.path()));
    let (qrels, queries, runf) = (s(&toy("qrels.txt")), s(&toy("queries.tsv")), s(&toy("run.txt")));
    let mut reports = Vec::new();
    for (flag, name) in [(None, "plain.json"), (Some("--qrels-oracle"), "oracle.json")] {
        let out = s(&dir.path().join(name));
        let mut args = vec!["eval", "--run", &runf, "--format", "json", "--out", &out];
        args.extend(eval_args(&table, &qrels, &queries));
        args.extend(flag);
        ok(&args);
        reports.push(load_report(Path::new(&out)).unwrap());
    }
    for (a, b) in reports[0].rows.iter().zip(&reports[1].rows) {
        assert!(b.mrr >= a.mrr && b.ndcg >= a.ndcg && b.recall >= a.recall);
    }
    assert_eq!(reports[1].row("q1").unwrap().mrr, 1.0);
}

#[test]
fn baseline_adds_significance() {
    let dir = tempfile::tempdir().unwrap();
    let table = s(&score_toy(dir.path()));
    let (qrels, queries, runf) = (s(&toy("qrels.txt")), s(&toy("queries.tsv")), s(&toy("run.txt")));
    let base = s(&dir.path().join("base.tsv"));
    let mut args = vec!["eval", "--run", &runf, "--out", &base];
    args.extend(eval_args(&table, &qrels, &queries));
    ok(&args);
    let other = dir.path().join("other.run");
    fs::write(&other, fs::read_to_string(toy("run.txt")).unwrap().replace("d1 1 3.0", "d1 3 0.5").replace("d3 3 1.0", "d3 1 3.0")).unwrap();
    let (other_s, cmp) = (s(&other), s(&dir.path().join("cmp.tsv")));
    let mut args = vec!["eval", "--run", &other_s, "--baseline", &base, "--out", &cmp];
    args.extend(eval_args(&table, &qrels, &queries));
    ok(&args);
    let r = load_report(Path::new(&cmp)).unwrap();
    assert!(!r.significance.is_empty());
    assert!(r.significance.iter().all(|x| x.test.p.is_nan() || (0.0..=1.0).contains(&x.test.p)));
}

fn write_variations(dir: &Path) -> PathBuf {
    let good = "q1 Q0 d3 1 3 good\nq1 Q0 d1 2 2 good\nq1 Q0 d2 3 1 good\nq2 Q0 d5 1 3 good\nq2 Q0 d6 2 2 good\nq2 Q0 d4 3 1 good\n";
    let fair = "q1 Q0 d1 1 3 fair\nq1 Q0 d3 2 2 fair\nq1 Q0 d2 3 1 fair\nq2 Q0 d4 1 3 fair\nq2 Q0 d6 2 2 fair\nq2 Q0 d5 3 1 fair\n";
    fs::write(dir.join("good.run"), good).unwrap();
    fs::write(dir.join("fair.run"), fair).unwrap();
    fs::write(dir.join("base.run"), fs::read_to_string(toy("run.txt")).unwrap()).unwrap();
    let manifest = dir.join("manifest.tsv");
    fs::write(&manifest, "# id\tpath\nbase\tbase.run\ngood\tgood.run\nfair\tfair.run\n").unwrap();
    manifest
}

#[test]
fn tradeoff_sweeps_beta() {
    let dir = tempfile::tempdir().unwrap();
    let table = s(&score_toy(dir.path()));
    let manifest = s(&write_variations(dir.path()));
    let (qrels, queries) = (s(&toy("qrels.txt")), s(&toy("queries.tsv")));
    let mut args = vec!["tradeoff", "--manifest", &manifest, "--beta", "0,1,1e6"];
    args.extend(eval_args(&table, &qrels, &queries));
    let out = ok(&args);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("#fairr-tradeoff\tv1"));
    let rows: Vec<Vec<&str>> = text.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3, "{text}");
    assert_eq!(rows[0][0], "0");
    assert_eq!(rows[0][1], "good");
}

#[test]
fn tradeoff_rejects_more_folds_than_queries() {
    let dir = tempfile::tempdir().unwrap();
    let table = s(&score_toy(dir.path()));
    let manifest = s(&write_variations(dir.path()));
    let (qrels, queries) = (s(&toy("qrels.txt")), s(&toy("queries.tsv")));
    let mut args = vec!["tradeoff", "--manifest", &manifest, "--folds", "3"];
    args.extend(eval_args(&table, &qrels, &queries));
    assert_eq!(run(&args).status.code(), Some(2));
}

#[test]
fn sandbox_is_deterministic_and_feeds_tradeoff() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(
        &cfg,
        "[corpus]\nn_queries = 40\ndocs_per_query = 6\n\n[train]\nlambdas = [0.0, 1.0]\ncheckpoints = 2\n\
         utility_epochs = 3\nadversary_epochs = 2\njoint_epochs = 2\nprobe_epochs = 5\nhidden = 8\nembed = 4\nadv_hidden = 4\n",
    )
    .unwrap();
    let mut summaries = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(&["sandbox", "--config", &s(&cfg), "--seed", "7", "--out-dir", &s(&out)]);
        summaries.push(fs::read_to_string(out.join("summary.tsv")).unwrap());
    }
    assert_eq!(summaries[0], summaries[1]);
    let rows = summaries[0].lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, 1 + 2 * 2);

    let out = dir.path().join("a");
    let manifest = parse_manifest(&out.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.len(), rows);
    let p = |n: &str| s(&out.join(n));
    let text = String::from_utf8(
        ok(&[
            "tradeoff",
            "--manifest",
            &p("manifest.tsv"),
            "--neutrality",
            &p("neutrality.tsv"),
            "--qrels",
            &p("qrels.txt"),
            "--queries",
            &p("queries.tsv"),
            "--background-run",
            &p("background.run"),
            "--beta",
            "0,1",
            "--folds",
            "2",
            "--seed",
            "3",
        ])
        .stdout,
    )
    .unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn build_names_splits_by_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("names.csv");
    fs::write(&records, "Mary,F,900\nMary,M,10\nJohn,M,800\nJohn,F,5\nAlex,F,50\nAlex,M,50\nAnna,F,40\nPeter,M,300\n").unwrap();
    let out = dir.path().join("lists");
    ok(&["build-names", "--records", &s(&records), "--out-dir", &s(&out)]);
    let female = fs::read_to_string(out.join("female.txt")).unwrap();
    let male = fs::read_to_string(out.join("male.txt")).unwrap();
    assert!(female.contains("mary") && !female.contains("alex"));
    assert!(male.contains("john") && !male.contains("alex"));
    assert_eq!(female.lines().count(), male.lines().count());
}
