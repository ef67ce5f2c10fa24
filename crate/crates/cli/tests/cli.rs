use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kgrerank"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const GRAPH: &str = "\
alice\tparent_of\tbob
bob\tparent_of\tcarol
carol\tparent_of\tdave
alice\tlikes\tcarol
dave\tlikes\talice
eve\tparent_of\talice
";

const RUN: &str = "\
q1 Q0 alice 1 9.5 bm25
q1 Q0 bob 2 7.25 bm25
q1 Q0 carol 3 7.25 bm25
q1 Q0 dave 4 1 bm25
q2 Q0 eve 1 3 bm25
q2 Q0 bob 2 2 bm25
";

const QRELS: &str = "\
q1 0 carol 2
q1 0 dave 1
q2 0 eve 1
";

const ANN: &str = r#"[{"query_id":"q1","interpretations":[[{"entity":"dave","confidence":0.9}]]},{"query_id":"q2","interpretations":[[{"entity":"bob","confidence":1.0}]]}]"#;

const EMB: &str = "\
5 2
alice 1 0
bob 0.5 0.5
carol 0 1
dave 0.1 1
eve -1 0
";

fn fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("g.tsv"), GRAPH).unwrap();
    fs::write(dir.path().join("bm25.run"), RUN).unwrap();
    fs::write(dir.path().join("q.qrels"), QRELS).unwrap();
    fs::write(dir.path().join("ann.json"), ANN).unwrap();
    fs::write(dir.path().join("emb.txt"), EMB).unwrap();
    dir
}

fn ranking(run: &str) -> Vec<(String, String)> {
    run.lines()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_owned(), f[2].to_owned())
        })
        .collect()
}

#[test]
fn help_exits_zero_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let subcommands: &[&[&str]] = &[
        &[],
        &["ingest"],
        &["walks"],
        &["train"],
        &["train", "sgns"],
        &["train", "joint"],
        &["train", "complex"],
        &["rerank"],
        &["eval"],
        &["compare"],
        &["coherence"],
        &["lean"],
        &["union"],
        &["nearest"],
    ];
    for path in subcommands {
        let mut args = path.to_vec();
        args.push("--help");
        let o = run(dir.path(), &args);
        assert_eq!(code(&o), 0, "{args:?}");
        let help = String::from_utf8_lossy(&o.stdout);
        assert!(help.contains("--seed"), "{args:?}");
        // Every option line carries a description, not just a name and default.
        for line in help.lines().skip_while(|l| !l.starts_with("Options:")).skip(1) {
            let t = line.trim_start();
            if !t.starts_with('-') {
                continue;
            }
            let described = t
                .split("  ")
                .skip(1)
                .map(str::trim)
                .any(|part| !part.is_empty() && !part.starts_with('['));
            assert!(described, "{args:?}: undocumented option `{t}`");
        }
    }
}

#[test]
fn ingest_counts_and_usage_error() {
    let dir = fixture();
    let o = run(dir.path(), &["ingest", "--triples", "g.tsv", "--out", "kg"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("entities\t5\n"), "{out}");
    assert!(out.contains("relations\t2\n"), "{out}");
    assert!(out.contains("triples\t6\n"), "{out}");
    assert!(dir.path().join("kg/triples.tsv").exists());
    assert!(dir.path().join("kg/redirects.tsv").exists());

    let o = run(dir.path(), &["ingest", "--out", "kg"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_file_is_io_failure() {
    let dir = fixture();
    let o = run(dir.path(), &["eval", "--run", "absent.run", "--qrels", "q.qrels"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_run_is_validation_failure_with_line() {
    let dir = fixture();
    fs::write(dir.path().join("bad.run"), "q1 Q0 a 1 2.0 x\nq1 Q0 b 2 oops x\n").unwrap();
    let o = run(dir.path(), &["eval", "--run", "bad.run", "--qrels", "q.qrels"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn joint_without_docs_is_validation_failure() {
    let dir = fixture();
    let o = run(dir.path(), &["train", "joint", "--out", "j.txt"]);
    assert_eq!(code(&o), 1);
    let o = run(dir.path(), &["train", "sgns", "--out", "s.txt"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn rerank_lambda_zero_keeps_order() {
    let dir = fixture();
    let o = run(
        dir.path(),
        &[
            "rerank", "--run", "bm25.run", "--ann", "ann.json", "--emb", "emb.txt", "--lambda", "0",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(ranking(&String::from_utf8(o.stdout).unwrap()), ranking(RUN));

    // Full weight on the embedding moves dave (nearest to carol's direction) up.
    let o = run(
        dir.path(),
        &[
            "rerank", "--run", "bm25.run", "--ann", "ann.json", "--emb", "emb.txt", "--lambda", "1",
        ],
    );
    assert_eq!(code(&o), 0);
    let r = ranking(&String::from_utf8(o.stdout).unwrap());
    assert_eq!(r[0].1, "dave");
}

#[test]
fn lambda_sweep_needs_qrels() {
    let dir = fixture();
    let base = [
        "rerank",
        "--run",
        "bm25.run",
        "--ann",
        "ann.json",
        "--emb",
        "emb.txt",
        "--lambda-sweep",
        "0,0.5,1",
    ];
    let o = run(dir.path(), &base);
    assert_eq!(code(&o), 1);
    let mut args = base.to_vec();
    args.extend(["--qrels", "q.qrels"]);
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
}

#[test]
fn eval_writes_per_query_and_all_rows() {
    let dir = fixture();
    let o = run(
        dir.path(),
        &["eval", "--run", "bm25.run", "--qrels", "q.qrels", "--k", "10,100"],
    );
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("q1,")), "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("ALL,")), "{csv}");
}

#[test]
fn config_values_yield_to_flags() {
    let dir = fixture();
    fs::write(dir.path().join("cfg.toml"), "seed = 7\n[rerank]\nlambda = 1.0\n").unwrap();
    let rerank = ["rerank", "--run", "bm25.run", "--ann", "ann.json", "--emb", "emb.txt"];

    let mut args = vec!["--config", "cfg.toml"];
    args.extend(rerank);
    let from_config = run(dir.path(), &args);
    assert_eq!(
        code(&from_config),
        0,
        "{}",
        String::from_utf8_lossy(&from_config.stderr)
    );
    let mut args = rerank.to_vec();
    args.extend(["--lambda", "1"]);
    let explicit_one = run(dir.path(), &args);
    assert_eq!(from_config.stdout, explicit_one.stdout);

    let mut args = vec!["--config", "cfg.toml"];
    args.extend(rerank);
    args.extend(["--lambda", "0"]);
    let flag_wins = run(dir.path(), &args);
    assert_eq!(ranking(&String::from_utf8(flag_wins.stdout).unwrap()), ranking(RUN));

    fs::write(dir.path().join("broken.toml"), "lambda = [").unwrap();
    let mut args = vec!["--config", "broken.toml"];
    args.extend(rerank);
    assert_eq!(code(&run(dir.path(), &args)), 1);
}

#[test]
fn training_is_byte_identical_per_seed() {
    let dir = fixture();
    let train = |out: &str, seed: &str| {
        let o = run(
            dir.path(),
            &[
                "--seed",
                seed,
                "train",
                "sgns",
                "--graph",
                "g.tsv",
                "--walks",
                "10",
                "--dim",
                "8",
                "--epochs",
                "2",
                "--out",
                out,
                "--loss-log",
                &format!("{out}.loss"),
            ],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.path().join(out)).unwrap()
    };
    let a = train("a.txt", "5");
    let b = train("b.txt", "5");
    let c = train("c.txt", "6");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(
        fs::read(dir.path().join("a.txt.loss")).unwrap(),
        fs::read(dir.path().join("b.txt.loss")).unwrap()
    );
}

#[test]
fn complex_reports_mrr() {
    let dir = fixture();
    fs::write(dir.path().join("test.tsv"), "bob\tlikes\tdave\n").unwrap();
    let o = run(
        dir.path(),
        &[
            "train", "complex", "--graph", "g.tsv", "--test", "test.tsv", "--dim", "8", "--epochs", "20", "--out",
            "c.txt",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("filtered_mrr\t"), "{out}");
    assert!(out.contains("random_mrr\t"), "{out}");
    assert!(dir.path().join("c.relations.txt").exists());

    fs::write(dir.path().join("unknown.tsv"), "bob\tlikes\tzed\n").unwrap();
    let o = run(
        dir.path(),
        &[
            "train",
            "complex",
            "--graph",
            "g.tsv",
            "--test",
            "unknown.tsv",
            "--epochs",
            "1",
            "--out",
            "c.txt",
        ],
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn lean_union_and_nearest() {
    let dir = fixture();
    let o = run(dir.path(), &["lean", "--system", "ann.json", "--gold", "ann.json"]);
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("MACRO,1.0000")), "{csv}");

    let o = run(dir.path(), &["union", "--ann", "ann.json", "--ann", "ann.json"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("\"dave\""));

    let o = run(
        dir.path(),
        &["nearest", "--emb", "emb.txt", "--token", "carol", "-n", "1"],
    );
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("dave\t"));
    let o = run(dir.path(), &["nearest", "--emb", "emb.txt", "--token", "zed"]);
    assert_eq!(code(&o), 1);
}
