use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use welltyped::cfg::{size_lange_leiss, Grammar};
use welltyped::check::check_word;
use welltyped::oracle::enumerate_well_typed;
use welltyped::syntax::tokenize;
use welltyped::types::Context;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_welltyped"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("welltyped-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

const REDUCED: &str = "types : Int Bool\nb2i : Bool -> Int\nlit Int : 1\nlit Bool : true false\n";

fn reduced_file() -> (PathBuf, Context) {
    let path = scratch("reduced").join("reduced.ctx");
    fs::write(&path, REDUCED).unwrap();
    (path, Context::parse(REDUCED).unwrap().with_arity_bound(1))
}

#[test]
fn default_sample_matches_published_format() {
    let o = run(&["sample", "--n", "28", "--m", "52", "--seed", "5eed"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 52);
    assert_eq!(lines.iter().collect::<BTreeSet<_>>().len(), 52);
    let ctx = Context::default_ambient();
    for line in &lines {
        let tokens = tokenize(line);
        assert_eq!(tokens.len(), 28);
        assert_eq!(tokens.join(" "), *line);
        assert!(line.starts_with("fun f0 ( "));
        check_word(&tokens, &ctx).unwrap();
    }
}

#[test]
fn below_minimum_length_is_empty() {
    let ctx = Context::default_ambient().with_arity_bound(1);
    let shortest = (1..)
        .find(|n| !enumerate_well_typed(&ctx, *n).unwrap().is_empty())
        .unwrap();
    let below = (shortest - 1).to_string();
    let o = run(&["sample", "--k", "1", "--n", &below]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).is_empty());
    let o = run(&["sample", "--k", "1", "--n", &shortest.to_string()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn seeded_output_is_reproducible() {
    let args = [
        "sample", "--k", "2", "--n", "24", "--m", "30", "--seed", "0xbeef", "--index",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = run(&[
        "sample", "--k", "2", "--n", "24", "--m", "30", "--seed", "beee",
    ]);
    assert_ne!(
        stdout(&a)
            .lines()
            .map(|l| l.split('\t').nth(1).unwrap().to_string())
            .collect::<Vec<_>>(),
        stdout(&c).lines().map(String::from).collect::<Vec<_>>()
    );
}

#[test]
fn count_and_full_sample_agree_with_oracle() {
    let (path, ctx) = reduced_file();
    let path = path.to_str().unwrap();
    for n in [8, 10, 12] {
        let words = enumerate_well_typed(&ctx, n).unwrap();
        let o = run(&["count", "--ctx", path, "--k", "1", "--n", &n.to_string()]);
        assert_eq!(stdout(&o).trim(), words.len().to_string());
        let o = run(&[
            "sample",
            "--ctx",
            path,
            "--k",
            "1",
            "--n",
            &n.to_string(),
            "--m",
            &words.len().to_string(),
        ]);
        let got: BTreeSet<String> = stdout(&o).lines().map(String::from).collect();
        let want: BTreeSet<String> = words.iter().map(|w| w.join(" ")).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn errors_exit_one() {
    assert_eq!(run(&["sample"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        run(&["count", "--n", "9", "--k", "4"]).status.code(),
        Some(1)
    );
    let o = run(&["count", "--ctx", "/nonexistent/file.ctx", "--n", "9"]);
    assert_eq!(o.status.code(), Some(1));
    let bad = scratch("bad").join("bad.ctx");
    fs::write(&bad, "f : -> -> Int\n").unwrap();
    let o = run(&["count", "--ctx", bad.to_str().unwrap(), "--n", "9"]);
    assert_eq!(o.status.code(), Some(1));
    let (path, _) = reduced_file();
    let o = run(&[
        "sample",
        "--ctx",
        path.to_str().unwrap(),
        "--k",
        "1",
        "--n",
        "8",
        "--m",
        "100000",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn infer_reports_admissible_types() {
    let o = run(&["infer", "--k", "1", "--word", "fun f0 ( ) : Int = true"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().last(), Some("admissible: Bool"));
    assert_eq!(text.lines().next(), Some("fun f0 ( ) : Bool = true"));
    let o = run(&[
        "infer",
        "--k",
        "1",
        "--word",
        "fun f0 ( p1 : Int ) : Int = ( p1 == true )",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stdout(&o).trim(), "admissible:");
}

#[test]
fn compile_dump_round_trips() {
    let (path, _) = reduced_file();
    let dir = scratch("dump");
    let o = run(&[
        "compile",
        "--ctx",
        path.to_str().unwrap(),
        "--k",
        "1",
        "--dump",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let report = stdout(&o);
    let cnf = Grammar::parse_dump(&fs::read_to_string(dir.join("cnf.txt")).unwrap()).unwrap();
    assert!(cnf.is_cnf());
    assert!(report.contains(&format!("cnf size: {}\n", size_lange_leiss(&cnf))));
    assert!(report.contains("schema violations: 0\n"));
    let raw = fs::read_to_string(dir.join("grammar.txt")).unwrap();
    assert!(raw.starts_with("start: S\n"));
}

#[test]
fn bench_writes_csv() {
    let (path, _) = reduced_file();
    let csv = scratch("bench").join("out.csv");
    let o = run(&[
        "bench",
        "--ctx",
        path.to_str().unwrap(),
        "--k",
        "0-1",
        "--n",
        "8,10",
        "--m",
        "50",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,n,mean_ttfs_ms,per_sample_ns,count");
    assert_eq!(lines.len(), 5);
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 5);
        assert!(cols[2].parse::<f64>().unwrap() >= 0.0);
        assert!(cols[3].parse::<f64>().unwrap() >= 0.0);
    }
    let o = run(&[
        "bench",
        "--ctx",
        path.to_str().unwrap(),
        "--k",
        "1",
        "--n",
        "10",
        "--infer",
        "--sources",
        "3",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 2);
}
