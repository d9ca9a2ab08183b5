use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use num_bigint::BigUint;
use welltyped::cfg::size_lange_leiss;
use welltyped::compile::{predicted_size, schema_size_report_with};
use welltyped::pipeline::{
    bench_inference, bench_slices, csv_row, write_csv, BenchConfig, Pipeline, CSV_HEADER,
};
use welltyped::sampler::Sampler;
use welltyped::syntax::{serialize, tokenize};
use welltyped::types::Context;

/// Uniform sampling of well-typed functions by grammar intersection.
#[derive(Parser)]
#[command(name = "welltyped", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile the context and report grammar sizes.
    Compile {
        #[command(flatten)]
        common: Common,
        /// Write `grammar.txt` and `cnf.txt` into this directory.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Count the well-typed words of length n.
    Count {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: usize,
    },
    /// Draw m distinct words of length n.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long, value_parser = parse_hex, default_value = "0")]
        seed: u64,
        /// Prefix each word with its index and a tab.
        #[arg(long)]
        index: bool,
        #[arg(long)]
        no_self_check: bool,
    },
    /// Hole the return type of a word and list its well-typed completions.
    Infer {
        #[command(flatten)]
        common: Common,
        /// The source word, tokens separated by spaces.
        #[arg(long)]
        word: String,
        #[arg(long)]
        no_self_check: bool,
    },
    /// Time slice sampling (or type inference) over a grid of k and n.
    Bench {
        #[arg(long)]
        ctx: Option<PathBuf>,
        /// Arities, as `1-3` or `1,3`.
        #[arg(long, default_value = "1-3", value_parser = parse_list)]
        k: List,
        /// Word lengths, as `20-50` or `20,28,40`.
        #[arg(long, default_value = "20-50", value_parser = parse_list)]
        n: List,
        #[arg(long, value_parser = parse_hex, default_value = "0")]
        seed: u64,
        /// Timed draws per cell after the first.
        #[arg(long, default_value_t = 1000)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Time return-type resampling of slice words instead.
        #[arg(long)]
        infer: bool,
        /// Source words per cell for `--infer`.
        #[arg(long, default_value_t = 20)]
        sources: usize,
        #[arg(long)]
        self_check: bool,
        #[arg(long)]
        allow_large_k: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Context file; the built-in ambient context when absent.
    #[arg(long)]
    ctx: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Permit k above 3.
    #[arg(long)]
    allow_large_k: bool,
}

fn parse_hex(s: &str) -> Result<u64, String> {
    let digits = s.strip_prefix("0x").unwrap_or(s);
    u64::from_str_radix(digits, 16).map_err(|e| format!("bad hex seed `{s}`: {e}"))
}

#[derive(Clone, Debug)]
struct List(Vec<usize>);

fn parse_list(s: &str) -> Result<List, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    if let Some((a, b)) = s.split_once('-') {
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(format!("empty range `{s}`"));
        }
        return Ok(List((a..=b).collect()));
    }
    s.split(',').map(num).collect::<Result<_, _>>().map(List)
}

const MAX_K: usize = 3;

fn load_context(path: Option<&PathBuf>, k: usize, allow_large_k: bool) -> Result<Context> {
    if k > MAX_K && !allow_large_k {
        bail!("k = {k} exceeds {MAX_K}; pass --allow-large-k to proceed");
    }
    let ctx = match path {
        None => Context::default_ambient(),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Context::parse(&text).with_context(|| format!("parsing {}", p.display()))?
        }
    };
    Ok(ctx.with_arity_bound(k))
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Done,
    Empty,
}

fn run(command: Command) -> Result<Outcome> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match command {
        Command::Compile { common, dump } => {
            let ctx = load_context(common.ctx.as_ref(), common.k, common.allow_large_k)?;
            let p = Pipeline::new(&ctx)?;
            let raw = &p.compiled().grammar;
            let report = schema_size_report_with(p.compiled(), p.cnf());
            let d = ctx.universe_size();
            writeln!(out, "k: {}", common.k)?;
            writeln!(out, "types: {d}")?;
            writeln!(out, "functions: {}", ctx.signatures().len())?;
            writeln!(out, "grammar size: {}", size_lange_leiss(raw))?;
            writeln!(out, "grammar productions: {}", raw.productions().len())?;
            writeln!(out, "cnf size: {}", p.cnf_size())?;
            writeln!(
                out,
                "cnf nonterminals: {}",
                p.cnf().grammar().nonterminals().len()
            )?;
            writeln!(
                out,
                "cnf productions: {}",
                p.cnf().grammar().productions().len()
            )?;
            writeln!(out, "predicted size: {}", predicted_size(common.k, d))?;
            for (schema, size) in &report.by_schema {
                writeln!(out, "schema {}: {size}", schema.label())?;
            }
            writeln!(out, "schema proxies: {}", report.proxies)?;
            writeln!(out, "schema violations: {}", report.violations.len())?;
            for v in &report.violations {
                writeln!(out, "  {v}")?;
            }
            if let Some(dir) = dump {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("grammar.txt"), p.compiled().tagged_dump())?;
                fs::write(dir.join("cnf.txt"), p.cnf().grammar().dump())?;
            }
            Ok(Outcome::Done)
        }
        Command::Count { common, n } => {
            let ctx = load_context(common.ctx.as_ref(), common.k, common.allow_large_k)?;
            let x = Pipeline::new(&ctx)?.slice(n);
            writeln!(out, "{}", x.total())?;
            Ok(if x.is_empty() {
                Outcome::Empty
            } else {
                Outcome::Done
            })
        }
        Command::Sample {
            common,
            n,
            m,
            seed,
            index,
            no_self_check,
        } => {
            let ctx = load_context(common.ctx.as_ref(), common.k, common.allow_large_k)?;
            let p = Pipeline::new(&ctx)?;
            let x = p.slice(n);
            if x.is_empty() {
                eprintln!("no well-typed word of length {n}");
                return Ok(Outcome::Empty);
            }
            if BigUint::from(m) > *x.total() {
                bail!(
                    "cannot draw {m} distinct words from {} of length {n}",
                    x.total()
                );
            }
            let sampler = Sampler::new(&x, seed);
            for c in 0..m {
                let c = BigUint::from(c);
                let i = sampler.index_at(&c);
                let w = sampler.draw_at(&c)?;
                if !no_self_check {
                    p.self_check(&w)?;
                }
                if index {
                    writeln!(out, "{i}\t{}", serialize(&w))?;
                } else {
                    writeln!(out, "{}", serialize(&w))?;
                }
            }
            Ok(Outcome::Done)
        }
        Command::Infer {
            common,
            word,
            no_self_check,
        } => {
            let ctx = load_context(common.ctx.as_ref(), common.k, common.allow_large_k)?;
            let p = Pipeline::new(&ctx)?;
            let tokens = tokenize(&word);
            let inf = p.infer_with(&tokens, !no_self_check)?;
            for w in &inf.completions {
                writeln!(out, "{}", serialize(w))?;
            }
            let types: Vec<&str> = inf.admissible.iter().map(String::as_str).collect();
            writeln!(out, "admissible: {}", types.join(" "))?;
            Ok(if inf.completions.is_empty() {
                Outcome::Empty
            } else {
                Outcome::Done
            })
        }
        Command::Bench {
            ctx,
            k,
            n,
            seed,
            m,
            repeats,
            csv,
            infer,
            sources,
            self_check,
            allow_large_k,
        } => {
            let (k, n) = (k.0, n.0);
            let max_k = k.iter().copied().max().unwrap_or(0);
            let base = load_context(ctx.as_ref(), max_k, allow_large_k)?;
            let cfg = BenchConfig {
                ks: k,
                ns: n,
                draws: m,
                repeats,
                seed,
                self_check,
                sources,
            };
            eprintln!("{CSV_HEADER}");
            let progress = |r: &welltyped::pipeline::BenchRecord| eprintln!("{}", csv_row(r));
            let records = if infer {
                bench_inference(&base, &cfg, progress)?
            } else {
                bench_slices(&base, &cfg, progress)?
            };
            match csv {
                Some(path) => write_csv(
                    BufWriter::new(
                        fs::File::create(&path)
                            .with_context(|| format!("creating {}", path.display()))?,
                    ),
                    &records,
                )?,
                None => write_csv(&mut out, &records)?,
            }
            let per: Vec<f64> = records.iter().map(|r| r.per_sample_ns).collect();
            let lines: Vec<f64> = records.iter().map(|r| r.per_sample_serialized_ns).collect();
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
            eprintln!(
                "mean per-sample delay: {:.0} ns unranking, {:.0} ns with serialization",
                mean(&per),
                mean(&lines)
            );
            Ok(Outcome::Done)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Empty) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
