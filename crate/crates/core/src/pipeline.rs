//! The end-to-end pipeline (compile, normalize, intersect, count, draw) and
//! the timing harness built on it.
//!
//! Bench CSV columns are `k,n,mean_ttfs_ms,per_sample_ns,count`:
//!
//! - `mean_ttfs_ms` is the mean over repeats of the time from an uncompiled
//!   context to the first word of the slice. The compile step does not depend
//!   on `n`, so it is timed once per arity and repeat and added to each cell.
//!   [`BenchRecord::ttfs_median_ms`] is the median compile time plus the
//!   median time of the remaining steps.
//! - `per_sample_ns` is the mean delay of each draw after the first.
//! - `count` is the size of the language.

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use crate::automata::{slice_automaton, template_automaton, AutomatonError};
use crate::cfg::{size_lange_leiss, GrammarError};
use crate::check::check_word;
use crate::cnf::{to_cnf, CnfGrammar};
use crate::compile::{compile, CompiledGrammar};
use crate::intersection::{IndexedCnf, Intersection, IntersectionError};
use crate::sampler::{RankError, Sampler};
use crate::syntax::{parse, serialize, SyntaxError};
use crate::types::Context;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Intersection(#[from] IntersectionError),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("sampled word fails to type-check: {word}: {reason}")]
    IllTyped { word: String, reason: String },
}

/// A compiled context ready for intersections.
pub struct Pipeline {
    ctx: Context,
    compiled: CompiledGrammar,
    cnf: CnfGrammar,
    indexed: Arc<IndexedCnf>,
}

impl Pipeline {
    pub fn new(ctx: &Context) -> Result<Pipeline, PipelineError> {
        let compiled = compile(ctx);
        let cnf = to_cnf(&compiled.grammar)?;
        let indexed = IndexedCnf::new(cnf.grammar().clone())?;
        Ok(Pipeline {
            ctx: ctx.clone(),
            compiled,
            cnf,
            indexed,
        })
    }

    pub fn context(&self) -> &Context {
        &self.ctx
    }

    pub fn compiled(&self) -> &CompiledGrammar {
        &self.compiled
    }

    pub fn cnf(&self) -> &CnfGrammar {
        &self.cnf
    }

    pub fn indexed(&self) -> &Arc<IndexedCnf> {
        &self.indexed
    }

    pub fn cnf_size(&self) -> usize {
        size_lange_leiss(self.cnf.grammar())
    }

    pub fn alphabet(&self) -> &[String] {
        self.cnf.grammar().terminals()
    }

    /// `L(G′) ∩ Σⁿ`.
    pub fn slice(&self, n: usize) -> Intersection {
        Intersection::new(self.indexed.clone(), &slice_automaton(self.alphabet(), n))
    }

    /// `L(G′)` intersected with `tokens`, each hole replaced by any token.
    pub fn template<S: AsRef<str>>(
        &self,
        tokens: &[S],
        holes: &BTreeSet<usize>,
    ) -> Result<Intersection, PipelineError> {
        let a = template_automaton(tokens, holes, self.alphabet())?;
        Ok(Intersection::new(self.indexed.clone(), &a))
    }

    /// Resamples the return type of `tokens`: every completion of the word
    /// with its return-type token holed, and the types that occur there.
    pub fn infer<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Inference, PipelineError> {
        self.infer_with(tokens, true)
    }

    /// [`Pipeline::infer`], optionally skipping the type check of completions.
    pub fn infer_with<S: AsRef<str>>(
        &self,
        tokens: &[S],
        self_check: bool,
    ) -> Result<Inference, PipelineError> {
        let position = parse(tokens)?.return_type_position();
        let x = self.template(tokens, &BTreeSet::from([position]))?;
        let total = x.total().to_usize().unwrap_or(usize::MAX);
        let completions = Sampler::new(&x, 0).take(total).collect::<Vec<_>>();
        if self_check {
            for w in &completions {
                self.self_check(w)?;
            }
        }
        let admissible = completions.iter().map(|w| w[position].clone()).collect();
        Ok(Inference {
            position,
            completions,
            admissible,
        })
    }

    /// Fails unless `word` type-checks under the pipeline's context.
    pub fn self_check<S: AsRef<str>>(&self, word: &[S]) -> Result<(), PipelineError> {
        check_word(word, &self.ctx)
            .map(|_| ())
            .map_err(|reason| PipelineError::IllTyped {
                word: serialize(word),
                reason,
            })
    }
}

#[derive(Clone, Debug)]
pub struct Inference {
    /// Index of the holed return-type token.
    pub position: usize,
    pub completions: Vec<Vec<String>>,
    pub admissible: BTreeSet<String>,
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    /// Draws timed after the first, capped by the language size.
    pub draws: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Type-check every timed draw (off when benchmarking).
    pub self_check: bool,
    /// Source words per cell for the type-inference bench.
    pub sources: usize,
}

impl Default for BenchConfig {
    fn default() -> BenchConfig {
        BenchConfig {
            ks: vec![1, 2, 3],
            ns: (20..=50).collect(),
            draws: 1000,
            repeats: 1,
            seed: 0,
            self_check: false,
            sources: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub k: usize,
    pub n: usize,
    pub ttfs_ms: f64,
    pub ttfs_median_ms: f64,
    /// Mean delay of a draw after the first: unranking to tokens.
    pub per_sample_ns: f64,
    /// The same including serialization to a line of text.
    pub per_sample_serialized_ns: f64,
    /// Lange-Leiß size of the CNF grammar.
    pub grammar_size: usize,
    /// Nonzero memoized cells of the intersection.
    pub intersection_size: usize,
    pub count: BigUint,
}

struct Timing {
    ttfs: Duration,
    per_sample_ns: f64,
    per_sample_serialized_ns: f64,
    intersection_size: usize,
    count: BigUint,
}

/// Times the first draw from a freshly built intersection, then `draws` more.
fn time_draws(
    p: &Pipeline,
    build: impl FnOnce() -> Result<Intersection, PipelineError>,
    cfg: &BenchConfig,
) -> Result<Timing, PipelineError> {
    let start = Instant::now();
    let x = build()?;
    let mut sampler = Sampler::new(&x, cfg.seed);
    let first = sampler.next();
    let ttfs = start.elapsed();
    let Some(first) = first else {
        return Ok(Timing {
            ttfs,
            per_sample_ns: 0.0,
            per_sample_serialized_ns: 0.0,
            intersection_size: x.nonzero_cells(),
            count: BigUint::zero(),
        });
    };
    if cfg.self_check {
        p.self_check(&first)?;
    }
    let rest = x.total().to_usize().unwrap_or(usize::MAX) - 1;
    let draws = cfg.draws.min(rest);
    let (mut plain, mut lines) = (Duration::ZERO, Duration::ZERO);
    for _ in 0..draws {
        let t = Instant::now();
        let w = sampler.next().expect("cursor below total");
        plain += t.elapsed();
        let line = serialize(&w);
        lines += t.elapsed();
        std::hint::black_box(line);
        if cfg.self_check {
            p.self_check(&w)?;
        }
    }
    let per = |d: Duration| {
        if draws == 0 {
            0.0
        } else {
            d.as_nanos() as f64 / draws as f64
        }
    };
    Ok(Timing {
        ttfs,
        per_sample_ns: per(plain),
        per_sample_serialized_ns: per(lines),
        intersection_size: x.nonzero_cells(),
        count: x.total().clone(),
    })
}

fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Accumulates per-repeat timings of one grid cell.
#[derive(Default)]
struct Cell {
    compile_ms: Vec<f64>,
    /// Intersection, counting and the first draw.
    rest_ms: Vec<f64>,
    per_sample: Vec<f64>,
    per_sample_serialized: Vec<f64>,
    grammar_size: usize,
    intersection_size: usize,
    count: BigUint,
}

impl Cell {
    fn push(&mut self, compile_ms: f64, t: Timing, grammar_size: usize) {
        self.compile_ms.push(compile_ms);
        self.rest_ms.push(millis(t.ttfs));
        self.per_sample.push(t.per_sample_ns);
        self.per_sample_serialized.push(t.per_sample_serialized_ns);
        self.grammar_size = grammar_size;
        self.intersection_size = t.intersection_size;
        self.count = t.count;
    }

    fn record(self, k: usize, n: usize) -> BenchRecord {
        BenchRecord {
            k,
            n,
            ttfs_ms: mean(&self.compile_ms) + mean(&self.rest_ms),
            // Compilation is shared by every cell of a repeat, so the two
            // phases are summarized separately.
            ttfs_median_ms: median(&self.compile_ms) + median(&self.rest_ms),
            per_sample_ns: mean(&self.per_sample),
            per_sample_serialized_ns: mean(&self.per_sample_serialized),
            grammar_size: self.grammar_size,
            intersection_size: self.intersection_size,
            count: self.count,
        }
    }
}

/// Slice sampling over the `(k, n)` grid. `progress` sees each finished record.
pub fn bench_slices(
    ctx: &Context,
    cfg: &BenchConfig,
    mut progress: impl FnMut(&BenchRecord),
) -> Result<Vec<BenchRecord>, PipelineError> {
    let mut out = Vec::new();
    for &k in &cfg.ks {
        let ctx = ctx.clone().with_arity_bound(k);
        let mut cells: Vec<Cell> = cfg.ns.iter().map(|_| Cell::default()).collect();
        for _ in 0..cfg.repeats.max(1) {
            let start = Instant::now();
            let p = Pipeline::new(&ctx)?;
            let compile_time = start.elapsed();
            for (cell, &n) in cells.iter_mut().zip(&cfg.ns) {
                let t = time_draws(&p, || Ok(p.slice(n)), cfg)?;
                cell.push(millis(compile_time), t, p.cnf_size());
            }
        }
        for (cell, &n) in cells.into_iter().zip(&cfg.ns) {
            let r = cell.record(k, n);
            progress(&r);
            out.push(r);
        }
    }
    Ok(out)
}

/// Type inference over the `(k, n)` grid: for each cell, `cfg.sources` words
/// are drawn from the slice, their return type is holed, and the time to the
/// first completion is averaged over sources. Compilation is not included.
pub fn bench_inference(
    ctx: &Context,
    cfg: &BenchConfig,
    mut progress: impl FnMut(&BenchRecord),
) -> Result<Vec<BenchRecord>, PipelineError> {
    let mut out = Vec::new();
    for &k in &cfg.ks {
        let p = Pipeline::new(&ctx.clone().with_arity_bound(k))?;
        for &n in &cfg.ns {
            let sources: Vec<Vec<String>> = Sampler::new(&p.slice(n), cfg.seed)
                .take(cfg.sources)
                .collect();
            let mut cell = Cell::default();
            for _ in 0..cfg.repeats.max(1) {
                for w in &sources {
                    let hole = BTreeSet::from([parse(w)?.return_type_position()]);
                    let t = time_draws(&p, || p.template(w, &hole), cfg)?;
                    cell.push(0.0, t, p.cnf_size());
                }
            }
            let r = cell.record(k, n);
            progress(&r);
            out.push(r);
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "k,n,mean_ttfs_ms,per_sample_ns,count";

pub fn csv_row(r: &BenchRecord) -> String {
    format!(
        "{},{},{:.3},{:.1},{}",
        r.k, r.n, r.ttfs_ms, r.per_sample_ns, r.count
    )
}

pub fn write_csv<W: Write>(mut w: W, records: &[BenchRecord]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", csv_row(r))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::enumerate_well_typed;

    fn reduced() -> Context {
        Context::builder()
            .types(["Int", "Bool"])
            .signature("b2i", ["Bool"], "Int")
            .arity(1)
            .build()
            .unwrap()
    }

    #[test]
    fn slice_words_type_check() {
        let p = Pipeline::new(&reduced()).unwrap();
        let x = p.slice(12);
        let words: Vec<_> = Sampler::new(&x, 9).collect();
        assert_eq!(
            words.len(),
            enumerate_well_typed(p.context(), 12).unwrap().len()
        );
        for w in &words {
            p.self_check(w).unwrap();
        }
    }

    #[test]
    fn inference_of_literal_body() {
        let p = Pipeline::new(&reduced()).unwrap();
        let w: Vec<&str> = "fun f0 ( ) : Bool = true".split(' ').collect();
        let inf = p.infer(&w).unwrap();
        assert_eq!(inf.position, 5);
        assert_eq!(inf.admissible, BTreeSet::from(["Bool".to_string()]));
        // A recursive body admits every type.
        let w: Vec<&str> = "fun f0 ( ) : Int = f0 ( )".split(' ').collect();
        let inf = p.infer(&w).unwrap();
        assert_eq!(inf.admissible.len(), 2);
    }

    #[test]
    fn csv_layout() {
        let cfg = BenchConfig {
            ks: vec![1],
            ns: vec![8, 9],
            draws: 10,
            self_check: true,
            ..BenchConfig::default()
        };
        let records = bench_slices(&reduced(), &cfg, |_| {}).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        for (line, n) in lines[1..].iter().zip([8, 9]) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 5);
            assert_eq!(cols[1], n.to_string());
            let want = enumerate_well_typed(&reduced(), n).unwrap().len();
            assert_eq!(cols[4], want.to_string());
        }
        let inf = bench_inference(&reduced(), &BenchConfig { sources: 3, ..cfg }, |_| {}).unwrap();
        assert_eq!(inf.len(), 2);
    }
}
