//! Counting, the index-word bijection, and uniform sampling.
//!
//! A [`Ranking`] is a finite language with a fixed canonical order: `unrank`
//! maps `0..total` onto the language and `rank` inverts it. Uniform sampling
//! without replacement is `unrank ∘ π` for a keyed pseudorandom permutation
//! `π` of `0..total`, so the draw at any cursor is computed independently of
//! every other draw.

use std::collections::HashMap;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use petgraph::algo::toposort;
use petgraph::graph::DiGraph;
use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::automata::{minimize_acyclic, trie, AcyclicAutomaton, AutomatonError};
use crate::cfg::{Grammar, NonterminalId, Symbol, TerminalId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RankError {
    #[error("index {index} out of range for a language of {total} words")]
    OutOfRange { index: BigUint, total: BigUint },
    #[error("`{0}` is not in the language")]
    NotInLanguage(String),
    #[error("cannot draw {m} distinct words from a language of {total}")]
    TooManyDraws { m: usize, total: BigUint },
    #[error("grammar has a dependency cycle through `{0}`")]
    Cycle(String),
    #[error("language has more than {0} words")]
    Budget(usize),
    #[error("the language is empty")]
    Empty,
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
}

/// A finite language with a canonical bijection `0..total ↔ L`.
pub trait Ranking {
    fn total(&self) -> &BigUint;
    fn unrank(&self, i: &BigUint) -> Result<Vec<String>, RankError>;
    fn rank(&self, word: &[String]) -> Result<BigUint, RankError>;
}

/// Word counts for every nonterminal of a grammar whose nonterminal
/// dependency graph is acyclic.
///
/// Productions are taken in grammar order; within a production the local
/// index is mixed-radix over the right-hand side, most significant first,
/// so for `W → X Z` it is `j = j_X · count(Z) + j_Z`.
#[derive(Clone, Debug)]
pub struct CountTable {
    grammar: Grammar,
    by_lhs: Vec<Vec<usize>>,
    counts: Vec<BigUint>,
    total: BigUint,
}

impl CountTable {
    pub fn new(grammar: &Grammar) -> Result<CountTable, RankError> {
        let n = grammar.nonterminals().len();
        let mut dep: DiGraph<(), ()> = DiGraph::new();
        let nodes: Vec<_> = (0..n).map(|_| dep.add_node(())).collect();
        for p in grammar.productions() {
            for s in &p.rhs {
                if let Symbol::N(x) = s {
                    dep.add_edge(nodes[p.lhs.index()], nodes[x.index()], ());
                }
            }
        }
        let order = toposort(&dep, None).map_err(|c| {
            RankError::Cycle(
                grammar
                    .nonterminal_name(NonterminalId(c.node_id().index() as u32))
                    .into(),
            )
        })?;
        let by_lhs = grammar.productions_by_lhs();
        let mut counts = vec![BigUint::zero(); n];
        for v in order.into_iter().rev() {
            let w = v.index();
            let mut c = BigUint::zero();
            for &pi in &by_lhs[w] {
                c += product(&grammar.productions()[pi].rhs, &counts);
            }
            counts[w] = c;
        }
        let total = if grammar.is_empty() {
            BigUint::zero()
        } else {
            counts[grammar.start().index()].clone()
        };
        Ok(CountTable {
            grammar: grammar.clone(),
            by_lhs,
            counts,
            total,
        })
    }

    pub fn count(&self, nt: NonterminalId) -> &BigUint {
        &self.counts[nt.index()]
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    fn unrank_into(&self, nt: NonterminalId, mut j: BigUint, out: &mut Vec<TerminalId>) {
        for &pi in &self.by_lhs[nt.index()] {
            let rhs = &self.grammar.productions()[pi].rhs;
            let c = product(rhs, &self.counts);
            if j >= c {
                j -= c;
                continue;
            }
            let mut digits = vec![BigUint::zero(); rhs.len()];
            for (k, s) in rhs.iter().enumerate().rev() {
                if let Symbol::N(x) = s {
                    let (q, r) = j.div_rem(&self.counts[x.index()]);
                    digits[k] = r;
                    j = q;
                }
            }
            for (s, d) in rhs.iter().zip(digits) {
                match s {
                    Symbol::T(t) => out.push(*t),
                    Symbol::N(x) => self.unrank_into(*x, d, out),
                }
            }
            return;
        }
        unreachable!("index below the nonterminal's count")
    }

    fn rank_of(
        &self,
        nt: NonterminalId,
        word: &[TerminalId],
        i: usize,
        j: usize,
        p: &mut Parser,
    ) -> BigUint {
        let mut offset = BigUint::zero();
        for &pi in &self.by_lhs[nt.index()] {
            let rhs = &self.grammar.productions()[pi].rhs;
            if let Some(cuts) = p.split(&self.grammar, &self.by_lhs, word, rhs, i, j) {
                let mut local = BigUint::zero();
                for (k, s) in rhs.iter().enumerate() {
                    if let Symbol::N(x) = s {
                        local = local * &self.counts[x.index()]
                            + self.rank_of(*x, word, cuts[k], cuts[k + 1], p);
                    }
                }
                return offset + local;
            }
            offset += product(rhs, &self.counts);
        }
        unreachable!("caller checked derivability")
    }
}

fn product(rhs: &[Symbol], counts: &[BigUint]) -> BigUint {
    let mut c = BigUint::one();
    for s in rhs {
        if let Symbol::N(x) = s {
            c *= &counts[x.index()];
        }
    }
    c
}

/// Memoized top-down recognizer for arbitrary ε-free grammars.
#[derive(Default)]
struct Parser {
    memo: HashMap<(u32, usize, usize), bool>,
}

impl Parser {
    fn derives(
        &mut self,
        g: &Grammar,
        by: &[Vec<usize>],
        w: &[TerminalId],
        nt: NonterminalId,
        i: usize,
        j: usize,
    ) -> bool {
        if let Some(&d) = self.memo.get(&(nt.0, i, j)) {
            return d;
        }
        let found = by[nt.index()].iter().any(|&pi| {
            self.split(g, by, w, &g.productions()[pi].rhs, i, j)
                .is_some()
        });
        self.memo.insert((nt.0, i, j), found);
        found
    }

    /// Cut points `i = c0 ≤ c1 ≤ … ≤ cm = j` with each symbol deriving its
    /// piece, first in lexicographic order.
    fn split(
        &mut self,
        g: &Grammar,
        by: &[Vec<usize>],
        w: &[TerminalId],
        rhs: &[Symbol],
        i: usize,
        j: usize,
    ) -> Option<Vec<usize>> {
        let Some((first, rest)) = rhs.split_first() else {
            return (i == j).then(|| vec![j]);
        };
        let ends: Vec<usize> = match first {
            Symbol::T(t) => {
                if i < j && w[i] == *t {
                    vec![i + 1]
                } else {
                    vec![]
                }
            }
            Symbol::N(_) => (i + 1..=j.saturating_sub(rest.len())).collect(),
        };
        for m in ends {
            let ok = match first {
                Symbol::T(_) => true,
                Symbol::N(x) => self.derives(g, by, w, *x, i, m),
            };
            if ok {
                if let Some(mut tail) = self.split(g, by, w, rest, m, j) {
                    tail.insert(0, i);
                    return Some(tail);
                }
            }
        }
        None
    }
}

impl Ranking for CountTable {
    fn total(&self) -> &BigUint {
        &self.total
    }

    fn unrank(&self, i: &BigUint) -> Result<Vec<String>, RankError> {
        if *i >= self.total {
            return Err(RankError::OutOfRange {
                index: i.clone(),
                total: self.total.clone(),
            });
        }
        let mut out = Vec::new();
        self.unrank_into(self.grammar.start(), i.clone(), &mut out);
        Ok(self.grammar.word_names(&out))
    }

    fn rank(&self, word: &[String]) -> Result<BigUint, RankError> {
        let not_in = || RankError::NotInLanguage(word.join(" "));
        if self.grammar.is_empty() || word.is_empty() {
            return Err(not_in());
        }
        let ids: Vec<TerminalId> = word
            .iter()
            .map(|t| self.grammar.terminal_id(t))
            .collect::<Option<_>>()
            .ok_or_else(not_in)?;
        let mut p = Parser::default();
        let start = self.grammar.start();
        if !p.derives(&self.grammar, &self.by_lhs, &ids, start, 0, ids.len()) {
            return Err(not_in());
        }
        Ok(self.rank_of(start, &ids, 0, ids.len(), &mut p))
    }
}

/// Counts for an explicit grammar; see [`CountTable`].
pub fn count(g: &Grammar) -> Result<CountTable, RankError> {
    CountTable::new(g)
}

/// A keyed permutation of `0..domain`: four alternating Feistel rounds over
/// the smallest power-of-two domain that covers it, with cycle-walking back
/// into range. Round functions are SHA-256 keyed from the seed.
#[derive(Clone, Debug)]
pub struct FeistelPermutation {
    domain: BigUint,
    left_bits: u64,
    right_bits: u64,
    keys: [[u8; 32]; ROUNDS],
}

const ROUNDS: usize = 4;

impl FeistelPermutation {
    pub fn new(domain: BigUint, seed: u64) -> FeistelPermutation {
        let bits = if domain <= BigUint::one() {
            1
        } else {
            (&domain - 1u32).bits().max(1)
        };
        let left_bits = bits / 2;
        let mut keys = [[0u8; 32]; ROUNDS];
        for (r, key) in keys.iter_mut().enumerate() {
            let mut h = Sha256::new();
            h.update(b"welltyped feistel");
            h.update(seed.to_le_bytes());
            h.update([r as u8]);
            key.copy_from_slice(&h.finalize());
        }
        FeistelPermutation {
            domain,
            left_bits,
            right_bits: bits - left_bits,
            keys,
        }
    }

    pub fn domain(&self) -> &BigUint {
        &self.domain
    }

    fn round(&self, r: usize, x: &BigUint, out_bits: u64) -> BigUint {
        let mut bytes = Vec::with_capacity(out_bits.div_ceil(8) as usize + 32);
        let input = x.to_bytes_le();
        let mut block = 0u32;
        while (bytes.len() as u64) * 8 < out_bits {
            let mut h = Sha256::new();
            h.update(self.keys[r]);
            h.update(block.to_le_bytes());
            h.update(&input);
            bytes.extend_from_slice(&h.finalize());
            block += 1;
        }
        BigUint::from_bytes_le(&bytes) & mask(out_bits)
    }

    /// One pass of the network over the full power-of-two domain.
    fn encrypt(&self, x: &BigUint) -> BigUint {
        let right_mask = mask(self.right_bits);
        let mut left = x >> self.right_bits;
        let mut right = x & &right_mask;
        for r in 0..ROUNDS {
            if r % 2 == 0 {
                left ^= self.round(r, &right, self.left_bits);
            } else {
                right ^= self.round(r, &left, self.right_bits);
            }
        }
        (left << self.right_bits) | right
    }

    /// `π(x)` for `x < domain`.
    pub fn apply(&self, x: &BigUint) -> BigUint {
        assert!(*x < self.domain, "permutation input out of range");
        let mut y = self.encrypt(x);
        while y >= self.domain {
            y = self.encrypt(&y);
        }
        y
    }
}

fn mask(bits: u64) -> BigUint {
    (BigUint::one() << bits) - 1u32
}

/// Without-replacement draws from a [`Ranking`]. The draw at cursor `c` is
/// `unrank(π(c))`, a pure function of the language, the seed and `c`.
pub struct Sampler<'a, R: Ranking + ?Sized> {
    ranking: &'a R,
    permutation: FeistelPermutation,
    cursor: BigUint,
}

impl<'a, R: Ranking + ?Sized> Sampler<'a, R> {
    pub fn new(ranking: &'a R, seed: u64) -> Sampler<'a, R> {
        Sampler {
            permutation: FeistelPermutation::new(ranking.total().clone(), seed),
            ranking,
            cursor: BigUint::zero(),
        }
    }

    pub fn index_at(&self, cursor: &BigUint) -> BigUint {
        self.permutation.apply(cursor)
    }

    pub fn draw_at(&self, cursor: &BigUint) -> Result<Vec<String>, RankError> {
        if *cursor >= *self.ranking.total() {
            return Err(RankError::OutOfRange {
                index: cursor.clone(),
                total: self.ranking.total().clone(),
            });
        }
        self.ranking.unrank(&self.index_at(cursor))
    }

    pub fn cursor(&self) -> &BigUint {
        &self.cursor
    }
}

impl<R: Ranking + ?Sized> Iterator for Sampler<'_, R> {
    type Item = Vec<String>;

    fn next(&mut self) -> Option<Vec<String>> {
        if self.cursor >= *self.ranking.total() {
            return None;
        }
        let w = self.draw_at(&self.cursor).expect("cursor in range");
        self.cursor += 1u32;
        Some(w)
    }
}

/// The first `m` draws of [`Sampler::new(ranking, seed)`](Sampler::new).
pub fn sample_without_replacement<R: Ranking + ?Sized>(
    ranking: &R,
    seed: u64,
    m: usize,
) -> Result<Vec<Vec<String>>, RankError> {
    if BigUint::from(m) > *ranking.total() {
        return Err(RankError::TooManyDraws {
            m,
            total: ranking.total().clone(),
        });
    }
    Ok(Sampler::new(ranking, seed).take(m).collect())
}

/// The minimal acyclic DFA of the whole language, through the trie of every
/// unranked word. Only for languages of at most `budget` words.
pub fn to_acyclic_dfa_small<R: Ranking + ?Sized>(
    ranking: &R,
    alphabet: &[String],
    budget: usize,
) -> Result<AcyclicAutomaton, RankError> {
    let total = ranking
        .total()
        .to_usize()
        .filter(|t| *t <= budget)
        .ok_or(RankError::Budget(budget))?;
    let words = (0..total)
        .map(|i| ranking.unrank(&BigUint::from(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(minimize_acyclic(&trie(words, alphabet)?)?)
}

/// Uniform with-replacement decoding of a deterministic acyclic automaton,
/// one token at a time, weighting each move by its number of completions.
pub struct AutoregressiveDecoder<'a> {
    automaton: &'a AcyclicAutomaton,
    completions: Vec<BigUint>,
}

impl<'a> AutoregressiveDecoder<'a> {
    pub fn new(automaton: &'a AcyclicAutomaton) -> Result<AutoregressiveDecoder<'a>, RankError> {
        if !automaton.is_deterministic() {
            return Err(AutomatonError::Nondeterministic.into());
        }
        let completions = automaton.path_counts();
        if completions[automaton.initial() as usize].is_zero() {
            return Err(RankError::Empty);
        }
        Ok(AutoregressiveDecoder {
            automaton,
            completions,
        })
    }

    pub fn decode<G: Rng + ?Sized>(&self, rng: &mut G) -> Vec<String> {
        let a = self.automaton;
        let mut q = a.initial();
        let mut out = Vec::new();
        let mut u = uniform_below(rng, &self.completions[q as usize]);
        loop {
            if a.is_final(q) {
                if u.is_zero() {
                    return out;
                }
                u -= 1u32;
            }
            let mut moved = false;
            for t in a.outgoing(q) {
                let c = &self.completions[t.to as usize];
                if u < *c {
                    out.push(a.label_name(t.label).to_string());
                    q = t.to;
                    moved = true;
                    break;
                }
                u -= c;
            }
            debug_assert!(moved, "draw below the state's completion count");
        }
    }
}

pub fn decode_autoregressive<G: Rng + ?Sized>(
    a: &AcyclicAutomaton,
    rng: &mut G,
) -> Result<Vec<String>, RankError> {
    Ok(AutoregressiveDecoder::new(a)?.decode(rng))
}

/// Uniform integer in `0..bound` by rejection on the bit length.
pub fn uniform_below<G: Rng + ?Sized>(rng: &mut G, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero());
    let bits = bound.bits();
    let mut buf = vec![0u8; bits.div_ceil(8) as usize];
    let top = bits % 8;
    loop {
        rng.fill_bytes(&mut buf);
        if top != 0 {
            *buf.last_mut().unwrap() &= (1u8 << top) - 1;
        }
        let x = BigUint::from_bytes_le(&buf);
        if x < *bound {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    use crate::automata::slice_automaton;

    fn ab() -> Grammar {
        Grammar::parse_rules("S", "S -> A B ; A -> a ; B -> b")
    }

    #[test]
    fn counts_small_grammars() {
        assert_eq!(*count(&ab()).unwrap().total(), BigUint::one());
        let empty = Grammar::empty("S");
        assert!(count(&empty).unwrap().total().is_zero());
        let cyclic = Grammar::parse_rules("S", "S -> a S | a");
        assert!(matches!(count(&cyclic), Err(RankError::Cycle(_))));
    }

    #[test]
    fn unrank_rank_general_rhs() {
        let recursive = Grammar::parse_rules("S", "S -> A x A | y A ; A -> a | b | c A");
        assert!(matches!(count(&recursive), Err(RankError::Cycle(_))));
        let g = Grammar::parse_rules("S", "S -> A x A | y B ; A -> a | b ; B -> A A");
        let t = count(&g).unwrap();
        assert_eq!(*t.total(), BigUint::from(4u32 + 4));
        let mut seen = BTreeSet::new();
        for i in 0..8u32 {
            let w = t.unrank(&BigUint::from(i)).unwrap();
            assert_eq!(t.rank(&w).unwrap(), BigUint::from(i));
            seen.insert(w);
        }
        assert_eq!(seen.len(), 8);
        assert_eq!(t.unrank(&BigUint::zero()).unwrap(), ["a", "x", "a"]);
        assert_eq!(t.unrank(&BigUint::one()).unwrap(), ["a", "x", "b"]);
        assert!(t.unrank(&BigUint::from(8u32)).is_err());
        assert!(t.rank(&["x".to_string()]).is_err());
    }

    #[test]
    fn feistel_is_a_permutation() {
        for domain in [1u32, 2, 3, 7, 8, 9, 100, 1000, 4097] {
            let p = FeistelPermutation::new(BigUint::from(domain), 0xdead_beef);
            let image: BTreeSet<BigUint> =
                (0..domain).map(|i| p.apply(&BigUint::from(i))).collect();
            assert_eq!(image.len(), domain as usize);
            assert!(image.iter().all(|y| *y < BigUint::from(domain)));
        }
    }

    #[test]
    fn feistel_depends_on_seed() {
        let a = FeistelPermutation::new(BigUint::from(1000u32), 1);
        let b = FeistelPermutation::new(BigUint::from(1000u32), 2);
        let pa: Vec<BigUint> = (0..20u32).map(|i| a.apply(&BigUint::from(i))).collect();
        let pb: Vec<BigUint> = (0..20u32).map(|i| b.apply(&BigUint::from(i))).collect();
        assert_ne!(pa, pb);
    }

    #[test]
    fn sampling_sweeps_language() {
        let g = Grammar::parse_rules("S", "S -> A A A ; A -> a | b | c");
        let t = count(&g).unwrap();
        let all = sample_without_replacement(&t, 7, 27).unwrap();
        let set: BTreeSet<_> = all.iter().cloned().collect();
        assert_eq!(set.len(), 27);
        assert_eq!(all, sample_without_replacement(&t, 7, 27).unwrap());
        assert!(sample_without_replacement(&t, 7, 28).is_err());
        let s = Sampler::new(&t, 7);
        assert_eq!(s.draw_at(&BigUint::from(5u32)).unwrap(), all[5]);
    }

    #[test]
    fn dfa_of_language() {
        let g = Grammar::parse_rules("S", "S -> A A ; A -> a | b");
        let t = count(&g).unwrap();
        let alphabet: Vec<String> = g.terminals().to_vec();
        let dfa = to_acyclic_dfa_small(&t, &alphabet, 100).unwrap();
        assert_eq!(dfa, slice_automaton(&alphabet, 2));
        assert_eq!(dfa.count_paths(), *t.total());
        assert!(to_acyclic_dfa_small(&t, &alphabet, 3).is_err());
    }

    #[test]
    fn decoding_singleton_and_pair() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let alphabet = vec!["a".to_string(), "b".to_string()];
        let single = trie([vec!["a", "b"]], &alphabet).unwrap();
        for _ in 0..10 {
            assert_eq!(
                decode_autoregressive(&single, &mut rng).unwrap(),
                ["a", "b"]
            );
        }
        let pair = trie([vec!["a"], vec!["a", "b"]], &alphabet).unwrap();
        let n = 10_000;
        let short = (0..n)
            .filter(|_| decode_autoregressive(&pair, &mut rng).unwrap().len() == 1)
            .count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((short - n as f64 / 2.0).abs() < 3.0 * sigma, "{short}");
        let empty = AcyclicAutomaton::new(alphabet, 1, [], 0, []).unwrap();
        assert_eq!(
            decode_autoregressive(&empty, &mut rng),
            Err(RankError::Empty)
        );
    }
}
