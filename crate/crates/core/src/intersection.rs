//! Intersection of a CNF grammar with an acyclic automaton.
//!
//! Conceptually this is the triple construction: nonterminals `pWr` with
//! `pWr → pXq qZr` for every binary production and `pWq → t` for every
//! transition `δ(p, t) = q`, plus start productions `S′ → q_α S q_ω`.
//! [`Intersection`] never materializes that grammar. It counts the words of
//! each triple top-down from the start triples, memoized, so only useful
//! triples are ever touched. On chain automata (slices and templates) two
//! spans whose edges carry the same label sequence have the same counts and
//! share one memo entry; for slices this collapses the `|Q|²` spans to `|Q|`
//! length classes. [`Intersection::to_grammar`] materializes the explicit
//! triple grammar when it is small enough to be useful.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::automata::{AcyclicAutomaton, StateId};
use crate::cfg::{prune, Grammar, GrammarBuilder, NonterminalId, Symbol, TerminalId};
use crate::sampler::{RankError, Ranking};

const UNBOUNDED: u32 = u32::MAX;
const UNKNOWN: u32 = u32::MAX;
const BIG: u64 = u64::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IntersectionError {
    #[error("grammar is not in Chomsky Normal Form")]
    NotCnf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Rule {
    Term(TerminalId),
    Bin(u32, u32),
}

/// A CNF grammar prepared for repeated intersection: productions grouped by
/// left-hand side and the length range every nonterminal can derive.
#[derive(Debug)]
pub struct IndexedCnf {
    grammar: Grammar,
    rules: Vec<Vec<Rule>>,
    minlen: Vec<u32>,
    maxlen: Vec<u32>,
}

impl IndexedCnf {
    pub fn new(grammar: Grammar) -> Result<Arc<IndexedCnf>, IntersectionError> {
        if !grammar.is_cnf() {
            return Err(IntersectionError::NotCnf);
        }
        let n = grammar.nonterminals().len();
        let mut rules = vec![Vec::new(); n];
        for p in grammar.productions() {
            let rule = match p.rhs.as_slice() {
                [Symbol::T(t)] => Rule::Term(*t),
                [Symbol::N(x), Symbol::N(z)] => Rule::Bin(x.0, z.0),
                _ => unreachable!("checked is_cnf"),
            };
            rules[p.lhs.index()].push(rule);
        }

        let mut minlen = vec![UNBOUNDED; n];
        let mut changed = true;
        while changed {
            changed = false;
            for (w, rs) in rules.iter().enumerate() {
                for r in rs {
                    let len = match *r {
                        Rule::Term(_) => 1,
                        Rule::Bin(x, z) => minlen[x as usize].saturating_add(minlen[z as usize]),
                    };
                    if len < minlen[w] {
                        minlen[w] = len;
                        changed = true;
                    }
                }
            }
        }

        // Strongly connected components come out in reverse topological
        // order, so every successor's bound is known before its users.
        let mut dep: DiGraph<(), ()> = DiGraph::with_capacity(n, 2 * grammar.productions().len());
        let nodes: Vec<_> = (0..n).map(|_| dep.add_node(())).collect();
        for (w, rs) in rules.iter().enumerate() {
            for r in rs {
                if let Rule::Bin(x, z) = *r {
                    dep.add_edge(nodes[w], nodes[x as usize], ());
                    dep.add_edge(nodes[w], nodes[z as usize], ());
                }
            }
        }
        let mut maxlen = vec![0u32; n];
        for scc in tarjan_scc(&dep) {
            let cyclic = scc.len() > 1 || scc.iter().any(|v| dep.neighbors(*v).any(|u| u == *v));
            for v in scc.iter().map(|v| v.index()) {
                maxlen[v] = if cyclic {
                    UNBOUNDED
                } else {
                    rules[v]
                        .iter()
                        .map(|r| match *r {
                            Rule::Term(_) => 1,
                            Rule::Bin(x, z) => {
                                maxlen[x as usize].saturating_add(maxlen[z as usize])
                            }
                        })
                        .max()
                        .unwrap_or(0)
                };
            }
            if cyclic {
                for v in &scc {
                    maxlen[v.index()] = UNBOUNDED;
                }
            }
        }
        Ok(Arc::new(IndexedCnf {
            grammar,
            rules,
            minlen,
            maxlen,
        }))
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    /// Shortest word `nt` derives, if any.
    pub fn min_length(&self, nt: NonterminalId) -> Option<usize> {
        let m = self.minlen[nt.index()];
        (m != UNBOUNDED).then_some(m as usize)
    }

    /// Longest word `nt` derives, if bounded.
    pub fn max_length(&self, nt: NonterminalId) -> Option<usize> {
        let m = self.maxlen[nt.index()];
        (m != UNBOUNDED).then_some(m as usize)
    }
}

/// How spans of the automaton are identified.
#[derive(Debug)]
enum Shape {
    /// States `0..=n` on a path; `class[p * (n + 1) + r]` is the id of the
    /// label sequence on edges `p..r`.
    Chain { edge_set: Vec<u32>, class: Vec<u32> },
    /// Any acyclic automaton: spans are state pairs.
    General {
        /// `reach[p]` has bit `q` set when `q` is reachable from `p` in at
        /// least one step.
        reach: Vec<Vec<u64>>,
        pair_set: HashMap<(StateId, StateId), u32>,
    },
}

#[derive(Debug)]
enum Memo {
    Dense { tables: Vec<Vec<u32>>, nts: usize },
    Sparse(FxHashMap<(u32, u32), u32>),
}

impl Memo {
    fn get(&self, class: u32, nt: u32) -> Option<u32> {
        match self {
            Memo::Dense { tables, .. } => match tables[class as usize].get(nt as usize) {
                Some(&v) if v != UNKNOWN => Some(v),
                _ => None,
            },
            Memo::Sparse(m) => m.get(&(class, nt)).copied(),
        }
    }

    fn set(&mut self, class: u32, nt: u32, value: u32) {
        match self {
            Memo::Dense { tables, nts } => {
                let t = &mut tables[class as usize];
                if t.is_empty() {
                    *t = vec![UNKNOWN; *nts];
                }
                t[nt as usize] = value;
            }
            Memo::Sparse(m) => {
                m.insert((class, nt), value);
            }
        }
    }
}

enum Splits {
    Range(std::ops::RangeInclusive<StateId>),
    List(std::vec::IntoIter<StateId>),
}

impl Iterator for Splits {
    type Item = StateId;

    fn next(&mut self) -> Option<StateId> {
        match self {
            Splits::Range(r) => r.next(),
            Splits::List(l) => l.next(),
        }
    }
}

/// One alternative at a triple: a terminal rule, or a binary rule at a split.
#[derive(Clone, Copy, Debug)]
enum Choice {
    Term(TerminalId),
    Bin { x: u32, z: u32, q: StateId },
}

/// Counts, unranking and ranking for `L(G) ∩ L(α)`.
#[derive(Debug)]
pub struct Intersection {
    g: Arc<IndexedCnf>,
    states: usize,
    initial: StateId,
    finals: Vec<StateId>,
    shape: Shape,
    /// Membership of grammar terminals in each distinct edge label set.
    label_sets: Vec<Vec<bool>>,
    memo: Memo,
    /// Counts of the memo cells; entry 0 is zero and shared by every empty
    /// cell. Counts that do not fit are [`BIG`] here and kept in `big_values`.
    small_values: Vec<u64>,
    big_values: FxHashMap<u32, BigUint>,
    /// Cumulative counts over the start alternatives, in canonical order.
    roots: Vec<(BigUint, StateId, Choice)>,
    total: BigUint,
    /// Nonzero alternatives of visited cells, filled lazily by unranking.
    alternatives: RwLock<FxHashMap<(u32, u32), Alternatives>>,
}

/// Nonzero alternatives of one cell with cumulative counts. On chains split
/// states are stored relative to the span start, so every span of the class
/// can share the entry.
#[derive(Debug)]
enum Alternatives {
    /// Cumulative end, count of the right child (1 for terminals) and choice,
    /// when every count fits a machine word.
    Small(Box<[(u64, u64, Choice)]>),
    /// Cumulative ends and choices.
    Big(Vec<BigUint>, Vec<Choice>),
}

/// Cells beyond this many are no longer cached.
const ALTERNATIVES_LIMIT: usize = 1 << 20;

/// Above this many dense memo cells a hash map is used instead.
const DENSE_LIMIT: usize = 1 << 25;

impl Intersection {
    pub fn new(g: Arc<IndexedCnf>, a: &AcyclicAutomaton) -> Intersection {
        let grammar = &g.grammar;
        let term_of_label: Vec<Option<TerminalId>> = a
            .alphabet()
            .iter()
            .map(|t| grammar.terminal_id(t))
            .collect();
        let mut set_ids: HashMap<Vec<bool>, u32> = HashMap::new();
        let mut label_sets: Vec<Vec<bool>> = Vec::new();
        let mut intern = |labels: &mut dyn Iterator<Item = u32>| -> u32 {
            let mut set = vec![false; grammar.terminals().len()];
            for l in labels {
                if let Some(t) = term_of_label[l as usize] {
                    set[t.index()] = true;
                }
            }
            let next = label_sets.len() as u32;
            *set_ids.entry(set.clone()).or_insert_with(|| {
                label_sets.push(set);
                next
            })
        };

        let nts = grammar.nonterminals().len();
        let (shape, memo) = match a.as_chain() {
            Some(edges) => {
                let edge_set: Vec<u32> = edges
                    .iter()
                    .map(|ls| intern(&mut ls.iter().copied()))
                    .collect();
                let n = edges.len();
                let width = n + 1;
                let mut class = vec![UNKNOWN; width * width];
                let mut seq_ids: HashMap<(u32, u32), u32> = HashMap::new();
                for p in 0..n {
                    let mut prev = UNKNOWN;
                    for r in p + 1..=n {
                        let next = seq_ids.len() as u32;
                        let id = *seq_ids.entry((prev, edge_set[r - 1])).or_insert(next);
                        class[p * width + r] = id;
                        prev = id;
                    }
                }
                let classes = seq_ids.len();
                let memo = if classes.saturating_mul(nts) <= DENSE_LIMIT {
                    Memo::Dense {
                        tables: vec![Vec::new(); classes],
                        nts,
                    }
                } else {
                    Memo::Sparse(FxHashMap::default())
                };
                (Shape::Chain { edge_set, class }, memo)
            }
            None => {
                let q = a.num_states();
                let words = q.div_ceil(64);
                let order = a.topological_order().expect("acyclic by construction");
                let mut reach = vec![vec![0u64; words]; q];
                for &p in order.iter().rev() {
                    let mut bits = vec![0u64; words];
                    for t in a.outgoing(p) {
                        bits[t.to as usize / 64] |= 1 << (t.to % 64);
                        for (b, r) in bits.iter_mut().zip(&reach[t.to as usize]) {
                            *b |= r;
                        }
                    }
                    reach[p as usize] = bits;
                }
                let mut by_pair: HashMap<(StateId, StateId), Vec<u32>> = HashMap::new();
                for t in a.transitions() {
                    by_pair.entry((t.from, t.to)).or_default().push(t.label);
                }
                let pair_set = by_pair
                    .into_iter()
                    .map(|(k, ls)| (k, intern(&mut ls.into_iter())))
                    .collect();
                (
                    Shape::General { reach, pair_set },
                    Memo::Sparse(FxHashMap::default()),
                )
            }
        };

        let mut x = Intersection {
            g,
            states: a.num_states(),
            initial: a.initial(),
            finals: a.finals(),
            shape,
            label_sets,
            memo,
            small_values: vec![0],
            big_values: FxHashMap::default(),
            roots: Vec::new(),
            total: BigUint::zero(),
            alternatives: RwLock::new(FxHashMap::default()),
        };
        let start = x.g.grammar.start().0;
        let mut acc = BigUint::zero();
        let mut roots = Vec::new();
        for f in x.finals.clone() {
            x.count(start, x.initial, f);
            for choice in x.choices(start, x.initial, f) {
                let c = x.choice_count(x.initial, f, choice);
                if !c.is_zero() {
                    acc += c;
                    roots.push((acc.clone(), f, choice));
                }
            }
        }
        x.roots = roots;
        x.total = acc;
        x
    }

    pub fn indexed(&self) -> &Arc<IndexedCnf> {
        &self.g
    }

    pub fn total(&self) -> &BigUint {
        &self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_zero()
    }

    /// Number of memoized (nonterminal, span class) cells with a nonzero count.
    pub fn nonzero_cells(&self) -> usize {
        let nonzero = |v: u32| v != 0 && v != UNKNOWN;
        match &self.memo {
            Memo::Dense { tables, .. } => tables
                .iter()
                .map(|t| t.iter().filter(|v| nonzero(**v)).count())
                .sum(),
            Memo::Sparse(m) => m.values().filter(|v| nonzero(**v)).count(),
        }
    }

    fn span_len(&self, p: StateId, r: StateId) -> Option<u32> {
        match self.shape {
            Shape::Chain { .. } => Some(r.saturating_sub(p)),
            Shape::General { .. } => None,
        }
    }

    fn class(&self, p: StateId, r: StateId) -> u32 {
        match &self.shape {
            Shape::Chain { class, .. } => class[p as usize * self.states + r as usize],
            Shape::General { .. } => p * self.states as u32 + r,
        }
    }

    /// Whether `nt` certainly derives nothing over `(p, r)`.
    fn trivially_empty(&self, nt: u32, p: StateId, r: StateId) -> bool {
        match self.span_len(p, r) {
            Some(len) => {
                len == 0 || len < self.g.minlen[nt as usize] || len > self.g.maxlen[nt as usize]
            }
            None => match &self.shape {
                Shape::General { reach, .. } => {
                    reach[p as usize][r as usize / 64] & (1 << (r % 64)) == 0
                }
                Shape::Chain { .. } => unreachable!(),
            },
        }
    }

    fn edge_has(&self, p: StateId, r: StateId, t: TerminalId) -> bool {
        let set = match &self.shape {
            Shape::Chain { edge_set, .. } => {
                if r != p + 1 {
                    return false;
                }
                edge_set[p as usize]
            }
            Shape::General { pair_set, .. } => match pair_set.get(&(p, r)) {
                Some(s) => *s,
                None => return false,
            },
        };
        self.label_sets[set as usize][t.index()]
    }

    /// Split states for `W → X Z` over `(p, r)`, ascending.
    fn splits(&self, x: u32, z: u32, p: StateId, r: StateId) -> Splits {
        match &self.shape {
            Shape::Chain { .. } => {
                let (g, x, z) = (&self.g, x as usize, z as usize);
                let lo = (p + g.minlen[x].max(1)).max(r.saturating_sub(g.maxlen[z]));
                let hi = (r.saturating_sub(g.minlen[z].max(1))).min(p.saturating_add(g.maxlen[x]));
                Splits::Range(lo..=hi)
            }
            Shape::General { reach, .. } => {
                let bit = |a: StateId, b: StateId| {
                    reach[a as usize][b as usize / 64] & (1 << (b % 64)) != 0
                };
                Splits::List(
                    (0..self.states as StateId)
                        .filter(|q| bit(p, *q) && bit(*q, r))
                        .collect::<Vec<_>>()
                        .into_iter(),
                )
            }
        }
    }

    fn choices(&self, w: u32, p: StateId, r: StateId) -> Vec<Choice> {
        let mut out = Vec::new();
        for rule in &self.g.rules[w as usize] {
            match *rule {
                Rule::Term(t) => {
                    if self.edge_has(p, r, t) {
                        out.push(Choice::Term(t));
                    }
                }
                Rule::Bin(x, z) => {
                    for q in self.splits(x, z, p, r) {
                        out.push(Choice::Bin { x, z, q });
                    }
                }
            }
        }
        out
    }

    fn count(&mut self, w: u32, p: StateId, r: StateId) -> u32 {
        if self.trivially_empty(w, p, r) {
            return 0;
        }
        let class = self.class(p, r);
        if let Some(v) = self.memo.get(class, w) {
            return v;
        }
        let g = self.g.clone();
        let mut sum = 0u128;
        let mut spill = BigUint::zero();
        for rule in &g.rules[w as usize] {
            match *rule {
                Rule::Term(t) => {
                    if self.edge_has(p, r, t) {
                        sum += 1;
                    }
                }
                Rule::Bin(x, z) => {
                    for q in self.splits(x, z, p, r) {
                        let cx = self.count(x, p, q);
                        if cx == 0 {
                            continue;
                        }
                        let cz = self.count(z, q, r);
                        if cz == 0 {
                            continue;
                        }
                        let (a, b) = (
                            self.small_values[cx as usize],
                            self.small_values[cz as usize],
                        );
                        let product = (a != BIG && b != BIG).then(|| a as u128 * b as u128);
                        match product.and_then(|m| sum.checked_add(m)) {
                            Some(s) => sum = s,
                            None => spill += self.value(cx) * self.value(cz),
                        }
                    }
                }
            }
        }
        let v = if sum == 0 && spill.is_zero() {
            0
        } else {
            let v = self.small_values.len() as u32;
            let total = spill + sum;
            match total.to_u64() {
                Some(t) if t != BIG => self.small_values.push(t),
                _ => {
                    self.small_values.push(BIG);
                    self.big_values.insert(v, total);
                }
            }
            v
        };
        self.memo.set(class, w, v);
        v
    }

    fn value(&self, v: u32) -> BigUint {
        match self.small_values[v as usize] {
            BIG => self.big_values[&v].clone(),
            small => BigUint::from(small),
        }
    }

    /// Count of an already evaluated triple (zero if it was never needed).
    fn lookup(&self, w: u32, p: StateId, r: StateId) -> BigUint {
        if self.trivially_empty(w, p, r) {
            return BigUint::zero();
        }
        match self.memo.get(self.class(p, r), w) {
            Some(v) => self.value(v),
            None => BigUint::zero(),
        }
    }

    fn lookup_small(&self, w: u32, p: StateId, r: StateId) -> Option<u64> {
        if self.trivially_empty(w, p, r) {
            return Some(0);
        }
        match self.memo.get(self.class(p, r), w) {
            Some(v) => Some(self.small_values[v as usize]).filter(|v| *v != BIG),
            None => Some(0),
        }
    }

    fn choice_count(&self, p: StateId, r: StateId, c: Choice) -> BigUint {
        match c {
            Choice::Term(_) => BigUint::one(),
            Choice::Bin { x, z, q } => {
                let cx = self.lookup(x, p, q);
                if cx.is_zero() {
                    return BigUint::zero();
                }
                cx * self.lookup(z, q, r)
            }
        }
    }

    /// Count of the triple `(p, nt, r)`.
    pub fn triple_count(&self, nt: NonterminalId, p: StateId, r: StateId) -> BigUint {
        self.lookup(nt.0, p, r)
    }

    /// The `i`-th word as terminal ids.
    pub fn unrank_ids(&self, i: &BigUint) -> Result<Vec<TerminalId>, RankError> {
        if *i >= self.total {
            return Err(RankError::OutOfRange {
                index: i.clone(),
                total: self.total.clone(),
            });
        }
        let k = self.roots.partition_point(|(end, _, _)| end <= i);
        let (end, f, choice) = &self.roots[k];
        let base = end - self.choice_count(self.initial, *f, *choice);
        if let Some(j) = self.total.to_u64().and((i - &base).to_u64()) {
            return Ok(self.unrank_small(*choice, *f, j));
        }
        let mut out = Vec::new();
        let mut stack = vec![(*choice, self.initial, *f, i - base)];
        while let Some((choice, p, r, j)) = stack.pop() {
            match choice {
                Choice::Term(t) => out.push(t),
                Choice::Bin { x, z, q } => {
                    let cz = self.lookup(z, q, r);
                    let (jx, jz) = j.div_rem(&cz);
                    let right = self.pick(z, q, r, jz);
                    let left = self.pick(x, p, q, jx);
                    stack.push((right.0, q, r, right.1));
                    stack.push((left.0, p, q, left.1));
                }
            }
        }
        Ok(out)
    }

    fn unrank_small(&self, choice: Choice, f: StateId, j: u64) -> Vec<TerminalId> {
        let mut out = Vec::new();
        let cz = match choice {
            Choice::Term(_) => 1,
            Choice::Bin { z, q, .. } => self.lookup(z, q, f).to_u64().expect("total fits u64"),
        };
        let mut stack = vec![(choice, self.initial, f, j, cz)];
        while let Some((choice, p, r, j, cz)) = stack.pop() {
            match choice {
                Choice::Term(t) => out.push(t),
                Choice::Bin { x, z, q } => {
                    let (c, jz, czz) = self.pick_small(z, q, r, j % cz);
                    stack.push((c, q, r, jz, czz));
                    let (c, jx, czx) = self.pick_small(x, p, q, j / cz);
                    stack.push((c, p, q, jx, czx));
                }
            }
        }
        out
    }

    /// The alternative of `(p, w, r)` holding local index `j`, and the index
    /// within it.
    fn pick(&self, w: u32, p: StateId, r: StateId, j: BigUint) -> (Choice, BigUint) {
        self.with_alternatives(w, p, r, |alts| match alts {
            Alternatives::Small(v) => {
                let j = j.to_u64().expect("local index below a machine-word count");
                let (c, j, _) = self.select_small(v, p, j);
                (c, BigUint::from(j))
            }
            Alternatives::Big(ends, choices) => {
                let k = ends.partition_point(|end| *end <= j);
                let j = if k == 0 { j } else { j - &ends[k - 1] };
                (self.absolute(choices[k], p), j)
            }
        })
    }

    /// Like [`Intersection::pick`], also returning the count of the chosen
    /// alternative's right child.
    fn pick_small(&self, w: u32, p: StateId, r: StateId, j: u64) -> (Choice, u64, u64) {
        self.with_alternatives(w, p, r, |alts| match alts {
            Alternatives::Small(v) => self.select_small(v, p, j),
            Alternatives::Big(..) => unreachable!("total fits u64"),
        })
    }

    fn select_small(&self, v: &[(u64, u64, Choice)], p: StateId, j: u64) -> (Choice, u64, u64) {
        let k = v.partition_point(|(end, _, _)| *end <= j);
        let j = if k == 0 { j } else { j - v[k - 1].0 };
        (self.absolute(v[k].2, p), j, v[k].1)
    }

    fn absolute(&self, c: Choice, p: StateId) -> Choice {
        match (c, &self.shape) {
            (Choice::Bin { x, z, q }, Shape::Chain { .. }) => Choice::Bin { x, z, q: p + q },
            (c, _) => c,
        }
    }

    fn with_alternatives<T>(
        &self,
        w: u32,
        p: StateId,
        r: StateId,
        f: impl FnOnce(&Alternatives) -> T,
    ) -> T {
        let key = (self.class(p, r), w);
        if let Some(a) = self.alternatives.read().unwrap().get(&key) {
            return f(a);
        }
        let a = self.alternatives_of(w, p, r);
        let out = f(&a);
        let mut cache = self.alternatives.write().unwrap();
        if cache.len() < ALTERNATIVES_LIMIT {
            cache.insert(key, a);
        }
        out
    }

    /// The nonzero alternatives of `(p, w, r)` in canonical order.
    fn alternatives_of(&self, w: u32, p: StateId, r: StateId) -> Alternatives {
        let relative = |c: Choice| match (c, &self.shape) {
            (Choice::Bin { x, z, q }, Shape::Chain { .. }) => Choice::Bin { x, z, q: q - p },
            (c, _) => c,
        };
        if let Some(v) = self.alternatives_small(w, p, r) {
            return Alternatives::Small(
                v.into_iter()
                    .map(|(e, cz, c)| (e, cz, relative(c)))
                    .collect(),
            );
        }
        let mut acc = BigUint::zero();
        let mut ends = Vec::new();
        let mut choices = Vec::new();
        for c in self.choices(w, p, r) {
            let n = self.choice_count(p, r, c);
            if !n.is_zero() {
                acc += n;
                ends.push(acc.clone());
                choices.push(relative(c));
            }
        }
        Alternatives::Big(ends, choices)
    }

    /// [`Intersection::alternatives_of`] in machine words, if every count
    /// involved fits.
    fn alternatives_small(
        &self,
        w: u32,
        p: StateId,
        r: StateId,
    ) -> Option<Vec<(u64, u64, Choice)>> {
        let mut acc = 0u64;
        let mut out = Vec::new();
        for rule in &self.g.rules[w as usize] {
            match *rule {
                Rule::Term(t) => {
                    if self.edge_has(p, r, t) {
                        acc = acc.checked_add(1)?;
                        out.push((acc, 1, Choice::Term(t)));
                    }
                }
                Rule::Bin(x, z) => {
                    for q in self.splits(x, z, p, r) {
                        let cx = self.lookup_small(x, p, q)?;
                        if cx == 0 {
                            continue;
                        }
                        let cz = self.lookup_small(z, q, r)?;
                        if cz == 0 {
                            continue;
                        }
                        acc = acc.checked_add(cx.checked_mul(cz)?)?;
                        out.push((acc, cz, Choice::Bin { x, z, q }));
                    }
                }
            }
        }
        Some(out)
    }

    /// Inverse of [`Intersection::unrank_ids`].
    pub fn rank_ids(&self, word: &[TerminalId]) -> Result<BigUint, RankError> {
        let not_in = || RankError::NotInLanguage(self.g.grammar.word_names(word).join(" "));
        let path = self.state_path(word).ok_or_else(not_in)?;
        let last = *path.last().unwrap();
        if !self.finals.contains(&last) {
            return Err(not_in());
        }
        let start = self.g.grammar.start().0;
        let mut r = Ranker {
            x: self,
            word,
            path: &path,
            pos: path.iter().enumerate().map(|(i, q)| (*q, i)).collect(),
            derives: FxHashMap::default(),
        };
        if !r.derives(start, 0, word.len()) {
            return Err(not_in());
        }
        let mut offset = BigUint::zero();
        for &f in self.finals.iter().take_while(|f| **f != last) {
            offset += self.lookup(start, self.initial, f);
        }
        Ok(offset + r.rank(start, 0, word.len()))
    }

    /// The unique run of the automaton on `word`, if it has one.
    fn state_path(&self, word: &[TerminalId]) -> Option<Vec<StateId>> {
        match &self.shape {
            Shape::Chain { .. } => {
                if word.len() + 1 != self.states {
                    return None;
                }
                let path: Vec<StateId> = (0..=word.len() as StateId).collect();
                path.windows(2)
                    .zip(word)
                    .all(|(w, t)| self.edge_has(w[0], w[1], *t))
                    .then_some(path)
            }
            Shape::General { pair_set, .. } => {
                let mut path = vec![self.initial];
                for t in word {
                    let p = *path.last().unwrap();
                    let mut next = (0..self.states as StateId)
                        .filter(|r| pair_set.contains_key(&(p, *r)) && self.edge_has(p, *r, *t));
                    let r = next.next()?;
                    if next.next().is_some() {
                        return None;
                    }
                    path.push(r);
                }
                Some(path)
            }
        }
    }

    /// The explicit intersection grammar over useful triples, named
    /// `p:W:r`, with the start productions inlined into a fresh start `S`.
    /// Production order follows the canonical order used for unranking.
    pub fn to_grammar(&self) -> Grammar {
        let g = &self.g.grammar;
        let mut b = GrammarBuilder::new(g.nonterminal_name(g.start()));
        let name = |p: StateId, w: u32, r: StateId| {
            format!("{p}:{}:{r}", g.nonterminal_name(NonterminalId(w)))
        };
        let start = b.nonterminal(g.nonterminal_name(g.start()));
        let mut queue: Vec<(StateId, u32, StateId)> = Vec::new();
        let mut seen: BTreeSet<(StateId, u32, StateId)> = BTreeSet::new();
        let mut emit = |b: &mut GrammarBuilder,
                        lhs: NonterminalId,
                        p: StateId,
                        r: StateId,
                        c: Choice,
                        queue: &mut Vec<(StateId, u32, StateId)>| match c {
            Choice::Term(t) => {
                let t = b.terminal(g.terminal_name(t));
                b.push(lhs, vec![Symbol::T(t)]);
            }
            Choice::Bin { x, z, q } => {
                let xs = b.nonterminal(&name(p, x, q));
                let zs = b.nonterminal(&name(q, z, r));
                b.push(lhs, vec![Symbol::N(xs), Symbol::N(zs)]);
                for t in [(p, x, q), (q, z, r)] {
                    if seen.insert(t) {
                        queue.push(t);
                    }
                }
            }
        };
        for (_, f, c) in &self.roots {
            emit(&mut b, start, self.initial, *f, *c, &mut queue);
        }
        let mut head = 0;
        while head < queue.len() {
            let (p, w, r) = queue[head];
            head += 1;
            let lhs = b.nonterminal(&name(p, w, r));
            for c in self.choices(w, p, r) {
                if !self.choice_count(p, r, c).is_zero() {
                    emit(&mut b, lhs, p, r, c, &mut queue);
                }
            }
        }
        b.finish()
    }

    /// Triples `(p, W, r)` that are productive and reachable from a start
    /// triple `(q_α, S, q_ω)`.
    pub fn useful_triples(&self) -> BTreeSet<(StateId, NonterminalId, StateId)> {
        let start = self.g.grammar.start().0;
        let mut seen = BTreeSet::new();
        let mut stack: Vec<(StateId, u32, StateId)> = self
            .finals
            .iter()
            .filter(|f| !self.lookup(start, self.initial, **f).is_zero())
            .map(|f| (self.initial, start, *f))
            .collect();
        while let Some((p, w, r)) = stack.pop() {
            if !seen.insert((p, NonterminalId(w), r)) {
                continue;
            }
            for c in self.choices(w, p, r) {
                if let Choice::Bin { x, z, q } = c {
                    if !self.choice_count(p, r, c).is_zero() {
                        stack.push((p, x, q));
                        stack.push((q, z, r));
                    }
                }
            }
        }
        seen
    }
}

struct Ranker<'a> {
    x: &'a Intersection,
    word: &'a [TerminalId],
    path: &'a [StateId],
    /// Position of each state on the run.
    pos: HashMap<StateId, usize>,
    derives: FxHashMap<(u32, usize, usize), bool>,
}

impl Ranker<'_> {
    /// Whether `w` derives `word[i..j]` (a plain top-down recognizer).
    fn derives(&mut self, w: u32, i: usize, j: usize) -> bool {
        if j <= i {
            return false;
        }
        let len = (j - i) as u32;
        let g = &self.x.g;
        if len < g.minlen[w as usize] || len > g.maxlen[w as usize] {
            return false;
        }
        if let Some(&d) = self.derives.get(&(w, i, j)) {
            return d;
        }
        let mut found = false;
        'rules: for rule in &g.rules[w as usize] {
            match *rule {
                Rule::Term(t) => {
                    if j == i + 1 && self.word[i] == t {
                        found = true;
                        break 'rules;
                    }
                }
                Rule::Bin(x, z) => {
                    for m in i + 1..j {
                        if self.derives(x, i, m) && self.derives(z, m, j) {
                            found = true;
                            break 'rules;
                        }
                    }
                }
            }
        }
        self.derives.insert((w, i, j), found);
        found
    }

    /// Local rank of `word[i..j]` under `w`; requires `derives(w, i, j)`.
    fn rank(&mut self, w: u32, i: usize, j: usize) -> BigUint {
        let x = self.x;
        let (p, r) = (self.path[i], self.path[j]);
        let mut offset = BigUint::zero();
        for rule in &x.g.rules[w as usize] {
            match *rule {
                Rule::Term(t) => {
                    if x.edge_has(p, r, t) {
                        if j == i + 1 && self.word[i] == t {
                            return offset;
                        }
                        offset += 1u32;
                    }
                }
                Rule::Bin(xn, zn) => {
                    for q in x.splits(xn, zn, p, r) {
                        if let Some(&m) = self.pos.get(&q) {
                            if i < m && m < j && self.derives(xn, i, m) && self.derives(zn, m, j) {
                                let cz = x.lookup(zn, q, r);
                                let jx = self.rank(xn, i, m);
                                let jz = self.rank(zn, m, j);
                                return offset + jx * cz + jz;
                            }
                        }
                        offset += x.choice_count(p, r, Choice::Bin { x: xn, z: zn, q });
                    }
                }
            }
        }
        unreachable!("derivation exists")
    }
}

impl Ranking for Intersection {
    fn total(&self) -> &BigUint {
        &self.total
    }

    fn unrank(&self, i: &BigUint) -> Result<Vec<String>, RankError> {
        Ok(self.g.grammar.word_names(&self.unrank_ids(i)?))
    }

    fn rank(&self, word: &[String]) -> Result<BigUint, RankError> {
        let ids: Option<Vec<TerminalId>> =
            word.iter().map(|t| self.g.grammar.terminal_id(t)).collect();
        match ids {
            Some(ids) => self.rank_ids(&ids),
            None => Err(RankError::NotInLanguage(word.join(" "))),
        }
    }
}

/// `L(g) ∩ L(a)` as an explicit pruned grammar over triple nonterminals.
pub fn intersect(g: &Grammar, a: &AcyclicAutomaton) -> Result<Grammar, IntersectionError> {
    let idx = IndexedCnf::new(g.clone())?;
    Ok(Intersection::new(idx, a).to_grammar())
}

/// Reference construction: every binary production with every state triple,
/// every terminal production with every matching transition, start
/// productions inlined, then pruned. Cubic in `|Q|`; for tests.
pub fn intersect_naive(g: &Grammar, a: &AcyclicAutomaton) -> Result<Grammar, IntersectionError> {
    if !g.is_cnf() {
        return Err(IntersectionError::NotCnf);
    }
    let q = a.num_states() as StateId;
    let mut b = GrammarBuilder::new(g.nonterminal_name(g.start()));
    let start = b.nonterminal(g.nonterminal_name(g.start()));
    let name =
        |p: StateId, w: NonterminalId, r: StateId| format!("{p}:{}:{r}", g.nonterminal_name(w));
    let mut rules: Vec<(String, Vec<Symbol>)> = Vec::new();
    for prod in g.productions() {
        match prod.rhs.as_slice() {
            [Symbol::T(t)] => {
                for tr in a.transitions() {
                    if a.label_name(tr.label) == g.terminal_name(*t) {
                        let tt = b.terminal(g.terminal_name(*t));
                        rules.push((name(tr.from, prod.lhs, tr.to), vec![Symbol::T(tt)]));
                    }
                }
            }
            [Symbol::N(x), Symbol::N(z)] => {
                for p in 0..q {
                    for m in 0..q {
                        for r in 0..q {
                            let xs = b.nonterminal(&name(p, *x, m));
                            let zs = b.nonterminal(&name(m, *z, r));
                            rules.push((name(p, prod.lhs, r), vec![Symbol::N(xs), Symbol::N(zs)]));
                        }
                    }
                }
            }
            _ => unreachable!("checked is_cnf"),
        }
    }
    for f in a.finals() {
        let root = name(a.initial(), g.start(), f);
        for (lhs, rhs) in &rules {
            if *lhs == root {
                b.push(start, rhs.clone());
            }
        }
    }
    for (lhs, rhs) in rules {
        let l = b.nonterminal(&lhs);
        b.push(l, rhs);
    }
    Ok(prune(&b.finish()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{slice_automaton, trie};
    use crate::cfg::{enumerate_words, Production};
    use crate::cnf::to_cnf;
    use crate::compile::compile;
    use crate::oracle::enumerate_well_typed;
    use crate::types::Context;

    fn ab_grammar() -> Grammar {
        Grammar::parse_rules("S", "S -> A B ; A -> a ; B -> b")
    }

    fn alphabet(g: &Grammar) -> Vec<String> {
        g.terminals().to_vec()
    }

    fn production_set(g: &Grammar) -> BTreeSet<(String, Vec<String>)> {
        g.productions()
            .iter()
            .map(|Production { lhs, rhs }| {
                (
                    g.nonterminal_name(*lhs).to_string(),
                    rhs.iter().map(|s| g.symbol_name(*s).to_string()).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn tiny_intersections() {
        let g = ab_grammar();
        let words =
            |a: &AcyclicAutomaton| enumerate_words(&intersect(&g, a).unwrap(), 4, 100).unwrap();
        let ab = trie([vec!["a", "b"]], &alphabet(&g)).unwrap();
        assert_eq!(
            words(&ab),
            BTreeSet::from([vec!["a".to_string(), "b".to_string()]])
        );
        let one = intersect(&g, &slice_automaton(&alphabet(&g), 1)).unwrap();
        assert!(one.is_empty());
        let x = Intersection::new(IndexedCnf::new(g.clone()).unwrap(), &ab);
        assert_eq!(*x.total(), BigUint::one());
        assert_eq!(x.unrank(&BigUint::zero()).unwrap(), ["a", "b"]);
        assert_eq!(x.rank(&["a".into(), "b".into()]).unwrap(), BigUint::zero());
        assert!(x.unrank(&BigUint::one()).is_err());
    }

    #[test]
    fn length_bounds() {
        let g = Grammar::parse_rules("S", "S -> A S | A B ; A -> a ; B -> b");
        let idx = IndexedCnf::new(g).unwrap();
        let s = idx.grammar().start();
        assert_eq!(idx.min_length(s), Some(2));
        assert_eq!(idx.max_length(s), None);
        let a = idx.grammar().nonterminal_id("A").unwrap();
        assert_eq!(idx.max_length(a), Some(1));
    }

    #[test]
    fn cyclic_grammar_finite_slice() {
        // Aⁿ b: the slice makes a recursive grammar finite.
        let g = Grammar::parse_rules("S", "S -> A S | A B ; A -> a | b ; B -> b");
        let idx = IndexedCnf::new(g.clone()).unwrap();
        for n in 0..8 {
            let a = slice_automaton(&alphabet(&g), n);
            let x = Intersection::new(idx.clone(), &a);
            let expect = if n >= 2 { 1u64 << (n - 1) } else { 0 };
            assert_eq!(*x.total(), BigUint::from(expect));
            for i in 0..expect {
                let w = x.unrank(&BigUint::from(i)).unwrap();
                assert_eq!(w.len(), n);
                assert_eq!(x.rank(&w).unwrap(), BigUint::from(i));
            }
        }
    }

    fn reduced() -> Context {
        Context::builder()
            .types(["Int", "Bool"])
            .signature("b2i", ["Bool"], "Int")
            .arity(1)
            .build()
            .unwrap()
    }

    #[test]
    fn matches_oracle_on_slices() {
        let ctx = reduced();
        let cnf = to_cnf(&compile(&ctx).grammar).unwrap().into_grammar();
        let idx = IndexedCnf::new(cnf.clone()).unwrap();
        for n in 0..=12 {
            let a = slice_automaton(cnf.terminals(), n);
            let x = Intersection::new(idx.clone(), &a);
            let oracle = enumerate_well_typed(&ctx, n).unwrap();
            assert_eq!(*x.total(), BigUint::from(oracle.len()), "n = {n}");
            let explicit = enumerate_words(&x.to_grammar(), n, 1_000_000).unwrap();
            assert_eq!(explicit, oracle, "n = {n}");
        }
    }

    #[test]
    fn useful_triples_match_naive() {
        let ctx = Context::builder().types(["Int", "Bool"]).build().unwrap();
        let cnf = to_cnf(&compile(&ctx).grammar).unwrap().into_grammar();
        for n in [7, 8, 10] {
            let a = slice_automaton(cnf.terminals(), n);
            let fast = intersect(&cnf, &a).unwrap();
            let naive = intersect_naive(&cnf, &a).unwrap();
            assert_eq!(production_set(&fast), production_set(&naive), "n = {n}");
            let x = Intersection::new(IndexedCnf::new(cnf.clone()).unwrap(), &a);
            let names: BTreeSet<String> = x
                .useful_triples()
                .iter()
                .map(|(p, w, r)| format!("{p}:{}:{r}", cnf.nonterminal_name(*w)))
                .collect();
            let mut naive_names: BTreeSet<String> = naive
                .nonterminals()
                .iter()
                .filter(|s| s.contains(':'))
                .cloned()
                .collect();
            // The start triple is inlined as `S` in the explicit grammar.
            if !x.is_empty() {
                naive_names.insert(format!("0:S:{n}"));
            }
            assert_eq!(names, naive_names);
        }
    }

    #[test]
    fn general_automaton_matches_chain() {
        let ctx = reduced();
        let cnf = to_cnf(&compile(&ctx).grammar).unwrap().into_grammar();
        let idx = IndexedCnf::new(cnf.clone()).unwrap();
        let words = enumerate_well_typed(&ctx, 11).unwrap();
        let t = trie(words.iter().cloned(), cnf.terminals()).unwrap();
        assert!(t.as_chain().is_none());
        let x = Intersection::new(idx, &t);
        assert_eq!(*x.total(), BigUint::from(words.len()));
        let mut seen = BTreeSet::new();
        for i in 0..words.len() {
            let w = x.unrank(&BigUint::from(i)).unwrap();
            assert_eq!(x.rank(&w).unwrap(), BigUint::from(i));
            seen.insert(w);
        }
        assert_eq!(seen, words);
    }
}
