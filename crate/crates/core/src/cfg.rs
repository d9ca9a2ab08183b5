//! Context-free grammars over interned symbols.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TerminalId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NonterminalId(pub u32);

impl TerminalId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl NonterminalId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    T(TerminalId),
    N(NonterminalId),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Production {
    pub lhs: NonterminalId,
    pub rhs: Vec<Symbol>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("production for `{0}` has an empty right-hand side")]
    Epsilon(String),
    #[error("unit production `{0} -> {1}`")]
    Unit(String, String),
    #[error("malformed grammar dump at line {0}")]
    Dump(usize),
    #[error("enumeration budget of {0} words exceeded")]
    Budget(usize),
}

/// A grammar `⟨Σ, V, P, S⟩`. The empty language is an empty production list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    terminals: Vec<String>,
    nonterminals: Vec<String>,
    productions: Vec<Production>,
    start: NonterminalId,
}

impl Grammar {
    /// Builds a grammar from named rules: anything that appears on a left-hand
    /// side is a nonterminal, every other right-hand-side symbol a terminal.
    pub fn from_rules<S: AsRef<str>>(start: &str, rules: &[(S, Vec<S>)]) -> Grammar {
        let lhs_names: BTreeSet<&str> = rules.iter().map(|(l, _)| l.as_ref()).collect();
        let mut b = GrammarBuilder::new(start);
        for (lhs, rhs) in rules {
            let l = b.nonterminal(lhs.as_ref());
            let r = rhs
                .iter()
                .map(|s| {
                    let s = s.as_ref();
                    if lhs_names.contains(s) || s == start {
                        Symbol::N(b.nonterminal(s))
                    } else {
                        Symbol::T(b.terminal(s))
                    }
                })
                .collect();
            b.push(l, r);
        }
        b.finish()
    }

    /// Shorthand for tests: `"S -> A B ; A -> a"`.
    pub fn parse_rules(start: &str, text: &str) -> Grammar {
        let rules: Vec<(&str, Vec<&str>)> = text
            .split(';')
            .filter(|r| !r.trim().is_empty())
            .flat_map(|r| {
                let (l, rest) = r.split_once("->").expect("rule needs ->");
                rest.split('|')
                    .map(|alt| (l.trim(), alt.split_whitespace().collect()))
                    .collect::<Vec<_>>()
            })
            .collect();
        Grammar::from_rules(start, &rules)
    }

    pub fn empty(start: &str) -> Grammar {
        GrammarBuilder::new(start).finish()
    }

    pub fn start(&self) -> NonterminalId {
        self.start
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn terminals(&self) -> &[String] {
        &self.terminals
    }

    pub fn nonterminals(&self) -> &[String] {
        &self.nonterminals
    }

    pub fn terminal_name(&self, t: TerminalId) -> &str {
        &self.terminals[t.index()]
    }

    pub fn nonterminal_name(&self, n: NonterminalId) -> &str {
        &self.nonterminals[n.index()]
    }

    pub fn symbol_name(&self, s: Symbol) -> &str {
        match s {
            Symbol::T(t) => self.terminal_name(t),
            Symbol::N(n) => self.nonterminal_name(n),
        }
    }

    pub fn terminal_id(&self, name: &str) -> Option<TerminalId> {
        self.terminals
            .iter()
            .position(|t| t == name)
            .map(|i| TerminalId(i as u32))
    }

    pub fn nonterminal_id(&self, name: &str) -> Option<NonterminalId> {
        self.nonterminals
            .iter()
            .position(|t| t == name)
            .map(|i| NonterminalId(i as u32))
    }

    pub fn is_empty(&self) -> bool {
        self.productions.is_empty()
    }

    /// Every production is `W -> X Z` or `W -> t`.
    pub fn is_cnf(&self) -> bool {
        self.productions.iter().all(|p| match p.rhs.as_slice() {
            [Symbol::T(_)] => true,
            [Symbol::N(_), Symbol::N(_)] => true,
            _ => false,
        })
    }

    /// Rejects ε-productions and unit productions `A -> B`.
    pub fn check_proper(&self) -> Result<(), GrammarError> {
        for p in &self.productions {
            match p.rhs.as_slice() {
                [] => return Err(GrammarError::Epsilon(self.nonterminal_name(p.lhs).into())),
                [Symbol::N(b)] => {
                    return Err(GrammarError::Unit(
                        self.nonterminal_name(p.lhs).into(),
                        self.nonterminal_name(*b).into(),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Productions grouped by left-hand side, preserving order.
    pub fn productions_by_lhs(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.nonterminals.len()];
        for (i, p) in self.productions.iter().enumerate() {
            by[p.lhs.index()].push(i);
        }
        by
    }

    pub fn word_names(&self, word: &[TerminalId]) -> Vec<String> {
        word.iter()
            .map(|t| self.terminal_name(*t).to_string())
            .collect()
    }

    /// Writes the grammar dump: header lines then one production per line.
    /// `tag` may append a trailing `# label` per production.
    pub fn dump_with(&self, tag: impl Fn(usize) -> Option<String>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "start: {}", quote(self.nonterminal_name(self.start)));
        let _ = writeln!(out, "# size: {}", size_lange_leiss(self));
        for (i, p) in self.productions.iter().enumerate() {
            out.push_str(&quote(self.nonterminal_name(p.lhs)));
            out.push_str(" ->");
            for s in &p.rhs {
                out.push(' ');
                match s {
                    Symbol::N(n) => out.push_str(&quote(self.nonterminal_name(*n))),
                    Symbol::T(t) => out.push_str(self.terminal_name(*t)),
                }
            }
            if let Some(label) = tag(i) {
                out.push_str(" # ");
                out.push_str(&label);
            }
            out.push('\n');
        }
        out
    }

    pub fn dump(&self) -> String {
        self.dump_with(|_| None)
    }

    /// Reads a dump produced by [`Grammar::dump`]. Symbols are classified with
    /// the same left-hand-side rule as [`Grammar::from_rules`].
    pub fn parse_dump(text: &str) -> Result<Grammar, GrammarError> {
        let mut start = None;
        let mut rules: Vec<(String, Vec<String>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(s) = line.strip_prefix("start:") {
                start = Some(unquote_one(s.trim()).ok_or(GrammarError::Dump(i + 1))?);
                continue;
            }
            let body = match line.find(" # ") {
                Some(pos) => &line[..pos],
                None => line,
            };
            let syms = split_quoted(body).ok_or(GrammarError::Dump(i + 1))?;
            if syms.len() < 2 || syms[1] != "->" {
                return Err(GrammarError::Dump(i + 1));
            }
            rules.push((syms[0].clone(), syms[2..].to_vec()));
        }
        let start = start.ok_or(GrammarError::Dump(0))?;
        let rules: Vec<(&str, Vec<&str>)> = rules
            .iter()
            .map(|(l, r)| (l.as_str(), r.iter().map(String::as_str).collect()))
            .collect();
        Ok(Grammar::from_rules(&start, &rules))
    }
}

fn quote(name: &str) -> String {
    if name.contains(char::is_whitespace) {
        format!("[{name}]")
    } else {
        name.to_string()
    }
}

fn unquote_one(s: &str) -> Option<String> {
    let parts = split_quoted(s)?;
    (parts.len() == 1).then(|| parts[0].clone())
}

fn split_quoted(s: &str) -> Option<Vec<String>> {
    let mut out = Vec::new();
    let mut rest = s.trim_start();
    while !rest.is_empty() {
        if let Some(inner) = rest.strip_prefix('[') {
            if let Some(end) = inner
                .find("] ")
                .or_else(|| inner.strip_suffix(']').map(|x| x.len()))
            {
                let name = &inner[..end];
                if name.contains(char::is_whitespace) {
                    out.push(name.to_string());
                    rest = inner[end + 1..].trim_start();
                    continue;
                }
            }
        }
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        out.push(rest[..end].to_string());
        rest = rest[end..].trim_start();
    }
    Some(out)
}

/// Interning builder.
#[derive(Debug)]
pub struct GrammarBuilder {
    terminals: Vec<String>,
    nonterminals: Vec<String>,
    term_index: HashMap<String, TerminalId>,
    nt_index: HashMap<String, NonterminalId>,
    productions: Vec<Production>,
    start: NonterminalId,
}

impl GrammarBuilder {
    pub fn new(start: &str) -> GrammarBuilder {
        let mut b = GrammarBuilder {
            terminals: Vec::new(),
            nonterminals: Vec::new(),
            term_index: HashMap::new(),
            nt_index: HashMap::new(),
            productions: Vec::new(),
            start: NonterminalId(0),
        };
        b.start = b.nonterminal(start);
        b
    }

    pub fn terminal(&mut self, name: &str) -> TerminalId {
        if let Some(id) = self.term_index.get(name) {
            return *id;
        }
        let id = TerminalId(self.terminals.len() as u32);
        self.terminals.push(name.to_string());
        self.term_index.insert(name.to_string(), id);
        id
    }

    pub fn nonterminal(&mut self, name: &str) -> NonterminalId {
        if let Some(id) = self.nt_index.get(name) {
            return *id;
        }
        let id = NonterminalId(self.nonterminals.len() as u32);
        self.nonterminals.push(name.to_string());
        self.nt_index.insert(name.to_string(), id);
        id
    }

    pub fn lookup_nonterminal(&self, name: &str) -> Option<NonterminalId> {
        self.nt_index.get(name).copied()
    }

    pub fn push(&mut self, lhs: NonterminalId, rhs: Vec<Symbol>) -> usize {
        self.productions.push(Production { lhs, rhs });
        self.productions.len() - 1
    }

    pub fn finish(self) -> Grammar {
        Grammar {
            terminals: self.terminals,
            nonterminals: self.nonterminals,
            productions: self.productions,
            start: self.start,
        }
    }
}

/// `|G| = Σ (1 + |rhs|)` over all productions.
pub fn size_lange_leiss(g: &Grammar) -> usize {
    g.productions.iter().map(|p| 1 + p.rhs.len()).sum()
}

/// Upper bound on the binarized size of a production with `|wσ| = len`.
pub fn binarized_size_bound(len: usize) -> usize {
    if len <= 3 {
        len
    } else {
        3 * len - 1
    }
}

/// Removes unproductive and unreachable nonterminals (and their productions).
/// Returns the pruned grammar together with, for each kept production, its
/// index in the input.
pub fn prune_indexed(g: &Grammar) -> (Grammar, Vec<usize>) {
    let by_lhs = g.productions_by_lhs();
    let mut alive: Vec<bool> = vec![true; g.productions.len()];
    loop {
        // Productive set by fixpoint over live productions.
        let mut productive = vec![false; g.nonterminals.len()];
        let mut changed = true;
        while changed {
            changed = false;
            for (i, p) in g.productions.iter().enumerate() {
                if !alive[i] || productive[p.lhs.index()] {
                    continue;
                }
                if p.rhs.iter().all(|s| match s {
                    Symbol::T(_) => true,
                    Symbol::N(n) => productive[n.index()],
                }) {
                    productive[p.lhs.index()] = true;
                    changed = true;
                }
            }
        }
        let mut next: Vec<bool> = g
            .productions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                alive[i]
                    && productive[p.lhs.index()]
                    && p.rhs.iter().all(|s| match s {
                        Symbol::T(_) => true,
                        Symbol::N(n) => productive[n.index()],
                    })
            })
            .collect();

        // Reachable set from the start symbol over surviving productions.
        let mut reachable = vec![false; g.nonterminals.len()];
        if productive[g.start.index()] {
            let mut stack = vec![g.start];
            reachable[g.start.index()] = true;
            while let Some(n) = stack.pop() {
                for &pi in &by_lhs[n.index()] {
                    if !next[pi] {
                        continue;
                    }
                    for s in &g.productions[pi].rhs {
                        if let Symbol::N(m) = s {
                            if !reachable[m.index()] {
                                reachable[m.index()] = true;
                                stack.push(*m);
                            }
                        }
                    }
                }
            }
        }
        for (i, p) in g.productions.iter().enumerate() {
            if !reachable[p.lhs.index()] {
                next[i] = false;
            }
        }
        if next == alive {
            break;
        }
        alive = next;
    }

    let mut b = GrammarBuilder::new(g.nonterminal_name(g.start));
    let mut kept = Vec::new();
    for (i, p) in g.productions.iter().enumerate() {
        if !alive[i] {
            continue;
        }
        let lhs = b.nonterminal(g.nonterminal_name(p.lhs));
        let rhs = p
            .rhs
            .iter()
            .map(|s| match s {
                Symbol::T(t) => Symbol::T(b.terminal(g.terminal_name(*t))),
                Symbol::N(n) => Symbol::N(b.nonterminal(g.nonterminal_name(*n))),
            })
            .collect();
        b.push(lhs, rhs);
        kept.push(i);
    }
    (b.finish(), kept)
}

pub fn prune(g: &Grammar) -> Grammar {
    prune_indexed(g).0
}

/// All words of length ≤ `max_len`, grouped by length, for ε-free grammars.
///
/// Straightforward dynamic programming over (symbol, length); unit
/// productions are handled by iterating each length to a fixpoint.
pub fn enumerate_words(
    g: &Grammar,
    max_len: usize,
    budget: usize,
) -> Result<BTreeSet<Vec<String>>, GrammarError> {
    g.check_no_epsilon()?;
    let n_nt = g.nonterminals.len();
    // table[nt][len] = set of words (as terminal ids)
    let mut table: Vec<Vec<BTreeSet<Vec<TerminalId>>>> =
        vec![vec![BTreeSet::new(); max_len + 1]; n_nt];
    let mut total = 0usize;
    for len in 1..=max_len {
        loop {
            let mut changed = false;
            for p in &g.productions {
                let mut produced = BTreeSet::new();
                splits(&p.rhs, len, &table, &mut Vec::new(), &mut produced);
                let cell = &mut table[p.lhs.index()][len];
                for w in produced {
                    if cell.insert(w) {
                        changed = true;
                        total += 1;
                        if total > budget {
                            return Err(GrammarError::Budget(budget));
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }
    let mut out = BTreeSet::new();
    for len in 0..=max_len {
        for w in &table[g.start.index()][len] {
            out.insert(g.word_names(w));
        }
    }
    Ok(out)
}

fn splits(
    rhs: &[Symbol],
    len: usize,
    table: &[Vec<BTreeSet<Vec<TerminalId>>>],
    prefix: &mut Vec<TerminalId>,
    out: &mut BTreeSet<Vec<TerminalId>>,
) {
    let Some((first, rest)) = rhs.split_first() else {
        if len == 0 {
            out.insert(prefix.clone());
        }
        return;
    };
    if len < rhs.len() {
        return;
    }
    match first {
        Symbol::T(t) => {
            prefix.push(*t);
            splits(rest, len - 1, table, prefix, out);
            prefix.pop();
        }
        Symbol::N(n) => {
            for l in 1..=len - rest.len() {
                for w in &table[n.index()][l] {
                    let mark = prefix.len();
                    prefix.extend_from_slice(w);
                    splits(rest, len - l, table, prefix, out);
                    prefix.truncate(mark);
                }
            }
        }
    }
}

impl Grammar {
    fn check_no_epsilon(&self) -> Result<(), GrammarError> {
        match self.productions.iter().find(|p| p.rhs.is_empty()) {
            Some(p) => Err(GrammarError::Epsilon(self.nonterminal_name(p.lhs).into())),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_follows_lhs_rule() {
        let g = Grammar::parse_rules("S", "S -> A b ; A -> a");
        assert_eq!(g.nonterminals(), ["S", "A"]);
        assert_eq!(g.terminals(), ["b", "a"]);
    }

    #[test]
    fn lange_leiss_sizes() {
        assert_eq!(size_lange_leiss(&Grammar::parse_rules("S", "S -> a")), 2);
        assert_eq!(
            size_lange_leiss(&Grammar::parse_rules("S", "S -> A B ; A -> a ; B -> b")),
            7
        );
    }

    #[test]
    fn binarized_bounds() {
        assert_eq!(binarized_size_bound(2), 2);
        assert_eq!(binarized_size_bound(3), 3);
        assert_eq!(binarized_size_bound(4), 11);
    }

    #[test]
    fn prune_unproductive_start() {
        let g = prune(&Grammar::parse_rules("S", "S -> A B ; A -> a ; B -> B b"));
        assert!(g.is_empty());
    }

    #[test]
    fn prune_unreachable() {
        let g = prune(&Grammar::parse_rules("S", "S -> a ; X -> b"));
        assert_eq!(g.dump(), "start: S\n# size: 2\nS -> a\n");
    }

    #[test]
    fn prune_is_idempotent() {
        let g = Grammar::parse_rules(
            "S",
            "S -> A B | c ; A -> a | D ; B -> b ; D -> D d ; E -> S",
        );
        let once = prune(&g);
        assert_eq!(prune(&once), once);
        assert_eq!(once.productions().len(), 4);
    }

    #[test]
    fn enumerate_small_language() {
        let g = Grammar::parse_rules("S", "S -> a S b | a b");
        let words = enumerate_words(&g, 6, 1000).unwrap();
        let flat: Vec<String> = words.iter().map(|w| w.join("")).collect();
        assert_eq!(flat, ["aaabbb", "aabb", "ab"]);
    }

    #[test]
    fn enumerate_with_unit_rules() {
        let g = Grammar::parse_rules("S", "S -> A ; A -> a | B ; B -> b");
        let words = enumerate_words(&g, 2, 10).unwrap();
        assert_eq!(words.len(), 2);
    }

    #[test]
    fn proper_check() {
        assert!(matches!(
            Grammar::parse_rules("S", "S -> A ; A -> a").check_proper(),
            Err(GrammarError::Unit(..))
        ));
        let mut b = GrammarBuilder::new("S");
        let s = b.start;
        b.push(s, vec![]);
        assert!(matches!(
            b.finish().check_proper(),
            Err(GrammarError::Epsilon(_))
        ));
    }

    #[test]
    fn dump_roundtrip_with_spaces() {
        let mut b = GrammarBuilder::new("S");
        let s = b.start;
        let odd = b.nonterminal("odd name");
        let t = b.terminal("x");
        b.push(s, vec![Symbol::N(odd), Symbol::T(t)]);
        b.push(odd, vec![Symbol::T(t)]);
        let g = b.finish();
        let text = g.dump_with(|i| Some(format!("tag{i}")));
        assert!(text.contains("S -> [odd name] x # tag0"));
        let back = Grammar::parse_dump(&text).unwrap();
        assert_eq!(back, g);
    }
}
