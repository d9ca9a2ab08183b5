//! Chomsky Normal Form for ε-free, unit-free grammars.
//!
//! Long right-hand sides are binarized right-branching: `w → σ1 ⟨σ2…σm⟩`,
//! `⟨σ2…σm⟩ → σ2 ⟨σ3…σm⟩`, … where each suffix nonterminal is memoized on its
//! content, so equal suffixes share one nonterminal. Terminals inside binary
//! productions go through one proxy `[t] → t` per terminal.

use std::collections::HashMap;

use crate::cfg::{
    prune_indexed, Grammar, GrammarBuilder, GrammarError, NonterminalId, Symbol, TerminalId,
};

/// Where a CNF production came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    /// Part of the binarization of the input production with this index.
    Input(usize),
    /// A shared terminal proxy `[t] → t`.
    Proxy,
}

/// A grammar whose productions are all `W → X Z` or `W → t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CnfGrammar {
    grammar: Grammar,
    origins: Vec<Origin>,
}

impl CnfGrammar {
    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn origin(&self, production: usize) -> Origin {
        self.origins[production]
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn into_grammar(self) -> Grammar {
        self.grammar
    }

    /// Wraps a grammar that is already in CNF.
    pub fn from_cnf(grammar: Grammar) -> Option<CnfGrammar> {
        grammar.is_cnf().then(|| CnfGrammar {
            origins: (0..grammar.productions().len())
                .map(Origin::Input)
                .collect(),
            grammar,
        })
    }
}

pub fn to_cnf(g: &Grammar) -> Result<CnfGrammar, GrammarError> {
    g.check_proper()?;
    let mut conv = Converter {
        src: g,
        b: GrammarBuilder::new(g.nonterminal_name(g.start())),
        origins: Vec::new(),
        nt_map: Vec::new(),
        proxies: HashMap::new(),
        suffixes: HashMap::new(),
    };
    conv.nt_map = g
        .nonterminals()
        .iter()
        .map(|n| conv.b.nonterminal(n))
        .collect();

    for (i, p) in g.productions().iter().enumerate() {
        let lhs = conv.nt_map[p.lhs.index()];
        match p.rhs.as_slice() {
            [Symbol::T(t)] => {
                let t = conv.b.terminal(g.terminal_name(*t));
                conv.emit(lhs, vec![Symbol::T(t)], Origin::Input(i));
            }
            rhs => conv.binarize(lhs, rhs, i),
        }
    }

    let origins = conv.origins;
    let (grammar, kept) = prune_indexed(&conv.b.finish());
    let origins = kept.into_iter().map(|i| origins[i]).collect();
    Ok(CnfGrammar { grammar, origins })
}

struct Converter<'a> {
    src: &'a Grammar,
    b: GrammarBuilder,
    origins: Vec<Origin>,
    nt_map: Vec<NonterminalId>,
    proxies: HashMap<u32, NonterminalId>,
    suffixes: HashMap<Vec<Symbol>, NonterminalId>,
}

impl Converter<'_> {
    fn emit(&mut self, lhs: NonterminalId, rhs: Vec<Symbol>, origin: Origin) {
        self.b.push(lhs, rhs);
        self.origins.push(origin);
    }

    fn fresh(&mut self, name: String) -> NonterminalId {
        let mut name = name;
        while self.b.lookup_nonterminal(&name).is_some() {
            name.push('\'');
        }
        self.b.nonterminal(&name)
    }

    /// The nonterminal standing for one source symbol inside a binary rule.
    /// A newly created proxy is queued so it is emitted after its first user.
    fn lift(&mut self, s: Symbol, pending: &mut Vec<(NonterminalId, TerminalId)>) -> Symbol {
        match s {
            Symbol::N(n) => Symbol::N(self.nt_map[n.index()]),
            Symbol::T(t) => {
                if let Some(p) = self.proxies.get(&t.0) {
                    return Symbol::N(*p);
                }
                let name = self.src.terminal_name(t).to_string();
                let proxy = self.fresh(format!("[{name}]"));
                self.proxies.insert(t.0, proxy);
                pending.push((proxy, self.b.terminal(&name)));
                Symbol::N(proxy)
            }
        }
    }

    /// Emits `lhs → σ1 ⟨σ2…σm⟩` and then, recursively, any new suffix.
    fn binarize(&mut self, lhs: NonterminalId, rhs: &[Symbol], origin: usize) {
        debug_assert!(rhs.len() >= 2);
        let mut pending = Vec::new();
        let first = self.lift(rhs[0], &mut pending);
        let (second, fresh_suffix) = if rhs.len() == 2 {
            (self.lift(rhs[1], &mut pending), None)
        } else if let Some(n) = self.suffixes.get(&rhs[1..]) {
            (Symbol::N(*n), None)
        } else {
            let names: Vec<&str> = rhs[1..].iter().map(|s| self.src.symbol_name(*s)).collect();
            let nt = self.fresh(format!("⟨{}⟩", names.join("·")));
            self.suffixes.insert(rhs[1..].to_vec(), nt);
            (Symbol::N(nt), Some(nt))
        };
        self.emit(lhs, vec![first, second], Origin::Input(origin));
        for (proxy, t) in pending {
            self.emit(proxy, vec![Symbol::T(t)], Origin::Proxy);
        }
        if let Some(nt) = fresh_suffix {
            self.binarize(nt, &rhs[1..], origin);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{binarized_size_bound, enumerate_words, size_lange_leiss};

    #[test]
    fn already_cnf_is_fixpoint() {
        let g = Grammar::parse_rules("S", "S -> A B ; A -> a ; B -> b");
        let c = to_cnf(&g).unwrap();
        assert_eq!(c.grammar(), &g);
    }

    #[test]
    fn terminal_lifting() {
        let g = Grammar::parse_rules("S", "S -> a B ; B -> b");
        let c = to_cnf(&g).unwrap();
        assert_eq!(
            c.grammar().dump(),
            "start: S\n# size: 7\nS -> [a] B\n[a] -> a\nB -> b\n"
        );
        assert_eq!(
            c.origins(),
            [Origin::Input(0), Origin::Proxy, Origin::Input(1)]
        );
    }

    #[test]
    fn long_rules_share_suffixes() {
        let g = Grammar::parse_rules("S", "S -> x A y A | z A y A ; A -> a");
        let c = to_cnf(&g).unwrap();
        assert!(c.grammar().is_cnf());
        let shared = c
            .grammar()
            .nonterminals()
            .iter()
            .filter(|n| n.starts_with('⟨'))
            .count();
        // ⟨A·y·A⟩ ⟨y·A⟩ shared by both alternatives
        assert_eq!(shared, 2);
        assert_eq!(
            enumerate_words(&g, 4, 100).unwrap(),
            enumerate_words(c.grammar(), 4, 100).unwrap()
        );
    }

    #[test]
    fn rejects_unit_and_epsilon() {
        assert!(to_cnf(&Grammar::parse_rules("S", "S -> A ; A -> a")).is_err());
    }

    #[test]
    fn size_within_binarized_bound() {
        let g = Grammar::parse_rules("S", "S -> ( S + S ) | ( S * S ) | 1");
        let c = to_cnf(&g).unwrap();
        let bound: usize = g
            .productions()
            .iter()
            .map(|p| binarized_size_bound(1 + p.rhs.len()))
            .sum();
        assert!(size_lange_leiss(c.grammar()) <= bound);
        assert_eq!(
            enumerate_words(&g, 11, 10_000).unwrap(),
            enumerate_words(c.grammar(), 11, 10_000).unwrap()
        );
        let ite = Grammar::parse_rules("S", "S -> if S { S } else { S } | 1");
        assert_eq!(
            enumerate_words(&ite, 19, 10_000).unwrap(),
            enumerate_words(to_cnf(&ite).unwrap().grammar(), 19, 10_000).unwrap()
        );
    }

    #[test]
    fn cnf_is_idempotent() {
        let g = Grammar::parse_rules("S", "S -> ( S + S ) | 1 | f ( S , S )");
        let once = to_cnf(&g).unwrap();
        let twice = to_cnf(once.grammar()).unwrap();
        assert_eq!(once.grammar(), twice.grammar());
    }
}
