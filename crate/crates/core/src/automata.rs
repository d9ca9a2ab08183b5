//! Acyclic finite automata: length slices, single-hole templates, subset
//! construction and minimization.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use thiserror::Error;

pub type StateId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AutomatonError {
    #[error("transition graph has a cycle through state {0}")]
    Cyclic(StateId),
    #[error("token `{0}` is not in the alphabet")]
    UnknownToken(String),
    #[error("state {0} out of range")]
    BadState(StateId),
    #[error("hole position {0} is outside a template of length {1}")]
    BadHole(usize, usize),
    #[error("automaton is not deterministic")]
    Nondeterministic,
    #[error("automaton accepts more than {0} words")]
    Budget(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Transition {
    pub from: StateId,
    /// Index into the alphabet.
    pub label: u32,
    pub to: StateId,
}

/// `⟨Q, Σ, δ, q_α, F⟩` with an acyclic transition graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AcyclicAutomaton {
    alphabet: Vec<String>,
    states: usize,
    /// Sorted by `(from, label, to)`, no duplicates.
    transitions: Vec<Transition>,
    /// `transitions[offsets[q]..offsets[q + 1]]` leave `q`.
    offsets: Vec<usize>,
    initial: StateId,
    finals: Vec<bool>,
}

impl AcyclicAutomaton {
    pub fn new(
        alphabet: Vec<String>,
        states: usize,
        transitions: impl IntoIterator<Item = (StateId, String, StateId)>,
        initial: StateId,
        finals: impl IntoIterator<Item = StateId>,
    ) -> Result<AcyclicAutomaton, AutomatonError> {
        let index: HashMap<&str, u32> = alphabet
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as u32))
            .collect();
        let mut ts = Vec::new();
        for (from, tok, to) in transitions {
            let label = *index
                .get(tok.as_str())
                .ok_or_else(|| AutomatonError::UnknownToken(tok.clone()))?;
            ts.push(Transition { from, label, to });
        }
        let finals: Vec<StateId> = finals.into_iter().collect();
        Self::from_parts(alphabet, states, ts, initial, &finals)
    }

    fn from_parts(
        alphabet: Vec<String>,
        states: usize,
        mut transitions: Vec<Transition>,
        initial: StateId,
        finals: &[StateId],
    ) -> Result<AcyclicAutomaton, AutomatonError> {
        let check = |q: StateId| {
            if (q as usize) < states {
                Ok(())
            } else {
                Err(AutomatonError::BadState(q))
            }
        };
        check(initial)?;
        for t in &transitions {
            check(t.from)?;
            check(t.to)?;
            if t.label as usize >= alphabet.len() {
                return Err(AutomatonError::UnknownToken(format!("#{}", t.label)));
            }
        }
        let mut final_flags = vec![false; states];
        for &f in finals {
            check(f)?;
            final_flags[f as usize] = true;
        }
        transitions.sort();
        transitions.dedup();
        let mut offsets = vec![0usize; states + 1];
        for t in &transitions {
            offsets[t.from as usize + 1] += 1;
        }
        for q in 0..states {
            offsets[q + 1] += offsets[q];
        }
        let a = AcyclicAutomaton {
            alphabet,
            states,
            transitions,
            offsets,
            initial,
            finals: final_flags,
        };
        a.topological_order()?;
        Ok(a)
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn label_name(&self, label: u32) -> &str {
        &self.alphabet[label as usize]
    }

    pub fn num_states(&self) -> usize {
        self.states
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn outgoing(&self, q: StateId) -> &[Transition] {
        &self.transitions[self.offsets[q as usize]..self.offsets[q as usize + 1]]
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn is_final(&self, q: StateId) -> bool {
        self.finals[q as usize]
    }

    pub fn finals(&self) -> Vec<StateId> {
        (0..self.states as StateId)
            .filter(|q| self.is_final(*q))
            .collect()
    }

    /// Kahn's algorithm; fails on a cycle.
    pub fn topological_order(&self) -> Result<Vec<StateId>, AutomatonError> {
        let mut indeg = vec![0usize; self.states];
        for t in &self.transitions {
            indeg[t.to as usize] += 1;
        }
        let mut queue: VecDeque<StateId> = (0..self.states as StateId)
            .filter(|q| indeg[*q as usize] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.states);
        while let Some(q) = queue.pop_front() {
            order.push(q);
            for t in self.outgoing(q) {
                indeg[t.to as usize] -= 1;
                if indeg[t.to as usize] == 0 {
                    queue.push_back(t.to);
                }
            }
        }
        if order.len() == self.states {
            Ok(order)
        } else {
            let q = (0..self.states).find(|q| indeg[*q] > 0).unwrap();
            Err(AutomatonError::Cyclic(q as StateId))
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.transitions
            .windows(2)
            .all(|w| (w[0].from, w[0].label) != (w[1].from, w[1].label))
    }

    pub fn step(&self, q: StateId, label: u32) -> Option<StateId> {
        self.outgoing(q)
            .iter()
            .find(|t| t.label == label)
            .map(|t| t.to)
    }

    pub fn accepts<S: AsRef<str>>(&self, word: &[S]) -> bool {
        let mut current: BTreeSet<StateId> = BTreeSet::from([self.initial]);
        for tok in word {
            let Some(label) = self.alphabet.iter().position(|a| a == tok.as_ref()) else {
                return false;
            };
            current = current
                .iter()
                .flat_map(|q| self.outgoing(*q))
                .filter(|t| t.label == label as u32)
                .map(|t| t.to)
                .collect();
        }
        current.iter().any(|q| self.is_final(*q))
    }

    /// Number of accepting paths out of each state. For a deterministic
    /// automaton this is the size of each state's right language.
    pub fn path_counts(&self) -> Vec<BigUint> {
        let order = self.topological_order().expect("acyclic by construction");
        let mut counts = vec![BigUint::zero(); self.states];
        for &q in order.iter().rev() {
            let mut c = if self.is_final(q) {
                BigUint::one()
            } else {
                BigUint::zero()
            };
            for t in self.outgoing(q) {
                c += &counts[t.to as usize];
            }
            counts[q as usize] = c;
        }
        counts
    }

    /// Number of accepting paths from the initial state.
    pub fn count_paths(&self) -> BigUint {
        self.path_counts().swap_remove(self.initial as usize)
    }

    /// Every accepted word, failing once more than `budget` are found.
    pub fn words(&self, budget: usize) -> Result<BTreeSet<Vec<String>>, AutomatonError> {
        let mut out = BTreeSet::new();
        let mut stack = vec![(self.initial, Vec::<u32>::new())];
        while let Some((q, w)) = stack.pop() {
            if self.is_final(q) {
                out.insert(w.iter().map(|l| self.label_name(*l).to_string()).collect());
                if out.len() > budget {
                    return Err(AutomatonError::Budget(budget));
                }
            }
            for t in self.outgoing(q) {
                let mut next = w.clone();
                next.push(t.label);
                stack.push((t.to, next));
            }
        }
        Ok(out)
    }

    /// If the states form a path `0 → 1 → … → n` with every transition going
    /// from `i` to `i + 1`, the label set of each edge.
    pub fn as_chain(&self) -> Option<Vec<Vec<u32>>> {
        if self.initial != 0 {
            return None;
        }
        let n = self.states.checked_sub(1)?;
        let mut edges = vec![Vec::new(); n];
        for t in &self.transitions {
            if t.to != t.from + 1 {
                return None;
            }
            edges[t.from as usize].push(t.label);
        }
        Some(edges)
    }
}

/// `n + 1` chain states accepting exactly `Σⁿ`.
pub fn slice_automaton(alphabet: &[String], n: usize) -> AcyclicAutomaton {
    let ts = (0..n).flat_map(|i| {
        (0..alphabet.len()).map(move |l| Transition {
            from: i as StateId,
            label: l as u32,
            to: i as StateId + 1,
        })
    });
    AcyclicAutomaton::from_parts(alphabet.to_vec(), n + 1, ts.collect(), 0, &[n as StateId])
        .expect("a chain is acyclic")
}

/// A chain accepting `tokens` with each position in `holes` replaced by any
/// alphabet token.
pub fn template_automaton<S: AsRef<str>>(
    tokens: &[S],
    holes: &BTreeSet<usize>,
    alphabet: &[String],
) -> Result<AcyclicAutomaton, AutomatonError> {
    let n = tokens.len();
    if let Some(&h) = holes.iter().find(|h| **h >= n) {
        return Err(AutomatonError::BadHole(h, n));
    }
    let mut ts = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        let from = i as StateId;
        if holes.contains(&i) {
            ts.extend((0..alphabet.len()).map(|l| Transition {
                from,
                label: l as u32,
                to: from + 1,
            }));
        } else {
            let tok = tok.as_ref();
            let label = alphabet
                .iter()
                .position(|a| a == tok)
                .ok_or_else(|| AutomatonError::UnknownToken(tok.to_string()))?;
            ts.push(Transition {
                from,
                label: label as u32,
                to: from + 1,
            });
        }
    }
    AcyclicAutomaton::from_parts(alphabet.to_vec(), n + 1, ts, 0, &[n as StateId])
}

/// Subset construction over reachable subsets. States are numbered in
/// breadth-first discovery order, labels explored in alphabet order.
pub fn determinize(a: &AcyclicAutomaton) -> AcyclicAutomaton {
    let start: BTreeSet<StateId> = BTreeSet::from([a.initial]);
    let mut ids: HashMap<BTreeSet<StateId>, StateId> = HashMap::from([(start.clone(), 0)]);
    let mut queue = VecDeque::from([start]);
    let mut subsets: Vec<BTreeSet<StateId>> = Vec::new();
    let mut ts = Vec::new();
    while let Some(set) = queue.pop_front() {
        let from = ids[&set];
        let mut by_label: BTreeMap<u32, BTreeSet<StateId>> = BTreeMap::new();
        for q in &set {
            for t in a.outgoing(*q) {
                by_label.entry(t.label).or_default().insert(t.to);
            }
        }
        for (label, target) in by_label {
            let next = ids.len() as StateId;
            let to = *ids.entry(target.clone()).or_insert_with(|| {
                queue.push_back(target);
                next
            });
            ts.push(Transition { from, label, to });
        }
        subsets.push(set);
    }
    let finals: Vec<StateId> = subsets
        .iter()
        .enumerate()
        .filter(|(_, s)| s.iter().any(|q| a.is_final(*q)))
        .map(|(i, _)| i as StateId)
        .collect();
    AcyclicAutomaton::from_parts(a.alphabet.clone(), subsets.len(), ts, 0, &finals)
        .expect("subsets of an acyclic automaton are acyclic")
}

/// Merges states with equal right languages, bottom-up in reverse
/// topological order, and drops states that reach no final state. The result
/// is the minimal (partial) deterministic automaton for `L(a)`, numbered in
/// breadth-first order from the initial state.
pub fn minimize_acyclic(a: &AcyclicAutomaton) -> Result<AcyclicAutomaton, AutomatonError> {
    if !a.is_deterministic() {
        return Err(AutomatonError::Nondeterministic);
    }
    const DEAD: u32 = u32::MAX;
    let order = a.topological_order()?;
    let mut class = vec![DEAD; a.states];
    let mut signatures: HashMap<(bool, Vec<(u32, u32)>), u32> = HashMap::new();
    let mut reps: Vec<StateId> = Vec::new();
    for &q in order.iter().rev() {
        let edges: Vec<(u32, u32)> = a
            .outgoing(q)
            .iter()
            .map(|t| (t.label, class[t.to as usize]))
            .filter(|(_, c)| *c != DEAD)
            .collect();
        let fin = a.is_final(q);
        if !fin && edges.is_empty() {
            continue;
        }
        let next = reps.len() as u32;
        class[q as usize] = *signatures.entry((fin, edges)).or_insert_with(|| {
            reps.push(q);
            next
        });
    }

    let mut renumber: HashMap<u32, StateId> = HashMap::new();
    let mut ts = Vec::new();
    let mut finals = Vec::new();
    let root = class[a.initial as usize];
    if root != DEAD {
        renumber.insert(root, 0);
        let mut queue = VecDeque::from([root]);
        while let Some(c) = queue.pop_front() {
            let rep = reps[c as usize];
            let from = renumber[&c];
            if a.is_final(rep) {
                finals.push(from);
            }
            for t in a.outgoing(rep) {
                let tc = class[t.to as usize];
                if tc == DEAD {
                    continue;
                }
                let next = renumber.len() as StateId;
                let to = *renumber.entry(tc).or_insert_with(|| {
                    queue.push_back(tc);
                    next
                });
                ts.push(Transition {
                    from,
                    label: t.label,
                    to,
                });
            }
        }
    }
    let states = renumber.len().max(1);
    AcyclicAutomaton::from_parts(a.alphabet.clone(), states, ts, 0, &finals)
}

/// The trie of a finite word set: one state per distinct prefix.
pub fn trie<S: AsRef<str>>(
    words: impl IntoIterator<Item = Vec<S>>,
    alphabet: &[String],
) -> Result<AcyclicAutomaton, AutomatonError> {
    let index: HashMap<&str, u32> = alphabet
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i as u32))
        .collect();
    let mut children: Vec<BTreeMap<u32, StateId>> = vec![BTreeMap::new()];
    let mut finals = Vec::new();
    for w in words {
        let mut q: StateId = 0;
        for tok in &w {
            let tok = tok.as_ref();
            let label = *index
                .get(tok)
                .ok_or_else(|| AutomatonError::UnknownToken(tok.to_string()))?;
            let next = children.len() as StateId;
            q = match children[q as usize].get(&label) {
                Some(&to) => to,
                None => {
                    children[q as usize].insert(label, next);
                    children.push(BTreeMap::new());
                    next
                }
            };
        }
        finals.push(q);
    }
    let ts = children
        .iter()
        .enumerate()
        .flat_map(|(from, m)| {
            m.iter().map(move |(&label, &to)| Transition {
                from: from as StateId,
                label,
                to,
            })
        })
        .collect();
    AcyclicAutomaton::from_parts(alphabet.to_vec(), children.len(), ts, 0, &finals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigma(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn words(a: &AcyclicAutomaton) -> BTreeSet<String> {
        a.words(10_000)
            .unwrap()
            .into_iter()
            .map(|w| w.join(" "))
            .collect()
    }

    #[test]
    fn slice_basics() {
        let ab = sigma("a b");
        let zero = slice_automaton(&ab, 0);
        assert_eq!(words(&zero), BTreeSet::from([String::new()]));
        let s28 = slice_automaton(&ab, 28);
        assert_eq!(s28.num_states(), 29);
        assert!(s28.is_deterministic());
        let abc = sigma("a b c");
        for n in 0..6 {
            assert_eq!(
                slice_automaton(&abc, n).count_paths(),
                BigUint::from(3u32).pow(n as u32)
            );
        }
    }

    #[test]
    fn cyclic_rejected() {
        let err = AcyclicAutomaton::new(
            sigma("a"),
            2,
            [(0, "a".into(), 1), (1, "a".into(), 0)],
            0,
            [1],
        )
        .unwrap_err();
        assert!(matches!(err, AutomatonError::Cyclic(_)));
        assert!(AcyclicAutomaton::new(sigma("a"), 1, [(0, "a".into(), 0)], 0, [0]).is_err());
        assert!(AcyclicAutomaton::new(sigma("a"), 2, [(0, "b".into(), 1)], 0, [1]).is_err());
    }

    #[test]
    fn template_cases() {
        let alpha = sigma("x y z");
        let toks = sigma("x y x");
        let fixed = template_automaton(&toks, &BTreeSet::new(), &alpha).unwrap();
        assert_eq!(words(&fixed), BTreeSet::from(["x y x".to_string()]));
        let holed = template_automaton(&toks, &BTreeSet::from([1]), &alpha).unwrap();
        assert_eq!(holed.count_paths(), BigUint::from(3u32));
        let all = template_automaton(&toks, &BTreeSet::from([0, 1, 2]), &alpha).unwrap();
        assert_eq!(all, slice_automaton(&alpha, 3));
        assert!(template_automaton(&sigma("w"), &BTreeSet::new(), &alpha).is_err());
        assert!(template_automaton(&toks, &BTreeSet::from([3]), &alpha).is_err());
    }

    #[test]
    fn determinize_shares_prefix() {
        let nfa = AcyclicAutomaton::new(
            sigma("a b c"),
            5,
            [
                (0, "a".into(), 1),
                (1, "b".into(), 2),
                (0, "a".into(), 3),
                (3, "c".into(), 4),
            ],
            0,
            [2, 4],
        )
        .unwrap();
        assert!(!nfa.is_deterministic());
        let dfa = determinize(&nfa);
        assert!(dfa.is_deterministic());
        assert_eq!(dfa.num_states(), 4);
        assert_eq!(words(&dfa), words(&nfa));
        assert_eq!(determinize(&dfa), dfa);
    }

    #[test]
    fn minimize_trie() {
        let alpha = sigma("a b");
        let t = trie([sigma("a b"), sigma("b b")], &alpha).unwrap();
        assert_eq!(t.num_states(), 5);
        let m = minimize_acyclic(&t).unwrap();
        // root, the shared state before the final `b`, and the final state
        assert_eq!(m.num_states(), 3);
        assert_eq!(words(&m), words(&t));
        assert_eq!(minimize_acyclic(&m).unwrap(), m);
    }

    #[test]
    fn minimize_rejects_nfa_and_handles_empty() {
        let nfa = AcyclicAutomaton::new(
            sigma("a"),
            3,
            [(0, "a".into(), 1), (0, "a".into(), 2)],
            0,
            [1],
        )
        .unwrap();
        assert_eq!(
            minimize_acyclic(&nfa),
            Err(AutomatonError::Nondeterministic)
        );
        let dead = AcyclicAutomaton::new(sigma("a"), 2, [(0, "a".into(), 1)], 0, []).unwrap();
        let m = minimize_acyclic(&dead).unwrap();
        assert_eq!(m.num_states(), 1);
        assert!(words(&m).is_empty());
    }

    #[test]
    fn slices_minimize_to_themselves() {
        let alpha = sigma("a b c");
        let s = slice_automaton(&alpha, 4);
        assert_eq!(minimize_acyclic(&s).unwrap(), s);
    }

    #[test]
    fn chain_detection() {
        let alpha = sigma("a b");
        assert_eq!(
            slice_automaton(&alpha, 2).as_chain(),
            Some(vec![vec![0, 1], vec![0, 1]])
        );
        let t = trie([sigma("a b"), sigma("b b")], &alpha).unwrap();
        assert!(t.as_chain().is_none());
    }
}
