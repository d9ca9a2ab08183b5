//! Uniform sampling of well-typed first-order functions.
//!
//! The type system of a small first-order language is compiled into a
//! context-free grammar ([`compile`]), normalized ([`cnf`]), intersected with
//! an acyclic automaton such as a length slice ([`intersection`]), and the
//! finite result is counted, ranked and sampled without replacement
//! ([`sampler`]). An independent parser and type checker ([`syntax`],
//! [`check`], [`oracle`]) verify the pipeline.

pub mod automata;
pub mod cfg;
pub mod check;
pub mod cnf;
pub mod compile;
pub mod intersection;
pub mod oracle;
pub mod pipeline;
pub mod sampler;
pub mod syntax;
pub mod types;
