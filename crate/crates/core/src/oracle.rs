//! Exhaustive enumeration of well-typed functions of a given token length,
//! read directly off the typing rules.
//!
//! This never touches the grammar pipeline; it is the reference the compiled
//! grammar, the intersection, and the sampler are checked against. Cost is
//! exponential in the length, so it is only meant for small contexts.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::types::{Context, Operator, TypeId, SELF_NAME};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("enumeration exceeded node budget of {0}")]
pub struct BudgetExceeded(pub usize);

pub const DEFAULT_BUDGET: usize = 50_000_000;

type Word = Vec<String>;

/// Every well-typed function (arity ≤ `ctx.arity_bound()`) whose
/// serialization has exactly `length` tokens.
pub fn enumerate_well_typed(
    ctx: &Context,
    length: usize,
) -> Result<BTreeSet<Word>, BudgetExceeded> {
    enumerate_with_budget(ctx, length, DEFAULT_BUDGET)
}

pub fn enumerate_with_budget(
    ctx: &Context,
    length: usize,
    budget: usize,
) -> Result<BTreeSet<Word>, BudgetExceeded> {
    let mut out = BTreeSet::new();
    let mut spent = 0usize;
    for arity in 0..=ctx.arity_bound() {
        let header_len = if arity == 0 { 7 } else { 4 * arity + 6 };
        if length <= header_len {
            continue;
        }
        for params in tuples(ctx, arity) {
            for ret in ctx.types() {
                let mut header: Word = vec!["fun".into(), SELF_NAME.into(), "(".into()];
                for (i, p) in params.iter().enumerate() {
                    if i > 0 {
                        header.push(",".into());
                    }
                    header.push(format!("p{}", i + 1));
                    header.push(":".into());
                    header.push(ctx.type_name(*p).into());
                }
                header.extend([
                    ")".into(),
                    ":".into(),
                    ctx.type_name(ret).into(),
                    "=".into(),
                ]);
                debug_assert_eq!(header.len(), header_len);
                let mut gen = Generator {
                    ctx,
                    params: &params,
                    ret,
                    memo: HashMap::new(),
                    spent: &mut spent,
                    budget,
                };
                for body in gen.exprs(ret, length - header_len)?.iter() {
                    let mut w = header.clone();
                    w.extend(body.iter().cloned());
                    out.insert(w);
                }
            }
        }
    }
    Ok(out)
}

fn tuples(ctx: &Context, arity: usize) -> Vec<Vec<TypeId>> {
    let mut out = vec![Vec::new()];
    for _ in 0..arity {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                ctx.types().map(move |t| {
                    let mut v = prefix.clone();
                    v.push(t);
                    v
                })
            })
            .collect();
    }
    out
}

struct Generator<'a> {
    ctx: &'a Context,
    params: &'a [TypeId],
    ret: TypeId,
    memo: HashMap<(TypeId, usize), std::rc::Rc<Vec<Word>>>,
    spent: &'a mut usize,
    budget: usize,
}

impl Generator<'_> {
    fn charge(&mut self, n: usize) -> Result<(), BudgetExceeded> {
        *self.spent += n;
        if *self.spent > self.budget {
            Err(BudgetExceeded(self.budget))
        } else {
            Ok(())
        }
    }

    /// All expressions of type `ty` with exactly `len` tokens.
    fn exprs(&mut self, ty: TypeId, len: usize) -> Result<std::rc::Rc<Vec<Word>>, BudgetExceeded> {
        if let Some(hit) = self.memo.get(&(ty, len)) {
            return Ok(hit.clone());
        }
        let mut out: Vec<Word> = Vec::new();
        if len == 1 {
            for lit in self.ctx.literals(ty) {
                out.push(vec![lit.clone()]);
            }
            for (i, p) in self.params.iter().enumerate() {
                if *p == ty {
                    out.push(vec![format!("p{}", i + 1)]);
                }
            }
        }

        // Invocations of ambient functions and of f0 itself.
        let ctx = self.ctx;
        let mut callees: Vec<(&str, Vec<TypeId>)> = ctx
            .signatures()
            .iter()
            .filter(|s| s.ret == ty)
            .map(|s| (s.name.as_str(), s.params.clone()))
            .collect();
        if ty == self.ret {
            callees.push((SELF_NAME, self.params.to_vec()));
        }
        for (name, params) in callees {
            let m = params.len();
            // name ( a1 , ... , am )
            let fixed = 3 + m.saturating_sub(1);
            if len < fixed + m {
                continue;
            }
            for args in self.sequences(&params, len - fixed)? {
                let mut w = vec![name.to_string(), "(".to_string()];
                for (i, a) in args.into_iter().enumerate() {
                    if i > 0 {
                        w.push(",".into());
                    }
                    w.extend(a);
                }
                w.push(")".into());
                out.push(w);
            }
        }

        // if c { a } else { b }
        if let Some(b) = ctx.boolean() {
            if len >= 9 {
                for parts in self.sequences(&[b, ty, ty], len - 6)? {
                    let [c, t, e]: [Word; 3] = parts.try_into().unwrap();
                    let mut w = vec!["if".to_string()];
                    w.extend(c);
                    w.push("{".into());
                    w.extend(t);
                    w.extend(["}".into(), "else".into(), "{".into()]);
                    w.extend(e);
                    w.push("}".into());
                    out.push(w);
                }
            }
        }

        // ( a op b )
        if len >= 5 {
            for op in Operator::ALL {
                for lt in ctx.types() {
                    for rt in ctx.types() {
                        if ctx.op_result(op, lt, rt) != Some(ty) {
                            continue;
                        }
                        for parts in self.sequences(&[lt, rt], len - 3)? {
                            let [l, r]: [Word; 2] = parts.try_into().unwrap();
                            let mut w = vec!["(".to_string()];
                            w.extend(l);
                            w.push(op.token().into());
                            w.extend(r);
                            w.push(")".into());
                            out.push(w);
                        }
                    }
                }
            }
        }

        self.charge(out.len() + 1)?;
        let rc = std::rc::Rc::new(out);
        self.memo.insert((ty, len), rc.clone());
        Ok(rc)
    }

    /// Tuples of expressions with the given types whose lengths sum to `total`.
    fn sequences(
        &mut self,
        types: &[TypeId],
        total: usize,
    ) -> Result<Vec<Vec<Word>>, BudgetExceeded> {
        if types.is_empty() {
            return Ok(if total == 0 {
                vec![Vec::new()]
            } else {
                Vec::new()
            });
        }
        let mut out = Vec::new();
        let rest = types.len() - 1;
        for first_len in 1..=total.saturating_sub(rest) {
            let firsts = self.exprs(types[0], first_len)?;
            if firsts.is_empty() {
                continue;
            }
            let tails = self.sequences(&types[1..], total - first_len)?;
            self.charge(firsts.len() * tails.len())?;
            for f in firsts.iter() {
                for t in &tails {
                    let mut v = Vec::with_capacity(types.len());
                    v.push(f.clone());
                    v.extend(t.iter().cloned());
                    out.push(v);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::check_word;
    use crate::syntax::{serialize, tokenize};

    fn int_only() -> Context {
        Context::builder().types(["Int"]).build().unwrap()
    }

    #[test]
    fn minimal_function() {
        let ctx = int_only();
        let words = enumerate_well_typed(&ctx, 8).unwrap();
        assert_eq!(words.len(), 1);
        assert_eq!(
            serialize(words.iter().next().unwrap()),
            "fun f0 ( ) : Int = 1"
        );
        assert!(enumerate_well_typed(&ctx, 7).unwrap().is_empty());
        assert!(enumerate_well_typed(&ctx, 0).unwrap().is_empty());
    }

    #[test]
    fn int_only_small_lengths_by_hand() {
        // Body lengths 1..=5 over {1, f0 ( ), ( e + e ), ( e * e )}:
        // len 3: f0 ( ); len 5: ( 1 + 1 ), ( 1 * 1 ).
        let ctx = int_only();
        let sizes: Vec<usize> = (8..=12)
            .map(|n| enumerate_well_typed(&ctx, n).unwrap().len())
            .collect();
        assert_eq!(sizes, [1, 0, 1, 0, 2]);
    }

    #[test]
    fn members_type_check() {
        let ctx = Context::builder()
            .types(["Int", "Bool"])
            .signature("b2i", ["Bool"], "Int")
            .arity(1)
            .build()
            .unwrap();
        for n in 8..=12 {
            for w in enumerate_well_typed(&ctx, n).unwrap() {
                assert_eq!(w.len(), n);
                check_word(&w, &ctx).unwrap_or_else(|e| panic!("{}: {e}", serialize(&w)));
            }
        }
    }

    #[test]
    fn reduced_golden_n12() {
        let ctx = Context::builder()
            .types(["Int", "Bool"])
            .arity(1)
            .build()
            .unwrap();
        let words = enumerate_well_typed(&ctx, 12).unwrap();
        let golden: BTreeSet<Vec<String>> = include_str!("../data/reduced_k1_n12.txt")
            .lines()
            .map(tokenize)
            .collect();
        assert_eq!(words, golden);
    }

    #[test]
    fn budget_is_enforced() {
        let ctx = Context::default_ambient();
        assert_eq!(
            enumerate_with_budget(&ctx, 20, 1000),
            Err(BudgetExceeded(1000))
        );
    }
}
