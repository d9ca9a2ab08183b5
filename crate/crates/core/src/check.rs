//! Independent type checker used as the correctness oracle for the grammar
//! pipeline. It works on the AST directly and shares nothing with the grammar
//! compiler beyond the [`Context`].

use std::fmt;

use thiserror::Error;

use crate::syntax::{Expr, LiteralKind, Program};
use crate::types::{Context, TypeId, BOOL, INT, SELF_NAME};

/// Typing rule that rejected a term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Fun,
    Lit,
    Pid,
    Inv,
    Rec,
    Ife,
    Opx,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Fun => "FUN",
            Rule::Lit => "LIT",
            Rule::Pid => "PID",
            Rule::Inv => "INV",
            Rule::Rec => "REC",
            Rule::Ife => "IFE",
            Rule::Opx => "OPX",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{rule}: {message} in `{term}`")]
pub struct TypeError {
    pub rule: Rule,
    pub term: String,
    pub message: String,
}

/// Checks `program` under `ctx`, returning its declared return type.
pub fn type_check(program: &Program, ctx: &Context) -> Result<TypeId, TypeError> {
    let fun_err = |message: String| TypeError {
        rule: Rule::Fun,
        term: program.to_string(),
        message,
    };
    if program.params.len() > ctx.arity_bound() {
        return Err(fun_err(format!(
            "arity {} exceeds bound {}",
            program.params.len(),
            ctx.arity_bound()
        )));
    }
    let resolve = |name: &str| {
        ctx.lookup_type(name)
            .ok_or_else(|| fun_err(format!("unknown type `{name}`")))
    };
    let params = program
        .params
        .iter()
        .map(|p| resolve(p))
        .collect::<Result<Vec<_>, _>>()?;
    let ret = resolve(&program.ret)?;
    let checker = Checker {
        ctx,
        params: &params,
        ret,
    };
    let body = checker.expr(&program.body)?;
    if body != ret {
        return Err(fun_err(format!(
            "body has type {} but {} was declared",
            ctx.type_name(body),
            ctx.type_name(ret)
        )));
    }
    Ok(ret)
}

/// Parses and checks a whitespace-separated word.
pub fn check_word<S: AsRef<str>>(tokens: &[S], ctx: &Context) -> Result<TypeId, String> {
    let program = crate::syntax::parse(tokens).map_err(|e| e.to_string())?;
    type_check(&program, ctx).map_err(|e| e.to_string())
}

struct Checker<'a> {
    ctx: &'a Context,
    params: &'a [TypeId],
    ret: TypeId,
}

impl Checker<'_> {
    fn err(&self, rule: Rule, term: &Expr, message: String) -> TypeError {
        TypeError {
            rule,
            term: term.to_string(),
            message,
        }
    }

    fn name(&self, ty: TypeId) -> &str {
        self.ctx.type_name(ty)
    }

    fn expr(&self, e: &Expr) -> Result<TypeId, TypeError> {
        match e {
            Expr::Literal(tok, kind) => {
                let want = match kind {
                    LiteralKind::Int => INT,
                    LiteralKind::Bool => BOOL,
                };
                let ty = self.ctx.lookup_type(want).ok_or_else(|| {
                    self.err(Rule::Lit, e, format!("{want} is not in the universe"))
                })?;
                if !self.ctx.literals(ty).iter().any(|t| t == tok) {
                    return Err(self.err(
                        Rule::Lit,
                        e,
                        format!("`{tok}` is not in the {want} pool"),
                    ));
                }
                Ok(ty)
            }
            Expr::Param(i) => self
                .params
                .get(i.wrapping_sub(1))
                .copied()
                .ok_or_else(|| self.err(Rule::Pid, e, format!("no parameter p{i}"))),
            Expr::Invoke(name, args) => {
                let (rule, params, ret) = if name == SELF_NAME {
                    (Rule::Rec, self.params, self.ret)
                } else {
                    let sig = self.ctx.signature(name).ok_or_else(|| {
                        self.err(Rule::Inv, e, format!("unknown function `{name}`"))
                    })?;
                    (Rule::Inv, sig.params.as_slice(), sig.ret)
                };
                if params.len() != args.len() {
                    return Err(self.err(
                        rule,
                        e,
                        format!(
                            "`{name}` takes {} arguments, got {}",
                            params.len(),
                            args.len()
                        ),
                    ));
                }
                for (i, (arg, want)) in args.iter().zip(params).enumerate() {
                    let got = self.expr(arg)?;
                    if got != *want {
                        return Err(self.err(
                            rule,
                            e,
                            format!(
                                "argument {} has type {}, expected {}",
                                i + 1,
                                self.name(got),
                                self.name(*want)
                            ),
                        ));
                    }
                }
                Ok(ret)
            }
            Expr::If(c, t, f) => {
                let cond = self.expr(c)?;
                if Some(cond) != self.ctx.boolean() {
                    return Err(self.err(
                        Rule::Ife,
                        e,
                        format!("condition has type {}", self.name(cond)),
                    ));
                }
                let then_ty = self.expr(t)?;
                let else_ty = self.expr(f)?;
                if then_ty != else_ty {
                    return Err(self.err(
                        Rule::Ife,
                        e,
                        format!(
                            "branches disagree: {} vs {}",
                            self.name(then_ty),
                            self.name(else_ty)
                        ),
                    ));
                }
                Ok(then_ty)
            }
            Expr::Op(op, l, r) => {
                let lt = self.expr(l)?;
                let rt = self.expr(r)?;
                self.ctx.op_result(*op, lt, rt).ok_or_else(|| {
                    self.err(
                        Rule::Opx,
                        e,
                        format!(
                            "`{op}` undefined on {} and {}",
                            self.name(lt),
                            self.name(rt)
                        ),
                    )
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_str;

    fn check(src: &str, ctx: &Context) -> Result<TypeId, TypeError> {
        type_check(&parse_str(src).unwrap(), ctx)
    }

    #[test]
    fn first_sample_is_float() {
        let ctx = Context::default_ambient();
        let ty = check(
            "fun f0 ( p1 : Pair ) : Float = i2f ( choose ( ( 1 == 1 ) , snd ( p1 ) , 1 ) )",
            &ctx,
        )
        .unwrap();
        assert_eq!(ctx.type_name(ty), "Float");
    }

    #[test]
    fn literal_mismatch() {
        let ctx = Context::default_ambient();
        let err = check("fun f0 ( ) : Int = true", &ctx).unwrap_err();
        assert_eq!(err.rule, Rule::Fun);
        let err = check("fun f0 ( ) : Int = 2", &ctx).unwrap_err();
        assert_eq!(err.rule, Rule::Lit);
    }

    #[test]
    fn rule_attribution() {
        let ctx = Context::default_ambient();
        let rule = |src| check(src, &ctx).unwrap_err().rule;
        assert_eq!(rule("fun f0 ( ) : Int = ( true + 1 )"), Rule::Opx);
        assert_eq!(rule("fun f0 ( ) : Int = if 1 { 1 } else { 1 }"), Rule::Ife);
        assert_eq!(
            rule("fun f0 ( ) : Int = if true { 1 } else { false }"),
            Rule::Ife
        );
        assert_eq!(rule("fun f0 ( ) : Int = len ( 1 )"), Rule::Inv);
        assert_eq!(rule("fun f0 ( ) : Int = nope ( 1 )"), Rule::Inv);
        assert_eq!(rule("fun f0 ( p1 : Int ) : Int = f0 ( true )"), Rule::Rec);
        assert_eq!(rule("fun f0 ( p1 : Int ) : Int = f0 ( )"), Rule::Rec);
        assert_eq!(rule("fun f0 ( p1 : Foo ) : Int = 1"), Rule::Fun);
        assert_eq!(
            rule("fun f0 ( p1 : Int , p2 : Int , p3 : Int , p4 : Int ) : Int = 1"),
            Rule::Fun
        );
    }

    #[test]
    fn recursion_uses_declared_signature() {
        let ctx = Context::default_ambient();
        assert!(check(
            "fun f0 ( p1 : Bool ) : Bool = ( false == ( f0 ( p1 ) == f0 ( f0 ( p1 ) ) ) )",
            &ctx
        )
        .is_ok());
        assert!(check("fun f0 ( p1 : Int ) : Bool = f0 ( f0 ( p1 ) )", &ctx).is_err());
    }

    #[test]
    fn whole_corpus_checks() {
        let ctx = Context::default_ambient();
        for line in include_str!("../data/samples_n28.txt").lines() {
            let program = parse_str(line).unwrap();
            let ty = type_check(&program, &ctx).unwrap_or_else(|e| panic!("{line}: {e}"));
            assert_eq!(ctx.type_name(ty), program.ret);
        }
    }
}
