//! Compiles a [`Context`] into the grammar `G_Γ` of its well-typed functions.
//!
//! Every expression nonterminal is decorated with the signature of `f0` it
//! lives under: `EXP[τ, τ⃗ -> τ̇]` derives exactly the expressions of type `τ`
//! in a body whose own parameters are `τ⃗` and whose return type is `τ̇`.
//! One start production per signature selects the family.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use num_bigint::BigUint;

use crate::cfg::{Grammar, GrammarBuilder, NonterminalId, Symbol, TerminalId};
use crate::cnf::{to_cnf, CnfGrammar, Origin};
use crate::types::{Context, Operator, TypeId, SELF_NAME};

pub const START: &str = "S";

/// The production schema a compiled production was emitted by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Schema {
    Fun,
    Inv,
    Rec,
    Ife,
    Opx,
    Pid,
    Lit,
}

impl Schema {
    pub const ALL: [Schema; 7] = [
        Schema::Fun,
        Schema::Inv,
        Schema::Rec,
        Schema::Ife,
        Schema::Opx,
        Schema::Pid,
        Schema::Lit,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Schema::Fun => "FUN",
            Schema::Inv => "INV",
            Schema::Rec => "REC",
            Schema::Ife => "IFE",
            Schema::Opx => "OPX",
            Schema::Pid => "PID",
            Schema::Lit => "LIT",
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A signature `τ⃗ -> τ̇` for `f0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Family {
    pub params: Vec<TypeId>,
    pub ret: TypeId,
}

impl Family {
    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

/// Provenance of one compiled production.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProductionInfo {
    pub schema: Schema,
    /// Index into [`CompiledGrammar::families`].
    pub family: usize,
}

#[derive(Clone, Debug)]
pub struct CompiledGrammar {
    pub grammar: Grammar,
    pub info: Vec<ProductionInfo>,
    pub families: Vec<Family>,
}

impl CompiledGrammar {
    pub fn schema(&self, production: usize) -> Schema {
        self.info[production].schema
    }

    /// The grammar dump with a trailing `# SCHEMA` tag on every production.
    pub fn tagged_dump(&self) -> String {
        self.grammar
            .dump_with(|i| Some(self.info[i].schema.label().to_string()))
    }
}

/// `x1 , x2 , … , xm`; the single item for `m = 1`; nothing for `m = 0`.
pub fn comma_join<T: Clone>(items: &[Vec<T>], comma: T) -> Vec<T> {
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(comma.clone());
        }
        out.extend(item.iter().cloned());
    }
    out
}

/// All signatures in `𝕋^{0..k} × 𝕋`, by arity, then parameters
/// lexicographically, then return type, over the universe's declared order.
pub fn families(ctx: &Context) -> Vec<Family> {
    let mut out = Vec::new();
    let mut tuples: Vec<Vec<TypeId>> = vec![Vec::new()];
    for arity in 0..=ctx.arity_bound() {
        if arity > 0 {
            tuples = tuples
                .iter()
                .flat_map(|t| {
                    ctx.types().map(move |ty| {
                        let mut v = t.clone();
                        v.push(ty);
                        v
                    })
                })
                .collect();
        }
        for params in &tuples {
            for ret in ctx.types() {
                out.push(Family {
                    params: params.clone(),
                    ret,
                });
            }
        }
    }
    out
}

pub fn compile(ctx: &Context) -> CompiledGrammar {
    let families = families(ctx);
    let mut c = Compiler {
        ctx,
        b: GrammarBuilder::new(START),
        info: Vec::new(),
        terms: HashMap::new(),
    };
    let start = c.b.nonterminal(START);

    // Start productions come first, then each family's closure in turn.
    for (fi, fam) in families.iter().enumerate() {
        let root = c.exp(fam.ret, fam);
        let mut rhs: Vec<Symbol> = ["fun", SELF_NAME, "("].iter().map(|t| c.t(t)).collect();
        let params: Vec<Vec<Symbol>> = fam
            .params
            .iter()
            .enumerate()
            .map(|(i, ty)| {
                vec![
                    c.t(&format!("p{}", i + 1)),
                    c.t(":"),
                    c.t(ctx.type_name(*ty)),
                ]
            })
            .collect();
        let comma = c.t(",");
        rhs.extend(comma_join(&params, comma));
        for t in [")", ":", ctx.type_name(fam.ret), "="] {
            rhs.push(c.t(t));
        }
        rhs.push(Symbol::N(root));
        c.push(start, rhs, Schema::Fun, fi);
    }
    for (fi, fam) in families.iter().enumerate() {
        c.expand_family(fam, fi);
    }
    CompiledGrammar {
        grammar: c.b.finish(),
        info: c.info,
        families,
    }
}

struct Compiler<'a> {
    ctx: &'a Context,
    b: GrammarBuilder,
    info: Vec<ProductionInfo>,
    terms: HashMap<String, TerminalId>,
}

impl Compiler<'_> {
    fn t(&mut self, name: &str) -> Symbol {
        if let Some(t) = self.terms.get(name) {
            return Symbol::T(*t);
        }
        let t = self.b.terminal(name);
        self.terms.insert(name.to_string(), t);
        Symbol::T(t)
    }

    fn exp(&mut self, ty: TypeId, fam: &Family) -> NonterminalId {
        let name = exp_name(self.ctx, ty, fam);
        self.b.nonterminal(&name)
    }

    fn push(&mut self, lhs: NonterminalId, rhs: Vec<Symbol>, schema: Schema, family: usize) {
        self.b.push(lhs, rhs);
        self.info.push(ProductionInfo { schema, family });
    }

    /// `name ( EXP[τ1] , … , EXP[τm] )`
    fn call(&mut self, name: &str, args: &[TypeId], fam: &Family, seen: &mut Seen) -> Vec<Symbol> {
        let mut rhs = vec![self.t(name), self.t("(")];
        let args: Vec<Vec<Symbol>> = args
            .iter()
            .map(|ty| vec![Symbol::N(seen.visit(self, *ty, fam))])
            .collect();
        let comma = self.t(",");
        rhs.extend(comma_join(&args, comma));
        rhs.push(self.t(")"));
        rhs
    }

    fn expand_family(&mut self, fam: &Family, fi: usize) {
        let ctx = self.ctx;
        let mut seen = Seen::default();
        seen.visit(self, fam.ret, fam);
        while let Some(ty) = seen.queue.pop_front() {
            let lhs = self.exp(ty, fam);

            for sig in ctx.signatures().iter().filter(|s| s.ret == ty) {
                let rhs = self.call(&sig.name, &sig.params, fam, &mut seen);
                self.push(lhs, rhs, Schema::Inv, fi);
            }

            if ty == fam.ret {
                let rhs = self.call(SELF_NAME, &fam.params, fam, &mut seen);
                self.push(lhs, rhs, Schema::Rec, fi);
            }

            if let Some(b) = ctx.boolean() {
                let cond = Symbol::N(seen.visit(self, b, fam));
                let branch = Symbol::N(seen.visit(self, ty, fam));
                let rhs = vec![
                    self.t("if"),
                    cond,
                    self.t("{"),
                    branch,
                    self.t("}"),
                    self.t("else"),
                    self.t("{"),
                    branch,
                    self.t("}"),
                ];
                self.push(lhs, rhs, Schema::Ife, fi);
            }

            for op in Operator::ALL {
                for l in ctx.types() {
                    for r in ctx.types() {
                        if ctx.op_result(op, l, r) != Some(ty) {
                            continue;
                        }
                        let open = self.t("(");
                        let lx = Symbol::N(seen.visit(self, l, fam));
                        let o = self.t(op.token());
                        let rx = Symbol::N(seen.visit(self, r, fam));
                        let close = self.t(")");
                        self.push(lhs, vec![open, lx, o, rx, close], Schema::Opx, fi);
                    }
                }
            }

            for (i, p) in fam.params.iter().enumerate() {
                if *p == ty {
                    let rhs = vec![self.t(&format!("p{}", i + 1))];
                    self.push(lhs, rhs, Schema::Pid, fi);
                }
            }

            for lit in ctx.literals(ty) {
                let rhs = vec![self.t(lit)];
                self.push(lhs, rhs, Schema::Lit, fi);
            }
        }
    }
}

/// Types of one family whose `EXP` nonterminal has been referenced, in
/// discovery order.
#[derive(Default)]
struct Seen {
    done: Vec<TypeId>,
    queue: VecDeque<TypeId>,
}

impl Seen {
    fn visit(&mut self, c: &mut Compiler<'_>, ty: TypeId, fam: &Family) -> NonterminalId {
        if !self.done.contains(&ty) {
            self.done.push(ty);
            self.queue.push_back(ty);
        }
        c.exp(ty, fam)
    }
}

/// `EXP[τ,(τ1,…)->τ̇]`
pub fn exp_name(ctx: &Context, ty: TypeId, fam: &Family) -> String {
    let params: Vec<&str> = fam.params.iter().map(|t| ctx.type_name(*t)).collect();
    format!(
        "EXP[{},({})->{}]",
        ctx.type_name(ty),
        params.join(","),
        ctx.type_name(fam.ret)
    )
}

/// `Σ_{p=1}^{k} (20p + 31) d^{p+1}`.
pub fn predicted_size(k: usize, d: usize) -> BigUint {
    let d = BigUint::from(d);
    (1..=k)
        .map(|p| BigUint::from(20 * p + 31) * d.pow(p as u32 + 1))
        .sum()
}

/// Binarized sizes after CNF, attributed to the schema of the source
/// production. Shared terminal proxies are reported separately.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchemaReport {
    pub by_schema: BTreeMap<Schema, usize>,
    pub proxies: usize,
    pub total: usize,
    /// Human-readable descriptions of every violated per-schema bound.
    pub violations: Vec<String>,
}

impl SchemaReport {
    pub fn is_within_bounds(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn schema_size_report(cg: &CompiledGrammar) -> SchemaReport {
    let cnf = to_cnf(&cg.grammar).expect("compiled grammars are proper");
    schema_size_report_with(cg, &cnf)
}

/// As [`schema_size_report`] for an already converted `cnf = to_cnf(cg)`.
pub fn schema_size_report_with(cg: &CompiledGrammar, cnf: &CnfGrammar) -> SchemaReport {
    let mut per_input = vec![0usize; cg.grammar.productions().len()];
    let mut proxies = 0;
    for (p, origin) in cnf.grammar().productions().iter().zip(cnf.origins()) {
        let size = 1 + p.rhs.len();
        match origin {
            Origin::Input(i) => per_input[*i] += size,
            Origin::Proxy => proxies += size,
        }
    }

    let mut by_schema: BTreeMap<Schema, usize> = Schema::ALL.iter().map(|s| (*s, 0)).collect();
    let mut pid_per_family = vec![0usize; cg.families.len()];
    let mut violations = Vec::new();
    for (i, info) in cg.info.iter().enumerate() {
        *by_schema.get_mut(&info.schema).unwrap() += per_input[i];
        let p = cg.families[info.family].arity();
        let bound = match info.schema {
            Schema::Fun => 12 * p + 23,
            Schema::Rec => 6 * p + 8,
            Schema::Pid => {
                pid_per_family[info.family] += per_input[i];
                continue;
            }
            _ => continue,
        };
        if per_input[i] > bound {
            violations.push(format!(
                "{} production {i} (arity {p}) has binarized size {} > {bound}",
                info.schema, per_input[i]
            ));
        }
    }
    for (fi, fam) in cg.families.iter().enumerate() {
        if pid_per_family[fi] != 2 * fam.arity() {
            violations.push(format!(
                "PID family {fi} (arity {}) has size {} != {}",
                fam.arity(),
                pid_per_family[fi],
                2 * fam.arity()
            ));
        }
    }
    SchemaReport {
        by_schema,
        proxies,
        total: per_input.iter().sum::<usize>() + proxies,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{enumerate_words, size_lange_leiss};
    use crate::syntax::tokenize;

    fn tiny() -> Context {
        Context::builder().types(["Int"]).build().unwrap()
    }

    #[test]
    fn comma_join_cases() {
        let v = |s: &str| vec![s.to_string()];
        assert_eq!(comma_join(&[v("A"), v("B")], ",".into()), ["A", ",", "B"]);
        assert_eq!(comma_join(&[v("A")], ",".into()), ["A"]);
        assert!(comma_join::<String>(&[], ",".into()).is_empty());
    }

    #[test]
    fn tiny_grammar_by_hand() {
        let cg = compile(&tiny());
        assert_eq!(
            cg.tagged_dump(),
            "start: S\n# size: 27\n\
             S -> fun f0 ( ) : Int = EXP[Int,()->Int] # FUN\n\
             EXP[Int,()->Int] -> f0 ( ) # REC\n\
             EXP[Int,()->Int] -> ( EXP[Int,()->Int] + EXP[Int,()->Int] ) # OPX\n\
             EXP[Int,()->Int] -> ( EXP[Int,()->Int] * EXP[Int,()->Int] ) # OPX\n\
             EXP[Int,()->Int] -> 1 # LIT\n"
        );
        let words = enumerate_words(&cg.grammar, 8, 100).unwrap();
        assert!(words.contains(&tokenize("fun f0 ( ) : Int = 1")));
    }

    #[test]
    fn start_production_count() {
        let ctx = Context::builder()
            .types(["Int", "Bool"])
            .arity(1)
            .build()
            .unwrap();
        let cg = compile(&ctx);
        let funs = cg.info.iter().filter(|i| i.schema == Schema::Fun).count();
        assert_eq!(funs, 2 * (1 + 2));
    }

    #[test]
    fn proper_and_closed() {
        let cg = compile(&Context::default_ambient().with_arity_bound(1));
        cg.grammar.check_proper().unwrap();
        let by = cg.grammar.productions_by_lhs();
        for p in cg.grammar.productions() {
            for s in &p.rhs {
                if let Symbol::N(n) = s {
                    assert!(
                        !by[n.index()].is_empty(),
                        "{}",
                        cg.grammar.nonterminal_name(*n)
                    );
                }
            }
        }
    }

    #[test]
    fn predicted_sizes() {
        assert_eq!(predicted_size(1, 7), BigUint::from(2499u32));
        assert_eq!(predicted_size(2, 7), BigUint::from(26852u32));
        assert_eq!(predicted_size(1, 1), BigUint::from(51u32));
    }

    #[test]
    fn arity_zero_bounds() {
        let cg = compile(&tiny());
        let fun = &cg.grammar.productions()[0];
        assert_eq!(1 + fun.rhs.len(), 9);
        let rec = &cg.grammar.productions()[1];
        assert_eq!(1 + rec.rhs.len(), 4);
        let report = schema_size_report(&cg);
        assert!(report.is_within_bounds(), "{:?}", report.violations);
        assert!(report.by_schema[&Schema::Fun] <= 23);
        assert!(report.by_schema[&Schema::Rec] <= 8);
    }

    #[test]
    fn pid_family_of_two_distinct_params() {
        let ctx = Context::builder()
            .types(["Int", "Bool"])
            .arity(2)
            .build()
            .unwrap();
        let cg = compile(&ctx);
        let int = ctx.lookup_type("Int").unwrap();
        let b = ctx.lookup_type("Bool").unwrap();
        let fi = cg
            .families
            .iter()
            .position(|f| f.params == [int, b] && f.ret == int)
            .unwrap();
        let pid: usize = cg
            .info
            .iter()
            .enumerate()
            .filter(|(_, i)| i.family == fi && i.schema == Schema::Pid)
            .map(|(p, _)| 1 + cg.grammar.productions()[p].rhs.len())
            .sum();
        assert_eq!(pid, 4);
        assert!(schema_size_report(&cg).is_within_bounds());
    }

    #[test]
    fn sizes_are_deterministic() {
        let ctx = Context::default_ambient().with_arity_bound(1);
        let a = compile(&ctx);
        let b = compile(&ctx);
        assert_eq!(a.grammar, b.grammar);
        assert_eq!(size_lange_leiss(&a.grammar), size_lange_leiss(&b.grammar));
    }
}
