//! Type universe, ambient context and the operator typing function.
//!
//! A [`Context`] fixes everything the rest of the pipeline needs to know about
//! the object language: the ordered finite set of types, the callable ambient
//! functions, the arity bound of the synthesized function `f0`, and the finite
//! literal pools for `Int` and `Bool`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use thiserror::Error;

/// Name of the function under synthesis.
pub const SELF_NAME: &str = "f0";

pub const INT: &str = "Int";
pub const BOOL: &str = "Bool";

const KEYWORDS: &[&str] = &["fun", "if", "else", "true", "false", "lit", "types"];

/// Index of a type in the context's universe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TypeId(pub(crate) u16);

impl TypeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionSignature {
    pub name: String,
    pub params: Vec<TypeId>,
    pub ret: TypeId,
}

/// Binary operators of the object language.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operator {
    Add,
    Mul,
    Lt,
    Eq,
}

impl Operator {
    pub const ALL: [Operator; 4] = [Operator::Add, Operator::Mul, Operator::Lt, Operator::Eq];

    pub fn token(self) -> &'static str {
        match self {
            Operator::Add => "+",
            Operator::Mul => "*",
            Operator::Lt => "<",
            Operator::Eq => "==",
        }
    }

    pub fn from_token(token: &str) -> Option<Operator> {
        Operator::ALL.into_iter().find(|op| op.token() == token)
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("duplicate function name `{0}`")]
    DuplicateName(String),
    #[error("reserved function name `{0}`")]
    ReservedName(String),
    #[error("invalid literal pool for {ty}: {message}")]
    LiteralPool { ty: String, message: String },
    #[error("type universe is empty")]
    EmptyUniverse,
}

/// Immutable description of the object language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Context {
    universe: Vec<String>,
    signatures: Vec<FunctionSignature>,
    arity_bound: usize,
    literal_pool: BTreeMap<TypeId, Vec<String>>,
}

impl Context {
    /// The shipped default: 18 ambient functions over 7 types, `k = 3`.
    pub fn default_ambient() -> Context {
        Context::parse(DEFAULT_CONTEXT)
            .expect("shipped context parses")
            .with_arity_bound(3)
    }

    pub fn builder() -> ContextBuilder {
        ContextBuilder::default()
    }

    /// Parses the plain-text context format.
    ///
    /// ```text
    /// # comment
    /// types : Int Bool          (optional; otherwise order of first use)
    /// b2i : Bool -> Int
    /// zero : -> Int
    /// lit Int : 1 2
    /// ```
    pub fn parse(text: &str) -> Result<Context, ConfigError> {
        let mut builder = ContextBuilder::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let padded = content
                .replace("->", " -> ")
                .replace(',', " , ")
                .replace(':', " : ");
            let toks: Vec<&str> = padded.split_whitespace().collect();
            let syntax = |message: &str| ConfigError::Syntax {
                line,
                message: message.to_string(),
            };
            if toks.len() < 2 || toks.iter().filter(|t| **t == ":").count() != 1 {
                return Err(syntax("expected exactly one `:`"));
            }
            match toks[0] {
                "types" => {
                    if toks[1] != ":" {
                        return Err(syntax("expected `types : T ...`"));
                    }
                    builder.universe = Some(toks[2..].iter().map(|s| s.to_string()).collect());
                }
                "lit" => {
                    if toks.len() < 3 || toks[2] != ":" {
                        return Err(syntax("expected `lit T : tok ...`"));
                    }
                    builder.literals(toks[1], toks[3..].iter().copied());
                }
                name => {
                    if toks[1] != ":" {
                        return Err(syntax("expected `name : T , ... -> T`"));
                    }
                    let arrow = toks
                        .iter()
                        .position(|t| *t == "->")
                        .ok_or_else(|| syntax("missing `->`"))?;
                    if arrow + 2 != toks.len() {
                        return Err(syntax("expected a single return type after `->`"));
                    }
                    let mut params = Vec::new();
                    let param_toks = &toks[2..arrow];
                    for (i, tok) in param_toks.iter().enumerate() {
                        let is_sep = i % 2 == 1;
                        if is_sep != (*tok == ",") {
                            return Err(syntax("parameters must be comma separated"));
                        }
                        if !is_sep {
                            params.push(tok.to_string());
                        }
                    }
                    if param_toks.len() % 2 == 0 && !param_toks.is_empty() {
                        return Err(syntax("dangling comma"));
                    }
                    builder.signature(name, params, toks[arrow + 1]);
                }
            }
        }
        builder.build()
    }

    pub fn with_arity_bound(mut self, k: usize) -> Context {
        self.arity_bound = k;
        self
    }

    pub fn arity_bound(&self) -> usize {
        self.arity_bound
    }

    pub fn universe_size(&self) -> usize {
        self.universe.len()
    }

    pub fn types(&self) -> impl Iterator<Item = TypeId> + '_ {
        (0..self.universe.len()).map(|i| TypeId(i as u16))
    }

    pub fn type_name(&self, ty: TypeId) -> &str {
        &self.universe[ty.index()]
    }

    pub fn lookup_type(&self, name: &str) -> Option<TypeId> {
        self.universe
            .iter()
            .position(|n| n == name)
            .map(|i| TypeId(i as u16))
    }

    pub fn int(&self) -> Option<TypeId> {
        self.lookup_type(INT)
    }

    pub fn boolean(&self) -> Option<TypeId> {
        self.lookup_type(BOOL)
    }

    pub fn signatures(&self) -> &[FunctionSignature] {
        &self.signatures
    }

    pub fn signature(&self, name: &str) -> Option<&FunctionSignature> {
        self.signatures.iter().find(|s| s.name == name)
    }

    /// Literal tokens of `ty`; empty for non-primitive types.
    pub fn literals(&self, ty: TypeId) -> &[String] {
        self.literal_pool.get(&ty).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The type of a literal token, if it belongs to a pool.
    pub fn literal_type(&self, token: &str) -> Option<TypeId> {
        self.literal_pool
            .iter()
            .find(|(_, pool)| pool.iter().any(|t| t == token))
            .map(|(ty, _)| *ty)
    }

    /// Operator typing: `<` and `+`/`*` on `Int` operands, `==` on equal types.
    pub fn op_result(&self, op: Operator, lhs: TypeId, rhs: TypeId) -> Option<TypeId> {
        match op {
            Operator::Lt => {
                let int = self.int()?;
                (lhs == int && rhs == int).then_some(self.boolean()?)
            }
            Operator::Add | Operator::Mul => {
                let int = self.int()?;
                (lhs == int && rhs == int).then_some(int)
            }
            Operator::Eq => (lhs == rhs).then_some(self.boolean()?),
        }
    }

    /// Renders the context back into the config format.
    pub fn to_config(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("types : {}\n", self.universe.join(" ")));
        for sig in &self.signatures {
            let params: Vec<&str> = sig.params.iter().map(|t| self.type_name(*t)).collect();
            if params.is_empty() {
                out.push_str(&format!("{} : -> {}\n", sig.name, self.type_name(sig.ret)));
            } else {
                out.push_str(&format!(
                    "{} : {} -> {}\n",
                    sig.name,
                    params.join(" , "),
                    self.type_name(sig.ret)
                ));
            }
        }
        for (ty, pool) in &self.literal_pool {
            out.push_str(&format!(
                "lit {} : {}\n",
                self.type_name(*ty),
                pool.join(" ")
            ));
        }
        out
    }
}

/// Incremental construction of a [`Context`].
#[derive(Clone, Debug, Default)]
pub struct ContextBuilder {
    universe: Option<Vec<String>>,
    signatures: Vec<(String, Vec<String>, String)>,
    literals: Vec<(String, Vec<String>)>,
    arity_bound: usize,
}

impl ContextBuilder {
    pub fn types<I, S>(&mut self, names: I) -> &mut Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.universe = Some(names.into_iter().map(Into::into).collect());
        self
    }

    pub fn signature<I, S>(&mut self, name: &str, params: I, ret: &str) -> &mut Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.signatures.push((
            name.to_string(),
            params.into_iter().map(Into::into).collect(),
            ret.to_string(),
        ));
        self
    }

    pub fn literals<I, S>(&mut self, ty: &str, tokens: I) -> &mut Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.literals
            .push((ty.to_string(), tokens.into_iter().map(Into::into).collect()));
        self
    }

    pub fn arity(&mut self, k: usize) -> &mut Self {
        self.arity_bound = k;
        self
    }

    pub fn build(&self) -> Result<Context, ConfigError> {
        let universe = match &self.universe {
            Some(u) => u.clone(),
            None => {
                let mut seen = Vec::new();
                for (_, params, ret) in &self.signatures {
                    for t in params.iter().chain(std::iter::once(ret)) {
                        if !seen.contains(t) {
                            seen.push(t.clone());
                        }
                    }
                }
                for (ty, _) in &self.literals {
                    if !seen.contains(ty) {
                        seen.push(ty.clone());
                    }
                }
                seen
            }
        };
        if universe.is_empty() {
            return Err(ConfigError::EmptyUniverse);
        }
        let mut seen_types = HashSet::new();
        for t in &universe {
            if !seen_types.insert(t.as_str()) {
                return Err(ConfigError::Syntax {
                    line: 0,
                    message: format!("type `{t}` listed twice"),
                });
            }
        }
        let lookup = |name: &str| -> Result<TypeId, ConfigError> {
            universe
                .iter()
                .position(|n| n == name)
                .map(|i| TypeId(i as u16))
                .ok_or_else(|| ConfigError::UnknownType(name.to_string()))
        };

        let mut names = HashSet::new();
        let mut signatures = Vec::new();
        for (name, params, ret) in &self.signatures {
            if name == SELF_NAME || KEYWORDS.contains(&name.as_str()) || !is_identifier(name) {
                return Err(ConfigError::ReservedName(name.clone()));
            }
            if !names.insert(name.clone()) {
                return Err(ConfigError::DuplicateName(name.clone()));
            }
            signatures.push(FunctionSignature {
                name: name.clone(),
                params: params.iter().map(|p| lookup(p)).collect::<Result<_, _>>()?,
                ret: lookup(ret)?,
            });
        }

        let mut literal_pool = BTreeMap::new();
        for (ty, tokens) in &self.literals {
            let id = lookup(ty)?;
            let pool_err = |message: &str| ConfigError::LiteralPool {
                ty: ty.clone(),
                message: message.to_string(),
            };
            let mut pool: Vec<String> = Vec::new();
            for t in tokens {
                if !pool.contains(t) {
                    pool.push(t.clone());
                }
            }
            match ty.as_str() {
                INT => {
                    if pool.is_empty() {
                        return Err(pool_err("pool must be nonempty"));
                    }
                    if !pool.iter().all(|t| t.bytes().all(|b| b.is_ascii_digit())) {
                        return Err(pool_err("Int literals must be numerals"));
                    }
                }
                BOOL => {
                    if pool != ["true", "false"] {
                        return Err(pool_err("Bool pool is exactly `true false`"));
                    }
                }
                _ => return Err(pool_err("only Int and Bool carry literals")),
            }
            literal_pool.insert(id, pool);
        }
        if let Ok(int) = lookup(INT) {
            literal_pool
                .entry(int)
                .or_insert_with(|| vec!["1".to_string()]);
        }
        if let Ok(b) = lookup(BOOL) {
            literal_pool
                .entry(b)
                .or_insert_with(|| vec!["true".to_string(), "false".to_string()]);
        }

        Ok(Context {
            universe,
            signatures,
            arity_bound: self.arity_bound,
            literal_pool,
        })
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub const DEFAULT_CONTEXT: &str = include_str!("../data/ambient.ctx");
