//! Pattern language: abstract syntax for the event algebra, a textual DSL,
//! parsing, and static validation (variable binding, negation scope,
//! hierarchy well-formedness).
//!
//! Casing follows the logic-programming convention: identifiers starting
//! with an uppercase letter are variables, lowercase identifiers are string
//! constants, `_` is a per-occurrence wildcard. The last argument of every
//! atom is its time term.

mod lexer;
mod parser;
mod pretty;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::event::AttrValue;

/// Source position, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Argument of an atom: variable, wildcard, or constant.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Var(String),
    Wildcard,
    Const(AttrValue),
}

/// A reference to an event type with argument bindings. `uid` identifies the
/// atom inside its rule (assigned in canonical preorder) and is the stable
/// role label used for match identity across compiled branches.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub uid: u32,
    pub event_type: String,
    pub terms: Vec<Term>,
    pub pos: Pos,
}

impl Atom {
    /// Time term (last argument).
    pub fn time_term(&self) -> &Term {
        self.terms.last().expect("atom has a time term")
    }
    /// Attribute terms (all but the last argument).
    pub fn attr_terms(&self) -> &[Term] {
        &self.terms[..self.terms.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

/// Arithmetic expression over variables and constants.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var(String, Pos),
    Const(AttrValue),
    Binary(ArithOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn variables(&self, out: &mut Vec<(String, Pos)>) {
        match self {
            Expr::Var(v, p) => out.push((v.clone(), *p)),
            Expr::Const(_) => {}
            Expr::Binary(_, l, r) => {
                l.variables(out);
                r.variables(out);
            }
        }
    }
}

/// A comparison between two expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub op: CmpOp,
    pub lhs: Expr,
    pub rhs: Expr,
    pub pos: Pos,
}

impl Predicate {
    pub fn variables(&self) -> Vec<(String, Pos)> {
        let mut v = Vec::new();
        self.lhs.variables(&mut v);
        self.rhs.variables(&mut v);
        v
    }
}

/// A derived-variable definition from an `emit { V = expr }` block.
#[derive(Debug, Clone, PartialEq)]
pub struct Mapping {
    pub var: String,
    pub expr: Expr,
    pub pos: Pos,
}

/// Window bounds as written; anchoring (relative when lo = 0, absolute
/// otherwise) is resolved at compile time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowBounds {
    pub lo: u64,
    pub hi: u64,
}

/// The pattern algebra.
#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    Sde(Atom),
    Seq(Vec<Pattern>),
    Or(Vec<Pattern>),
    And(Vec<Pattern>),
    Star(Box<Pattern>),
    Not(Box<Pattern>),
    Select(Vec<Predicate>, Box<Pattern>),
    Emit(Vec<Mapping>, Box<Pattern>),
    Window(WindowBounds, Box<Pattern>),
}

impl Pattern {
    /// All atoms, positive and negated, in preorder.
    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.walk_atoms(&mut |a, _| out.push(a));
        out
    }

    /// Walks atoms in preorder; the flag marks atoms under a `Not`.
    pub fn walk_atoms<'a, F: FnMut(&'a Atom, bool)>(&'a self, f: &mut F) {
        fn rec<'a, F: FnMut(&'a Atom, bool)>(p: &'a Pattern, negated: bool, f: &mut F) {
            match p {
                Pattern::Sde(a) => f(a, negated),
                Pattern::Seq(cs) | Pattern::Or(cs) | Pattern::And(cs) => {
                    for c in cs {
                        rec(c, negated, f)
                    }
                }
                Pattern::Star(c) => rec(c, negated, f),
                Pattern::Not(c) => rec(c, true, f),
                Pattern::Select(_, c) | Pattern::Emit(_, c) | Pattern::Window(_, c) => {
                    rec(c, negated, f)
                }
            }
        }
        rec(self, false, f)
    }

    /// All predicates from Select nodes, in preorder.
    pub fn predicates(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        match self {
            Pattern::Select(ps, c) => {
                out.extend(ps.iter());
                out.extend(c.predicates());
            }
            Pattern::Emit(_, c) | Pattern::Window(_, c) | Pattern::Star(c) | Pattern::Not(c) => {
                out.extend(c.predicates())
            }
            Pattern::Seq(cs) | Pattern::Or(cs) | Pattern::And(cs) => {
                for c in cs {
                    out.extend(c.predicates())
                }
            }
            Pattern::Sde(_) => {}
        }
        out
    }

    /// All emit mappings, in preorder.
    pub fn mappings(&self) -> Vec<&Mapping> {
        let mut out = Vec::new();
        match self {
            Pattern::Emit(ms, c) => {
                out.extend(ms.iter());
                out.extend(c.mappings());
            }
            Pattern::Select(_, c) | Pattern::Window(_, c) | Pattern::Star(c) | Pattern::Not(c) => {
                out.extend(c.mappings())
            }
            Pattern::Seq(cs) | Pattern::Or(cs) | Pattern::And(cs) => {
                for c in cs {
                    out.extend(c.mappings())
                }
            }
            Pattern::Sde(_) => {}
        }
        out
    }

    fn contains_emit(&self) -> bool {
        match self {
            Pattern::Emit(..) => true,
            Pattern::Sde(_) => false,
            Pattern::Seq(cs) | Pattern::Or(cs) | Pattern::And(cs) => {
                cs.iter().any(|c| c.contains_emit())
            }
            Pattern::Star(c) | Pattern::Not(c) => c.contains_emit(),
            Pattern::Select(_, c) | Pattern::Window(_, c) => c.contains_emit(),
        }
    }
}

/// An alternative head of an annotated-disjunction rule.
#[derive(Debug, Clone, PartialEq)]
pub struct AltHead {
    pub prob: f64,
    pub args: Vec<Expr>,
    pub pos: Pos,
}

/// A CE definition: head, probability prefix, body, and optional alternative
/// heads forming an annotated disjunction.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub head_type: String,
    /// Head arguments; the last one is the CE time variable.
    pub head_args: Vec<Expr>,
    pub rule_prob: f64,
    pub body: Pattern,
    pub alt_heads: Vec<AltHead>,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

/// A positioned validation message.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
    pub pos: Pos,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{}: {} [{}] at {}", sev, self.message, self.code, self.pos)
    }
}

/// A validated collection of rules plus the CE dependency graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    /// CE type -> event types referenced by its defining rules.
    pub dependencies: BTreeMap<String, BTreeSet<String>>,
    pub warnings: Vec<Diagnostic>,
}

impl RuleSet {
    /// Types that have at least one defining rule.
    pub fn ce_types(&self) -> BTreeSet<&str> {
        self.rules.iter().map(|r| r.head_type.as_str()).collect()
    }

    pub fn is_ce_type(&self, ty: &str) -> bool {
        self.rules.iter().any(|r| r.head_type == ty)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("SYNTAX_ERROR at {pos}: {message}")]
    Syntax { pos: Pos, message: String },
    #[error("UNBOUND_VARIABLE at {pos}: {var}")]
    UnboundVariable { var: String, pos: Pos },
    #[error("CYCLIC_HIERARCHY: {cycle}")]
    CyclicHierarchy { cycle: String },
    #[error("DUPLICATE_HEAD_WITHOUT_DISJUNCTION_MARKER at {pos}: rule for {head} repeats an identical body; use ';;' to attach alternative heads")]
    DuplicateHead { head: String, pos: Pos },
    #[error("PROB_SUM_EXCEEDED at {pos}: head probabilities sum to {sum} > 1")]
    ProbSumExceeded { sum: String, pos: Pos },
    #[error("INVALID_PATTERN at {pos}: {message}")]
    InvalidPattern { pos: Pos, message: String },
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Syntax { .. } => "SYNTAX_ERROR",
            ParseError::UnboundVariable { .. } => "UNBOUND_VARIABLE",
            ParseError::CyclicHierarchy { .. } => "CYCLIC_HIERARCHY",
            ParseError::DuplicateHead { .. } => "DUPLICATE_HEAD_WITHOUT_DISJUNCTION_MARKER",
            ParseError::ProbSumExceeded { .. } => "PROB_SUM_EXCEEDED",
            ParseError::InvalidPattern { .. } => "INVALID_PATTERN",
        }
    }
}

pub use parser::parse_rules;
pub use pretty::{expr_to_string, pattern_to_string, rule_to_string, ruleset_to_string};

/// Position of the leftmost atom of a pattern (diagnostics anchor).
pub fn first_pos_of(p: &Pattern) -> Pos {
    parser::first_pos(p)
}

/// Normalizes nested Seq/Or/And associativity into canonical n-ary form.
/// No deduplication: `Or(a, a)` keeps both disjuncts (zero-consumption
/// semantics treats them as distinct match sources).
pub fn desugar(p: Pattern) -> Pattern {
    fn flatten(kind: u8, children: Vec<Pattern>) -> Vec<Pattern> {
        let mut out = Vec::with_capacity(children.len());
        for c in children {
            let c = desugar(c);
            match (kind, c) {
                (0, Pattern::Seq(inner)) => out.extend(inner),
                (1, Pattern::Or(inner)) => out.extend(inner),
                (2, Pattern::And(inner)) => out.extend(inner),
                (_, other) => out.push(other),
            }
        }
        out
    }
    match p {
        Pattern::Seq(cs) => {
            let mut cs = flatten(0, cs);
            if cs.len() == 1 {
                cs.pop().unwrap()
            } else {
                Pattern::Seq(cs)
            }
        }
        Pattern::Or(cs) => {
            let mut cs = flatten(1, cs);
            if cs.len() == 1 {
                cs.pop().unwrap()
            } else {
                Pattern::Or(cs)
            }
        }
        Pattern::And(cs) => {
            let mut cs = flatten(2, cs);
            if cs.len() == 1 {
                cs.pop().unwrap()
            } else {
                Pattern::And(cs)
            }
        }
        Pattern::Star(c) => Pattern::Star(Box::new(desugar(*c))),
        Pattern::Not(c) => Pattern::Not(Box::new(desugar(*c))),
        Pattern::Select(ps, c) => Pattern::Select(ps, Box::new(desugar(*c))),
        Pattern::Emit(ms, c) => Pattern::Emit(ms, Box::new(desugar(*c))),
        Pattern::Window(w, c) => Pattern::Window(w, Box::new(desugar(*c))),
        other => other,
    }
}

/// Assigns atom uids in preorder over the canonical pattern.
pub(crate) fn assign_uids(p: &mut Pattern, next: &mut u32) {
    match p {
        Pattern::Sde(a) => {
            a.uid = *next;
            *next += 1;
        }
        Pattern::Seq(cs) | Pattern::Or(cs) | Pattern::And(cs) => {
            for c in cs {
                assign_uids(c, next)
            }
        }
        Pattern::Star(c) | Pattern::Not(c) => assign_uids(c, next),
        Pattern::Select(_, c) | Pattern::Emit(_, c) | Pattern::Window(_, c) => {
            assign_uids(c, next)
        }
    }
}

/// Variables bound by positive atoms of a pattern (negated atoms bind
/// nothing).
pub fn positive_bound_vars(p: &Pattern) -> BTreeSet<String> {
    let mut vars = BTreeSet::new();
    p.walk_atoms(&mut |a, negated| {
        if !negated {
            for t in &a.terms {
                if let Term::Var(v) = t {
                    vars.insert(v.clone());
                }
            }
        }
    });
    vars
}

/// Static binding validation for one rule. Returns an empty list iff every
/// variable used in predicates, emit mappings, heads, and negated atoms is
/// bound appropriately. Diagnostics carry the variable name and position.
pub fn validate_bindings(rule: &Rule) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let positive = positive_bound_vars(&rule.body);
    let emit_defined: BTreeSet<String> = rule
        .body
        .mappings()
        .iter()
        .map(|m| m.var.clone())
        .collect();

    let mut unbound = |var: &str, pos: Pos, allow_emit: bool| {
        let ok = positive.contains(var) || (allow_emit && emit_defined.contains(var));
        if !ok {
            diags.push(Diagnostic {
                severity: Severity::Error,
                code: "UNBOUND_VARIABLE",
                message: format!("variable {var} is not bound by any positive atom"),
                pos,
            });
        }
    };

    for pred in rule.body.predicates() {
        for (v, p) in pred.variables() {
            unbound(&v, p, true);
        }
    }
    for m in rule.body.mappings() {
        let mut vars = Vec::new();
        m.expr.variables(&mut vars);
        for (v, p) in vars {
            unbound(&v, p, false);
        }
    }
    for arg in &rule.head_args {
        let mut vars = Vec::new();
        arg.variables(&mut vars);
        for (v, p) in vars {
            unbound(&v, p, true);
        }
    }
    for alt in &rule.alt_heads {
        for arg in &alt.args {
            let mut vars = Vec::new();
            arg.variables(&mut vars);
            for (v, p) in vars {
                unbound(&v, p, true);
            }
        }
    }
    // Named variables of negated atoms must be bound by positive atoms.
    rule.body.walk_atoms(&mut |a, negated| {
        if negated {
            for t in &a.terms {
                if let Term::Var(v) = t {
                    if !positive.contains(v) {
                        diags.push(Diagnostic {
                            severity: Severity::Error,
                            code: "UNBOUND_VARIABLE",
                            message: format!(
                                "negated atom variable {v} is not bound by any positive atom"
                            ),
                            pos: a.pos,
                        });
                    }
                }
            }
        }
    });
    diags
}

#[cfg(test)]
mod tests;
