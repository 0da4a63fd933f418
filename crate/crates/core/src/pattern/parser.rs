//! Recursive-descent parser for the rule DSL.
//!
//! ```text
//! ruleset  := rule*
//! rule     := [ NUMBER "::" ] head "::=" expr ( ";;" altHead )*
//! head     := IDENT "(" termList ")"
//! altHead  := NUMBER "::" IDENT "(" exprList ")"
//! expr     := orExpr
//! orExpr   := seqExpr ( "|" seqExpr )*
//! seqExpr  := andChain ( ";" andChain )*
//! andChain := notUnit ( "and" notUnit )*
//! notUnit  := "not" postfixed | postfixed
//! postfixed:= primary ( "*" | "where" "{" preds "}" | "emit" "{" maps "}"
//!                     | "within" "[" INT "," INT "]" )*
//! primary  := atom | "(" expr ")"
//! ```
//!
//! Rejection is total: every input yields either a `RuleSet` or a positioned
//! error, never a partial structure.

use std::collections::{BTreeMap, BTreeSet};

use super::lexer::{lex, Tok, Token};
use super::*;
use crate::event::{AttrValue, PROB_EPS};

struct Parser {
    toks: Vec<Token>,
    idx: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.idx].tok
    }
    fn peek2(&self) -> &Tok {
        if self.idx + 1 < self.toks.len() {
            &self.toks[self.idx + 1].tok
        } else {
            &self.toks[self.toks.len() - 1].tok
        }
    }
    fn pos(&self) -> Pos {
        self.toks[self.idx].pos
    }
    fn bump(&mut self) -> Token {
        let t = self.toks[self.idx].clone();
        if self.idx + 1 < self.toks.len() {
            self.idx += 1;
        }
        t
    }
    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }
    fn err(&self, message: String) -> ParseError {
        ParseError::Syntax {
            pos: self.pos(),
            message,
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(i as f64)
            }
            Tok::Float(f) => {
                self.bump();
                Ok(f)
            }
            _ => Err(self.err("expected a number".into())),
        }
    }

    fn rule(&mut self) -> Result<Rule, ParseError> {
        let pos = self.pos();
        let mut rule_prob = 1.0;
        if matches!(self.peek(), Tok::Int(_) | Tok::Float(_)) && *self.peek2() == Tok::Prefix {
            rule_prob = self.number()?;
            self.expect(Tok::Prefix, "'::'")?;
        }
        let (head_type, head_args) = self.head()?;
        self.expect(Tok::Define, "'::='")?;
        let body = self.or_expr()?;
        let mut alt_heads = Vec::new();
        while *self.peek() == Tok::AltSep {
            self.bump();
            let apos = self.pos();
            let prob = self.number()?;
            self.expect(Tok::Prefix, "'::'")?;
            let name = match self.peek().clone() {
                Tok::Ident(s) => {
                    self.bump();
                    s
                }
                _ => return Err(self.err("expected alternative head name".into())),
            };
            if name != head_type {
                return Err(self.err(format!(
                    "alternative head '{name}' must match the rule head '{head_type}'"
                )));
            }
            self.expect(Tok::LParen, "'('")?;
            let mut args = Vec::new();
            if *self.peek() != Tok::RParen {
                loop {
                    args.push(self.arith_expr()?);
                    if *self.peek() == Tok::Comma {
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
            self.expect(Tok::RParen, "')'")?;
            if args.len() != head_args.len() {
                return Err(ParseError::Syntax {
                    pos: apos,
                    message: format!(
                        "alternative head arity {} does not match head arity {}",
                        args.len(),
                        head_args.len()
                    ),
                });
            }
            alt_heads.push(AltHead {
                prob,
                args,
                pos: apos,
            });
        }
        Ok(Rule {
            head_type,
            head_args,
            rule_prob,
            body,
            alt_heads,
            pos,
        })
    }

    fn head(&mut self) -> Result<(String, Vec<Expr>), ParseError> {
        let name = match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                s
            }
            _ => return Err(self.err("expected rule head".into())),
        };
        self.expect(Tok::LParen, "'('")?;
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let pos = self.pos();
                match self.peek().clone() {
                    Tok::Var(v) => {
                        self.bump();
                        args.push(Expr::Var(v, pos));
                    }
                    Tok::Ident(s) => {
                        self.bump();
                        args.push(Expr::Const(AttrValue::Str(s)));
                    }
                    Tok::Int(i) => {
                        self.bump();
                        args.push(Expr::Const(AttrValue::Int(i)));
                    }
                    Tok::Float(f) => {
                        self.bump();
                        args.push(Expr::Const(AttrValue::Float(f)));
                    }
                    Tok::Str(s) => {
                        self.bump();
                        args.push(Expr::Const(AttrValue::Str(s)));
                    }
                    _ => return Err(self.err("expected head argument".into())),
                }
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "')'")?;
        if args.is_empty() {
            return Err(self.err("rule head needs at least a time argument".into()));
        }
        Ok((name, args))
    }

    fn or_expr(&mut self) -> Result<Pattern, ParseError> {
        let mut children = vec![self.seq_expr()?];
        while *self.peek() == Tok::Pipe {
            self.bump();
            children.push(self.seq_expr()?);
        }
        Ok(if children.len() == 1 {
            children.pop().unwrap()
        } else {
            Pattern::Or(children)
        })
    }

    fn seq_expr(&mut self) -> Result<Pattern, ParseError> {
        let mut children = vec![self.and_chain()?];
        while *self.peek() == Tok::Semi {
            self.bump();
            children.push(self.and_chain()?);
        }
        Ok(if children.len() == 1 {
            children.pop().unwrap()
        } else {
            Pattern::Seq(children)
        })
    }

    fn and_chain(&mut self) -> Result<Pattern, ParseError> {
        let mut children = vec![self.not_unit()?];
        while *self.peek() == Tok::And {
            self.bump();
            children.push(self.not_unit()?);
        }
        Ok(if children.len() == 1 {
            children.pop().unwrap()
        } else {
            Pattern::And(children)
        })
    }

    fn not_unit(&mut self) -> Result<Pattern, ParseError> {
        if *self.peek() == Tok::Not {
            self.bump();
            let inner = self.postfixed()?;
            Ok(Pattern::Not(Box::new(inner)))
        } else {
            self.postfixed()
        }
    }

    fn postfixed(&mut self) -> Result<Pattern, ParseError> {
        let mut node = self.primary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    node = Pattern::Star(Box::new(node));
                }
                Tok::Where => {
                    self.bump();
                    self.expect(Tok::LBrace, "'{'")?;
                    let preds = self.pred_list()?;
                    self.expect(Tok::RBrace, "'}'")?;
                    node = Pattern::Select(preds, Box::new(node));
                }
                Tok::Emit => {
                    self.bump();
                    self.expect(Tok::LBrace, "'{'")?;
                    let maps = self.map_list()?;
                    self.expect(Tok::RBrace, "'}'")?;
                    node = Pattern::Emit(maps, Box::new(node));
                }
                Tok::Within => {
                    self.bump();
                    self.expect(Tok::LBracket, "'['")?;
                    let lo = match self.peek().clone() {
                        Tok::Int(i) if i >= 0 => {
                            self.bump();
                            i as u64
                        }
                        _ => return Err(self.err("expected non-negative window bound".into())),
                    };
                    self.expect(Tok::Comma, "','")?;
                    let hi = match self.peek().clone() {
                        Tok::Int(i) if i >= 0 => {
                            self.bump();
                            i as u64
                        }
                        _ => return Err(self.err("expected non-negative window bound".into())),
                    };
                    self.expect(Tok::RBracket, "']'")?;
                    if lo > hi {
                        return Err(self.err(format!("window [{lo},{hi}] has lo > hi")));
                    }
                    node = Pattern::Window(WindowBounds { lo, hi }, Box::new(node));
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn primary(&mut self) -> Result<Pattern, ParseError> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let e = self.or_expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(_) => Ok(Pattern::Sde(self.atom()?)),
            _ => Err(self.err("expected an atom or '('".into())),
        }
    }

    fn atom(&mut self) -> Result<Atom, ParseError> {
        let pos = self.pos();
        let name = match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                s
            }
            _ => return Err(self.err("expected event type name".into())),
        };
        self.expect(Tok::LParen, "'('")?;
        let mut terms = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                terms.push(self.term()?);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "')'")?;
        if terms.is_empty() {
            return Err(ParseError::Syntax {
                pos,
                message: format!("atom {name}() needs at least a time term"),
            });
        }
        Ok(Atom {
            uid: 0,
            event_type: name,
            terms,
            pos,
        })
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        match self.peek().clone() {
            Tok::Var(v) => {
                self.bump();
                Ok(Term::Var(v))
            }
            Tok::Underscore => {
                self.bump();
                Ok(Term::Wildcard)
            }
            Tok::Ident(s) => {
                self.bump();
                Ok(Term::Const(AttrValue::Str(s)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Term::Const(AttrValue::Str(s)))
            }
            Tok::Int(i) => {
                self.bump();
                Ok(Term::Const(AttrValue::Int(i)))
            }
            Tok::Float(f) => {
                self.bump();
                Ok(Term::Const(AttrValue::Float(f)))
            }
            Tok::True => {
                self.bump();
                Ok(Term::Const(AttrValue::Bool(true)))
            }
            Tok::False => {
                self.bump();
                Ok(Term::Const(AttrValue::Bool(false)))
            }
            Tok::Minus => {
                self.bump();
                match self.peek().clone() {
                    Tok::Int(i) => {
                        self.bump();
                        Ok(Term::Const(AttrValue::Int(-i)))
                    }
                    Tok::Float(f) => {
                        self.bump();
                        Ok(Term::Const(AttrValue::Float(-f)))
                    }
                    _ => Err(self.err("expected a number after '-'".into())),
                }
            }
            _ => Err(self.err("expected a term".into())),
        }
    }

    fn pred_list(&mut self) -> Result<Vec<Predicate>, ParseError> {
        let mut preds = Vec::new();
        loop {
            preds.push(self.predicate()?);
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        Ok(preds)
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let pos = self.pos();
        // builtin: next(a, b) desugars to a == b + 1
        if let Tok::Ident(name) = self.peek().clone() {
            if name == "next" && *self.peek2() == Tok::LParen {
                self.bump();
                self.bump();
                let lhs = self.arith_expr()?;
                self.expect(Tok::Comma, "','")?;
                let rhs = self.arith_expr()?;
                self.expect(Tok::RParen, "')'")?;
                return Ok(Predicate {
                    op: CmpOp::Eq,
                    lhs,
                    rhs: Expr::Binary(
                        ArithOp::Add,
                        Box::new(rhs),
                        Box::new(Expr::Const(AttrValue::Int(1))),
                    ),
                    pos,
                });
            }
        }
        let lhs = self.arith_expr()?;
        let op = match self.peek() {
            Tok::EqEq | Tok::Assign => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return Err(self.err("expected a comparison operator".into())),
        };
        self.bump();
        let rhs = self.arith_expr()?;
        Ok(Predicate { op, lhs, rhs, pos })
    }

    fn map_list(&mut self) -> Result<Vec<Mapping>, ParseError> {
        let mut maps = Vec::new();
        loop {
            let pos = self.pos();
            let var = match self.peek().clone() {
                Tok::Var(v) => {
                    self.bump();
                    v
                }
                _ => return Err(self.err("expected a variable on the left of '='".into())),
            };
            self.expect(Tok::Assign, "'='")?;
            let expr = self.arith_expr()?;
            maps.push(Mapping { var, expr, pos });
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        Ok(maps)
    }

    fn arith_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.atom_expr()?;
        while *self.peek() == Tok::Star {
            self.bump();
            let rhs = self.atom_expr()?;
            lhs = Expr::Binary(ArithOp::Mul, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn atom_expr(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Var(v) => {
                self.bump();
                Ok(Expr::Var(v, pos))
            }
            Tok::Ident(s) => {
                self.bump();
                Ok(Expr::Const(AttrValue::Str(s)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Const(AttrValue::Str(s)))
            }
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Const(AttrValue::Int(i)))
            }
            Tok::Float(f) => {
                self.bump();
                Ok(Expr::Const(AttrValue::Float(f)))
            }
            Tok::True => {
                self.bump();
                Ok(Expr::Const(AttrValue::Bool(true)))
            }
            Tok::False => {
                self.bump();
                Ok(Expr::Const(AttrValue::Bool(false)))
            }
            Tok::Minus => {
                self.bump();
                let inner = self.atom_expr()?;
                Ok(Expr::Binary(
                    ArithOp::Sub,
                    Box::new(Expr::Const(AttrValue::Int(0))),
                    Box::new(inner),
                ))
            }
            Tok::LParen => {
                self.bump();
                let e = self.arith_expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            _ => Err(self.err("expected an expression".into())),
        }
    }
}

/// Structural checks that are invariants of the pattern AST itself.
fn check_shape(rule: &Rule) -> Result<(), ParseError> {
    // Not children are atoms or Select-wrapped atoms only.
    fn not_child_ok(inner: &Pattern) -> bool {
        match inner {
            Pattern::Sde(_) => true,
            Pattern::Select(_, c) => matches!(c.as_ref(), Pattern::Sde(_)),
            _ => false,
        }
    }
    fn check_not(p: &Pattern) -> Result<(), ParseError> {
        match p {
            Pattern::Not(inner) => {
                if !not_child_ok(inner) {
                    return Err(ParseError::InvalidPattern {
                        pos: first_pos(inner),
                        message: "negation applies to a single (optionally selected) atom".into(),
                    });
                }
                Ok(())
            }
            Pattern::Seq(cs) | Pattern::Or(cs) | Pattern::And(cs) => {
                cs.iter().try_for_each(check_not)
            }
            Pattern::Star(c) | Pattern::Select(_, c) | Pattern::Emit(_, c)
            | Pattern::Window(_, c) => check_not(c),
            Pattern::Sde(_) => Ok(()),
        }
    }
    // Star children contain no Emit node.
    fn check_star(p: &Pattern) -> Result<(), ParseError> {
        match p {
            Pattern::Star(c) => {
                if c.contains_emit() {
                    return Err(ParseError::InvalidPattern {
                        pos: first_pos(c),
                        message: "iteration body may not contain emit mappings".into(),
                    });
                }
                check_star(c)
            }
            Pattern::Seq(cs) | Pattern::Or(cs) | Pattern::And(cs) => {
                cs.iter().try_for_each(check_star)
            }
            Pattern::Not(c) | Pattern::Select(_, c) | Pattern::Emit(_, c)
            | Pattern::Window(_, c) => check_star(c),
            Pattern::Sde(_) => Ok(()),
        }
    }
    check_not(&rule.body)?;
    check_star(&rule.body)?;

    // Head arguments: the time argument (last) must be a variable.
    match rule.head_args.last() {
        Some(Expr::Var(..)) => {}
        _ => {
            return Err(ParseError::InvalidPattern {
                pos: rule.pos,
                message: "the last head argument must be a time variable".into(),
            })
        }
    }
    if !(rule.rule_prob > 0.0 && rule.rule_prob <= 1.0 + PROB_EPS) {
        return Err(ParseError::InvalidPattern {
            pos: rule.pos,
            message: format!("rule probability {} must be in (0,1]", rule.rule_prob),
        });
    }
    let total: f64 = rule.rule_prob + rule.alt_heads.iter().map(|a| a.prob).sum::<f64>();
    if total > 1.0 + PROB_EPS {
        return Err(ParseError::ProbSumExceeded {
            sum: format!("{total}"),
            pos: rule.pos,
        });
    }
    for alt in &rule.alt_heads {
        if !(alt.prob > 0.0 && alt.prob <= 1.0 + PROB_EPS) {
            return Err(ParseError::InvalidPattern {
                pos: alt.pos,
                message: format!("head probability {} must be in (0,1]", alt.prob),
            });
        }
    }
    Ok(())
}

pub(super) fn first_pos(p: &Pattern) -> Pos {
    match p {
        Pattern::Sde(a) => a.pos,
        Pattern::Seq(cs) | Pattern::Or(cs) | Pattern::And(cs) => {
            cs.first().map(first_pos).unwrap_or_default()
        }
        Pattern::Star(c) | Pattern::Not(c) => first_pos(c),
        Pattern::Select(_, c) | Pattern::Emit(_, c) | Pattern::Window(_, c) => first_pos(c),
    }
}

/// Parses a rule set from DSL source: lex, parse, canonicalize, validate
/// bindings and hierarchy, assign atom uids.
pub fn parse_rules(text: &str) -> Result<RuleSet, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, idx: 0 };
    let mut rules = Vec::new();
    while *p.peek() != Tok::Eof {
        rules.push(p.rule()?);
    }

    let mut warnings = Vec::new();
    for rule in rules.iter_mut() {
        rule.body = desugar(std::mem::replace(&mut rule.body, Pattern::Seq(Vec::new())));
        let mut next = 0u32;
        assign_uids(&mut rule.body, &mut next);
        check_shape(rule)?;
        if rule.rule_prob < 1.0 - PROB_EPS && !rule.alt_heads.is_empty() {
            warnings.push(Diagnostic {
                severity: Severity::Warning,
                code: "PROB_PREFIX_WITH_DISJUNCTION",
                message: format!(
                    "rule {} combines a probability prefix with alternative heads; \
                     the prefix composes multiplicatively with each head",
                    rule.head_type
                ),
                pos: rule.pos,
            });
        }
    }

    // Duplicate-head detection: identical (head, body) pairs look like a
    // malformed annotated disjunction and must use ';;'.
    let mut seen: BTreeMap<(String, String), Pos> = BTreeMap::new();
    for rule in &rules {
        let key = (rule.head_type.clone(), pretty::pattern_to_string(&rule.body));
        if seen.contains_key(&key) {
            return Err(ParseError::DuplicateHead {
                head: rule.head_type.clone(),
                pos: rule.pos,
            });
        }
        seen.insert(key, rule.pos);
    }

    // Dependency graph and cycle detection over CE types.
    let heads: BTreeSet<String> = rules.iter().map(|r| r.head_type.clone()).collect();
    let mut dependencies: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for rule in &rules {
        let entry = dependencies.entry(rule.head_type.clone()).or_default();
        for atom in rule.body.atoms() {
            entry.insert(atom.event_type.clone());
        }
    }
    // DFS over CE-to-CE edges.
    fn visit(
        node: &str,
        deps: &BTreeMap<String, BTreeSet<String>>,
        heads: &BTreeSet<String>,
        state: &mut BTreeMap<String, u8>,
        trail: &mut Vec<String>,
    ) -> Result<(), ParseError> {
        match state.get(node).copied().unwrap_or(0) {
            1 => {
                let start = trail.iter().position(|t| t == node).unwrap_or(0);
                let mut cycle = trail[start..].join(" -> ");
                cycle.push_str(" -> ");
                cycle.push_str(node);
                return Err(ParseError::CyclicHierarchy { cycle });
            }
            2 => return Ok(()),
            _ => {}
        }
        state.insert(node.to_string(), 1);
        trail.push(node.to_string());
        if let Some(refs) = deps.get(node) {
            for r in refs {
                if heads.contains(r) {
                    visit(r, deps, heads, state, trail)?;
                }
            }
        }
        trail.pop();
        state.insert(node.to_string(), 2);
        Ok(())
    }
    let mut state = BTreeMap::new();
    for h in &heads {
        visit(h, &dependencies, &heads, &mut state, &mut Vec::new())?;
    }

    // binding validation runs after the structural graph checks so that a
    // recursive definition reports the cycle, not a downstream unbound name
    for rule in &rules {
        if let Some(d) = validate_bindings(rule)
            .into_iter()
            .find(|d| d.severity == Severity::Error)
        {
            return Err(ParseError::UnboundVariable {
                var: d
                    .message
                    .split_whitespace()
                    .nth(1)
                    .unwrap_or("?")
                    .to_string(),
                pos: d.pos,
            });
        }
    }

    Ok(RuleSet {
        rules,
        dependencies,
        warnings,
    })
}
