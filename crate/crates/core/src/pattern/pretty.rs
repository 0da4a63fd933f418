//! Canonical text rendering of rules and patterns. Parsing the rendered text
//! reproduces the same canonical AST (round-trip fixed point); the renderer
//! is also used for plan dumps and duplicate-body detection.

use std::fmt::Write;

use super::*;
use crate::event::AttrValue;

fn fmt_const(v: &AttrValue) -> String {
    match v {
        AttrValue::Str(s) => {
            let plain = !s.is_empty()
                && s.chars().next().unwrap().is_lowercase()
                && s.chars().all(|c| c.is_alphanumeric() || c == '_')
                && !matches!(s.as_str(), "and" | "not" | "where" | "emit" | "within" | "true" | "false" | "next");
            if plain {
                s.clone()
            } else {
                format!("\"{s}\"")
            }
        }
        AttrValue::Int(i) => i.to_string(),
        AttrValue::Float(f) => {
            let s = f.to_string();
            if s.contains('.') {
                s
            } else {
                format!("{s}.0")
            }
        }
        AttrValue::Bool(b) => b.to_string(),
    }
}

fn fmt_term(t: &Term) -> String {
    match t {
        Term::Var(v) => v.clone(),
        Term::Wildcard => "_".into(),
        Term::Const(c) => fmt_const(c),
    }
}

pub fn expr_to_string(e: &Expr) -> String {
    fn prec(e: &Expr) -> u8 {
        match e {
            Expr::Binary(ArithOp::Add | ArithOp::Sub, ..) => 1,
            Expr::Binary(ArithOp::Mul, ..) => 2,
            _ => 3,
        }
    }
    fn render(e: &Expr, parent: u8) -> String {
        let mine = prec(e);
        let s = match e {
            Expr::Var(v, _) => v.clone(),
            Expr::Const(c) => fmt_const(c),
            Expr::Binary(op, l, r) => {
                let sym = match op {
                    ArithOp::Add => "+",
                    ArithOp::Sub => "-",
                    ArithOp::Mul => "*",
                };
                format!("{} {} {}", render(l, mine), sym, render(r, mine + 1))
            }
        };
        if mine < parent {
            format!("({s})")
        } else {
            s
        }
    }
    render(e, 0)
}

fn fmt_atom(a: &Atom) -> String {
    format!(
        "{}({})",
        a.event_type,
        a.terms.iter().map(fmt_term).collect::<Vec<_>>().join(", ")
    )
}

fn fmt_preds(preds: &[Predicate]) -> String {
    preds
        .iter()
        .map(|p| {
            format!(
                "{} {} {}",
                expr_to_string(&p.lhs),
                p.op.symbol(),
                expr_to_string(&p.rhs)
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

// Precedence levels: Or(1) < Seq(2) < And(3) < postfix(4) < atom(5).
fn prec(p: &Pattern) -> u8 {
    match p {
        Pattern::Or(_) => 1,
        Pattern::Seq(_) => 2,
        Pattern::And(_) => 3,
        Pattern::Star(_) | Pattern::Select(..) | Pattern::Emit(..) | Pattern::Window(..) => 4,
        Pattern::Not(_) => 4,
        Pattern::Sde(_) => 5,
    }
}

fn render(p: &Pattern, parent: u8) -> String {
    let mine = prec(p);
    let s = match p {
        Pattern::Sde(a) => fmt_atom(a),
        Pattern::Seq(cs) => cs
            .iter()
            .map(|c| render(c, mine + 1))
            .collect::<Vec<_>>()
            .join("; "),
        Pattern::Or(cs) => cs
            .iter()
            .map(|c| render(c, mine + 1))
            .collect::<Vec<_>>()
            .join(" | "),
        Pattern::And(cs) => cs
            .iter()
            .map(|c| render(c, mine + 1))
            .collect::<Vec<_>>()
            .join(" and "),
        Pattern::Star(c) => format!("{}*", render(c, 5)),
        Pattern::Not(c) => format!("not {}", render(c, 5)),
        Pattern::Select(preds, c) => {
            format!("{} where {{{}}}", render(c, 5), fmt_preds(preds))
        }
        Pattern::Emit(maps, c) => {
            let ms = maps
                .iter()
                .map(|m| format!("{} = {}", m.var, expr_to_string(&m.expr)))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{} emit {{{ms}}}", render(c, 5))
        }
        Pattern::Window(w, c) => format!("{} within [{}, {}]", render(c, 5), w.lo, w.hi),
    };
    if mine < parent {
        format!("({s})")
    } else {
        s
    }
}

pub fn pattern_to_string(p: &Pattern) -> String {
    render(p, 0)
}

pub fn rule_to_string(r: &Rule) -> String {
    let mut out = String::new();
    if (r.rule_prob - 1.0).abs() > f64::EPSILON {
        let _ = write!(out, "{}::", r.rule_prob);
    }
    let args = r
        .head_args
        .iter()
        .map(expr_to_string)
        .collect::<Vec<_>>()
        .join(", ");
    let _ = write!(out, "{}({}) ::= {}", r.head_type, args, render(&r.body, 0));
    for alt in &r.alt_heads {
        let args = alt
            .args
            .iter()
            .map(expr_to_string)
            .collect::<Vec<_>>()
            .join(", ");
        let _ = write!(out, " ;; {}::{}({})", alt.prob, r.head_type, args);
    }
    out
}

pub fn ruleset_to_string(rs: &RuleSet) -> String {
    rs.rules
        .iter()
        .map(rule_to_string)
        .collect::<Vec<_>>()
        .join("\n")
}
