//! Deterministic human-readable plan rendering for golden-file tests and
//! `validate --dump-plan`.

use std::fmt::Write;

use super::*;
use crate::pattern::{expr_to_string, Term};

fn fmt_terms(atom: &Atom) -> String {
    atom.terms
        .iter()
        .map(|t| match t {
            Term::Var(v) => v.clone(),
            Term::Wildcard => "_".into(),
            Term::Const(c) => c.to_string(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn fmt_preds(preds: &[Predicate]) -> String {
    if preds.is_empty() {
        return "[]".into();
    }
    let body = preds
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
        .join(", ");
    format!("[{body}]")
}

pub fn dump_plan(plan: &NfaPlan, hierarchy: &HierarchyPlan) -> String {
    let mut out = String::new();
    let level = hierarchy
        .level
        .get(&plan.produce.ce_type)
        .copied()
        .unwrap_or(0);
    let _ = writeln!(
        out,
        "plan rule={} branch={} head={} level={}",
        plan.rule_idx, plan.branch_idx, plan.produce.ce_type, level
    );
    let _ = writeln!(out, "  states: {}", plan.states.len());
    for (i, st) in plan.states.iter().enumerate() {
        match st {
            State::Start => {
                let _ = writeln!(out, "    {i}: start early={}", fmt_preds(&plan.start_predicates));
            }
            State::Accept => {
                let _ = writeln!(out, "    {i}: accept");
            }
            State::Atom(a) => {
                let joint = match a.joint {
                    Joint::Strict => ">",
                    Joint::TieOk => ">=",
                };
                let kleene = if plan.kleene_states.contains(&i) {
                    " kleene"
                } else {
                    ""
                };
                let strict = match plan.strict_after[i] {
                    Some(j) => format!(" strict_after={j}"),
                    None => String::new(),
                };
                let _ = writeln!(
                    out,
                    "    {i}: {}({}) joint={} early={}{}{}",
                    a.atom.event_type,
                    fmt_terms(&a.atom),
                    joint,
                    fmt_preds(&a.early),
                    kleene,
                    strict
                );
            }
        }
    }
    let _ = writeln!(out, "  transitions:");
    for t in &plan.transitions {
        let kind = match t.kind {
            TransitionKind::Advance => "advance",
            TransitionKind::KleeneLoop => "loop",
        };
        let _ = writeln!(
            out,
            "    {} -> {} on {} {} early={}",
            t.from,
            t.to,
            t.event_type,
            kind,
            fmt_preds(&t.early)
        );
    }
    if !plan.negation_checks.is_empty() {
        let _ = writeln!(out, "  negations:");
        for n in &plan.negation_checks {
            let form = match &n.form {
                NegForm::BoundTime => "bound-time".to_string(),
                NegForm::Gap {
                    after_element,
                    before_element,
                } => format!(
                    "gap after={} before={}",
                    after_element.map_or("window".into(), |e| e.to_string()),
                    before_element.map_or("window".into(), |e| e.to_string())
                ),
            };
            let _ = writeln!(
                out,
                "    not {}({}) {} preds={}",
                n.atom.event_type,
                fmt_terms(&n.atom),
                form,
                fmt_preds(&n.preds)
            );
        }
    }
    let _ = writeln!(out, "  late: {}", fmt_preds(&plan.late_predicates));
    let window = match plan.window {
        None => "none".to_string(),
        Some(WindowSpec::Relative { span }) => format!("relative [0, {span}]"),
        Some(WindowSpec::Absolute { lo, hi }) => format!("absolute [{lo}, {hi}]"),
    };
    let _ = writeln!(out, "  window: {window}");
    for (i, h) in plan.produce.heads.iter().enumerate() {
        let args = h
            .attr_exprs
            .iter()
            .map(expr_to_string)
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(
            out,
            "  head[{i}]: {}::{}({}) @ {}",
            h.prob,
            plan.produce.ce_type,
            args,
            expr_to_string(&plan.produce.ts_expr)
        );
    }
    if !plan.produce.mappings.is_empty() {
        let maps = plan
            .produce
            .mappings
            .iter()
            .map(|(v, e)| format!("{v} = {}", expr_to_string(e)))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(out, "  emit: {{{maps}}}");
    }
    out
}

/// Renders every plan of the hierarchy, in plan order.
pub fn dump_hierarchy(h: &HierarchyPlan) -> String {
    let mut out = String::new();
    for p in &h.plans {
        out.push_str(&dump_plan(p, h));
    }
    for (ty, plans) in &h.groups {
        if plans.len() > 1 {
            let ids = plans
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(out, "group {ty}: plans [{ids}]");
        }
    }
    out
}
