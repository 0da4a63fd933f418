//! Direct recursive evaluation of the pattern algebra over a whole crisp
//! stream. This is the semantic reference: the automaton runtime must agree
//! with it on crisp streams, and the possible-worlds oracle evaluates it on
//! every history. It shares nothing with the plan compiler or the engine
//! beyond the AST itself.

use std::collections::BTreeMap;

use crate::event::{AttrValue, EventId, Timestamp};
use crate::pattern::{
    Atom, CmpOp, Expr, Pattern, Predicate, Rule, Term, WindowBounds,
};

/// A crisp event: one concrete alternative of a probabilistic event, or a
/// produced CE treated as an event at a higher hierarchy level.
#[derive(Debug, Clone, PartialEq)]
pub struct CrispEvent {
    pub id: EventId,
    /// Alternative index this crisp view was taken from.
    pub alt: usize,
    pub event_type: String,
    pub attrs: Vec<(String, AttrValue)>,
    pub ts: Timestamp,
}

/// One match of a rule body: the atom-uid-labeled selection plus the rigid
/// variable bindings. Selection entries are sorted by (uid, event id).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct NaiveMatch {
    pub selection: Vec<(u32, EventId, usize)>,
    pub bindings: Vec<(String, AttrValue)>,
}

type Bindings = BTreeMap<String, AttrValue>;

#[derive(Debug, Clone)]
struct Sub {
    /// (atom uid, event index into the stream slice)
    sel: Vec<(u32, usize)>,
    bindings: Bindings,
    start_ts: Timestamp,
    end_ts: Timestamp,
    pending: Vec<Predicate>,
}

/// Arithmetic evaluation; Int/Float form one numeric family.
pub fn eval_expr(e: &Expr, env: &BTreeMap<String, AttrValue>) -> Option<AttrValue> {
    match e {
        Expr::Var(v, _) => env.get(v).cloned(),
        Expr::Const(c) => Some(c.clone()),
        Expr::Binary(op, l, r) => {
            let l = eval_expr(l, env)?;
            let r = eval_expr(r, env)?;
            use crate::pattern::ArithOp::*;
            use AttrValue::*;
            match (l, r) {
                (Int(a), Int(b)) => Some(Int(match op {
                    Add => a.checked_add(b)?,
                    Sub => a.checked_sub(b)?,
                    Mul => a.checked_mul(b)?,
                })),
                (Float(a), Float(b)) => Some(Float(match op {
                    Add => a + b,
                    Sub => a - b,
                    Mul => a * b,
                })),
                (Int(a), Float(b)) => Some(Float(match op {
                    Add => a as f64 + b,
                    Sub => a as f64 - b,
                    Mul => a as f64 * b,
                })),
                (Float(a), Int(b)) => Some(Float(match op {
                    Add => a + b as f64,
                    Sub => a - b as f64,
                    Mul => a * b as f64,
                })),
                _ => None,
            }
        }
    }
}

/// Predicate truth under an environment. Ill-typed comparisons and missing
/// values are false (the match is filtered, never accepted blindly).
pub fn eval_predicate(p: &Predicate, env: &BTreeMap<String, AttrValue>) -> bool {
    let (Some(l), Some(r)) = (eval_expr(&p.lhs, env), eval_expr(&p.rhs, env)) else {
        return false;
    };
    let Some(ord) = l.compare(&r) else { return false };
    match p.op {
        CmpOp::Eq => ord == std::cmp::Ordering::Equal,
        CmpOp::Ne => ord != std::cmp::Ordering::Equal,
        CmpOp::Lt => ord == std::cmp::Ordering::Less,
        CmpOp::Le => ord != std::cmp::Ordering::Greater,
        CmpOp::Gt => ord == std::cmp::Ordering::Greater,
        CmpOp::Ge => ord != std::cmp::Ordering::Less,
    }
}

/// A predicate is evaluable once all its variables are bound.
fn try_predicates(pending: &mut Vec<Predicate>, bindings: &Bindings) -> bool {
    let mut keep = Vec::new();
    for p in pending.drain(..) {
        let ready = p.variables().iter().all(|(v, _)| bindings.contains_key(v));
        if ready {
            if !eval_predicate(&p, bindings) {
                return false;
            }
        } else {
            keep.push(p);
        }
    }
    *pending = keep;
    true
}

/// Unifies an atom against one crisp event; extends the bindings.
pub fn unify_atom(atom: &Atom, ev: &CrispEvent, bindings: &Bindings) -> Option<Bindings> {
    if atom.event_type != ev.event_type || atom.terms.len() != ev.attrs.len() + 1 {
        return None;
    }
    let mut out = bindings.clone();
    for (term, (_, value)) in atom.attr_terms().iter().zip(ev.attrs.iter()) {
        match term {
            Term::Wildcard => {}
            Term::Const(c) => {
                if c != value {
                    return None;
                }
            }
            Term::Var(v) => match out.get(v) {
                Some(bound) => {
                    if bound != value {
                        return None;
                    }
                }
                None => {
                    out.insert(v.clone(), value.clone());
                }
            },
        }
    }
    let ts_val = AttrValue::Int(ev.ts.0 as i64);
    match atom.time_term() {
        Term::Wildcard => {}
        Term::Const(c) => {
            if c != &ts_val {
                return None;
            }
        }
        Term::Var(v) => match out.get(v) {
            Some(bound) => {
                if bound != &ts_val {
                    return None;
                }
            }
            None => {
                out.insert(v.clone(), ts_val);
            }
        },
    }
    Some(out)
}

/// Non-binding candidate matcher for negated atoms: every named variable
/// must already be bound and equal (an unbound variable makes the check
/// inapplicable rather than a capture).
fn neg_atom_matches(atom: &Atom, ev: &CrispEvent, bindings: &Bindings) -> bool {
    if atom.event_type != ev.event_type || atom.terms.len() != ev.attrs.len() + 1 {
        return false;
    }
    for (term, (_, value)) in atom.attr_terms().iter().zip(ev.attrs.iter()) {
        match term {
            Term::Wildcard => {}
            Term::Const(c) => {
                if c != value {
                    return false;
                }
            }
            Term::Var(v) => match bindings.get(v) {
                Some(bound) => {
                    if bound != value {
                        return false;
                    }
                }
                None => return false,
            },
        }
    }
    true
}

/// True if some event in `events[range]` (by timestamp predicate `in_range`)
/// matches the negated atom under the bindings and its scoped predicates
/// hold. Used for crisp negation rejection.
fn violates_negation(
    atom: &Atom,
    preds: &[Predicate],
    bindings: &Bindings,
    events: &[CrispEvent],
    in_range: impl Fn(Timestamp) -> bool,
) -> bool {
    // Scoped predicates reference bound variables only; if any fails the
    // negation does not apply.
    if !preds.iter().all(|p| eval_predicate(p, bindings)) {
        return false;
    }
    events
        .iter()
        .any(|ev| in_range(ev.ts) && neg_atom_matches(atom, ev, bindings))
}

struct EvalCtx<'a> {
    events: &'a [CrispEvent],
    window: Option<WindowBounds>,
}

/// Evaluates a (negation-free at this level) pattern node into submatches.
/// `Not` nodes are handled by the Seq/And containers.
fn eval(p: &Pattern, ctx: &EvalCtx) -> Vec<Sub> {
    match p {
        Pattern::Sde(atom) => {
            let mut out = Vec::new();
            for (i, ev) in ctx.events.iter().enumerate() {
                if let Some(b) = unify_atom(atom, ev, &BTreeMap::new()) {
                    out.push(Sub {
                        sel: vec![(atom.uid, i)],
                        bindings: b,
                        start_ts: ev.ts,
                        end_ts: ev.ts,
                        pending: Vec::new(),
                    });
                }
            }
            out
        }
        Pattern::Or(cs) => cs.iter().flat_map(|c| eval(c, ctx)).collect(),
        Pattern::Select(preds, c) => {
            let mut out = Vec::new();
            for mut sub in eval(c, ctx) {
                sub.pending.extend(preds.iter().cloned());
                if try_predicates(&mut sub.pending, &sub.bindings) {
                    out.push(sub);
                }
            }
            out
        }
        Pattern::Emit(_, c) => eval(c, ctx),
        Pattern::Window(w, c) => {
            // windows wrap whole bodies in compilable rules; treated here as
            // a span/absolute filter for robustness
            let subs = eval(c, ctx);
            subs.into_iter()
                .filter(|s| window_ok(*w, s.start_ts, s.end_ts))
                .collect()
        }
        Pattern::Seq(cs) => eval_seq(cs, ctx),
        Pattern::And(cs) => eval_and(cs, ctx),
        Pattern::Star(c) => {
            let units = eval(c, ctx);
            let mut out = Vec::new();
            // all nonempty chains of strictly ordered, binding-consistent units
            fn extend(
                units: &[Sub],
                cur: &Sub,
                out: &mut Vec<Sub>,
            ) {
                for u in units {
                    if u.start_ts <= cur.end_ts {
                        continue;
                    }
                    if let Some(merged) = merge(cur, u, false) {
                        out.push(merged.clone());
                        extend(units, &merged, out);
                    }
                }
            }
            for u in &units {
                out.push(u.clone());
                extend(&units, u, &mut out);
            }
            out
        }
        Pattern::Not(_) => Vec::new(),
    }
}

fn window_ok(w: WindowBounds, start: Timestamp, end: Timestamp) -> bool {
    if w.lo == 0 {
        end.0 - start.0 <= w.hi
    } else {
        start.0 >= w.lo && end.0 <= w.hi
    }
}

/// Merges two submatches: consistent bindings, disjoint selections, pending
/// predicates re-tried. `ordered` selections stay sorted by event index per
/// uid for deterministic identity.
fn merge(a: &Sub, b: &Sub, require_disjoint: bool) -> Option<Sub> {
    let mut bindings = a.bindings.clone();
    for (k, v) in &b.bindings {
        match bindings.get(k) {
            Some(prev) => {
                if prev != v {
                    return None;
                }
            }
            None => {
                bindings.insert(k.clone(), v.clone());
            }
        }
    }
    if require_disjoint {
        for (_, i) in &a.sel {
            if b.sel.iter().any(|(_, j)| j == i) {
                return None;
            }
        }
    }
    let mut sel = a.sel.clone();
    sel.extend(b.sel.iter().copied());
    let mut pending = a.pending.clone();
    pending.extend(b.pending.iter().cloned());
    let mut sub = Sub {
        sel,
        bindings,
        start_ts: a.start_ts.min(b.start_ts),
        end_ts: a.end_ts.max(b.end_ts),
        pending,
    };
    if !try_predicates(&mut sub.pending, &sub.bindings) {
        return None;
    }
    Some(sub)
}

/// Sequence evaluation with gap and bound-time negation between elements.
fn eval_seq(children: &[Pattern], ctx: &EvalCtx) -> Vec<Sub> {
    // split children into positive elements and negation slots
    enum Slot<'a> {
        Positive(&'a Pattern),
        Negation(&'a Atom, Vec<Predicate>),
    }
    let mut slots = Vec::new();
    for c in children {
        match c {
            Pattern::Not(inner) => {
                let (atom, preds) = match inner.as_ref() {
                    Pattern::Sde(a) => (a, Vec::new()),
                    Pattern::Select(ps, i) => match i.as_ref() {
                        Pattern::Sde(a) => (a, ps.clone()),
                        _ => return Vec::new(),
                    },
                    _ => return Vec::new(),
                };
                slots.push(Slot::Negation(atom, preds));
            }
            other => slots.push(Slot::Positive(other)),
        }
    }

    // combine positive elements left to right, remembering the per-element
    // (start, end) spans for negation intervals
    #[derive(Clone)]
    struct Acc {
        sub: Sub,
        spans: Vec<(Timestamp, Timestamp)>,
    }
    let mut accs: Vec<Acc> = vec![Acc {
        sub: Sub {
            sel: Vec::new(),
            bindings: BTreeMap::new(),
            // neutral span: min() and max() pick up the first real element
            start_ts: Timestamp(u64::MAX),
            end_ts: Timestamp(0),
            pending: Vec::new(),
        },
        spans: Vec::new(),
    }];
    for slot in &slots {
        if let Slot::Positive(p) = slot {
            let subs = eval(p, ctx);
            let mut next = Vec::new();
            for acc in &accs {
                for s in &subs {
                    if !acc.spans.is_empty() && s.start_ts <= acc.sub.end_ts {
                        continue;
                    }
                    if let Some(merged) = merge(&acc.sub, s, false) {
                        let mut spans = acc.spans.clone();
                        spans.push((s.start_ts, s.end_ts));
                        next.push(Acc { sub: merged, spans });
                    }
                }
            }
            accs = next;
        }
    }
    if accs.is_empty() {
        return Vec::new();
    }

    // apply negation slots now that bindings and spans are known
    let mut out = Vec::new();
    'acc: for acc in accs {
        let mut pos_idx = 0usize;
        for slot in &slots {
            match slot {
                Slot::Positive(_) => pos_idx += 1,
                Slot::Negation(atom, preds) => {
                    let bound_time = !matches!(atom.time_term(), Term::Wildcard);
                    if bound_time {
                        // absence at the bound instant
                        let env = &acc.sub.bindings;
                        let t = match atom.time_term() {
                            Term::Var(v) => match env.get(v) {
                                Some(AttrValue::Int(t)) if *t >= 0 => Timestamp(*t as u64),
                                _ => continue 'acc,
                            },
                            Term::Const(AttrValue::Int(t)) if *t >= 0 => Timestamp(*t as u64),
                            _ => continue 'acc,
                        };
                        if violates_negation(atom, preds, env, ctx.events, |ts| ts == t) {
                            continue 'acc;
                        }
                    } else {
                        // gap: strictly between adjacent positive elements,
                        // window bounds at the ends
                        let after = if pos_idx == 0 {
                            match ctx.window {
                                Some(w) if w.lo > 0 => Some(Timestamp(w.lo)),
                                _ => None,
                            }
                        } else {
                            Some(acc.spans[pos_idx - 1].1)
                        };
                        let before = if pos_idx == acc.spans.len() {
                            ctx.window.map(|w| {
                                if w.lo == 0 {
                                    Timestamp(acc.spans[0].0 .0 + w.hi)
                                } else {
                                    Timestamp(w.hi)
                                }
                            })
                        } else {
                            Some(acc.spans[pos_idx].0)
                        };
                        let lead = pos_idx == 0;
                        let trail = pos_idx == acc.spans.len();
                        let (Some(lo), Some(hi)) = (after, before) else {
                            continue 'acc; // unbounded gap: not compilable
                        };
                        let in_range = |ts: Timestamp| {
                            let lo_ok = if lead { ts >= lo } else { ts > lo };
                            let hi_ok = if trail { ts <= hi } else { ts < hi };
                            lo_ok && hi_ok
                        };
                        if violates_negation(atom, preds, &acc.sub.bindings, ctx.events, in_range)
                        {
                            continue 'acc;
                        }
                    }
                }
            }
        }
        out.push(acc.sub);
    }
    out
}

/// Co-occurrence: every injective assignment of pairwise event-disjoint
/// child submatches, any temporal arrangement. Negated children are
/// bound-time checks.
fn eval_and(children: &[Pattern], ctx: &EvalCtx) -> Vec<Sub> {
    let mut positives = Vec::new();
    let mut negations: Vec<(&Atom, Vec<Predicate>)> = Vec::new();
    for c in children {
        match c {
            Pattern::Not(inner) => match inner.as_ref() {
                Pattern::Sde(a) => negations.push((a, Vec::new())),
                Pattern::Select(ps, i) => match i.as_ref() {
                    Pattern::Sde(a) => negations.push((a, ps.clone())),
                    _ => return Vec::new(),
                },
                _ => return Vec::new(),
            },
            other => positives.push(other),
        }
    }
    let mut accs = vec![Sub {
        sel: Vec::new(),
        bindings: BTreeMap::new(),
        start_ts: Timestamp(u64::MAX),
        end_ts: Timestamp(0),
        pending: Vec::new(),
    }];
    for p in positives {
        let subs = eval(p, ctx);
        let mut next = Vec::new();
        for acc in &accs {
            for s in &subs {
                if let Some(mut merged) = merge(acc, s, true) {
                    merged.start_ts = acc.start_ts.min(s.start_ts);
                    next.push(merged);
                }
            }
        }
        accs = next;
    }
    accs.retain(|acc| {
        negations.iter().all(|(atom, preds)| {
            let t = match atom.time_term() {
                Term::Var(v) => match acc.bindings.get(v) {
                    Some(AttrValue::Int(t)) if *t >= 0 => Timestamp(*t as u64),
                    _ => return false,
                },
                Term::Const(AttrValue::Int(t)) if *t >= 0 => Timestamp(*t as u64),
                _ => return false, // gap negation undefined here
            };
            !violates_negation(atom, preds, &acc.bindings, ctx.events, |ts| ts == t)
        })
    });
    accs
}

/// A produced instance of the rule head for one match and one head choice.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct NaiveInstance {
    pub ce_type: String,
    pub attrs: Vec<(String, AttrValue)>,
    pub ts: Timestamp,
    pub head_idx: usize,
}

/// Evaluates one rule over a crisp stream: all matches of the body, with the
/// derived emit environment prepared for head production.
pub fn rule_matches(rule: &Rule, events: &[CrispEvent]) -> Vec<NaiveMatch> {
    // peel top-level select/emit/window like the compiler does
    let mut preds = Vec::new();
    let mut window = None;
    let mut node = &rule.body;
    loop {
        match node {
            Pattern::Select(ps, c) => {
                preds.extend(ps.iter().cloned());
                node = c;
            }
            Pattern::Emit(_, c) => node = c,
            Pattern::Window(w, c) => {
                window = Some(*w);
                node = c;
            }
            _ => break,
        }
    }
    let ctx = EvalCtx { events, window };
    let mut subs = eval_seq(std::slice::from_ref(node), &ctx);
    // eval_seq wraps a single element; unwrap the artificial nesting effects
    if let Some(w) = window {
        subs.retain(|s| window_ok(w, s.start_ts, s.end_ts));
    }

    let mappings = rule.body.mappings();
    let mut out = Vec::new();
    'subs: for mut sub in subs {
        sub.pending.extend(preds.iter().cloned());
        if !try_predicates(&mut sub.pending, &sub.bindings) {
            continue;
        }
        // derived variables
        let mut env = sub.bindings.clone();
        for m in &mappings {
            match eval_expr(&m.expr, &env) {
                Some(v) => {
                    env.insert(m.var.clone(), v);
                }
                None => continue 'subs,
            }
        }
        // any still-pending predicates reference emit variables
        let mut pending = sub.pending.clone();
        if !try_predicates(&mut pending, &env) || !pending.is_empty() {
            continue;
        }
        let mut selection: Vec<(u32, EventId, usize)> = sub
            .sel
            .iter()
            .map(|(uid, i)| (*uid, events[*i].id, events[*i].alt))
            .collect();
        selection.sort_unstable();
        out.push(NaiveMatch {
            selection,
            bindings: env.into_iter().collect(),
        });
    }
    out.sort();
    out.dedup();
    out
}

/// Produced head instances for a match (one per head of the rule).
pub fn instances_of(rule: &Rule, m: &NaiveMatch) -> Option<Vec<NaiveInstance>> {
    let env: BTreeMap<String, AttrValue> = m.bindings.iter().cloned().collect();
    let ts = match rule.head_args.last().unwrap() {
        Expr::Var(v, _) => match env.get(v) {
            Some(AttrValue::Int(t)) if *t >= 0 => Timestamp(*t as u64),
            _ => return None,
        },
        _ => return None,
    };
    let mut heads: Vec<Vec<Expr>> = vec![rule.head_args[..rule.head_args.len() - 1].to_vec()];
    for alt in &rule.alt_heads {
        heads.push(alt.args[..alt.args.len() - 1].to_vec());
    }
    let mut out = Vec::new();
    for (head_idx, exprs) in heads.iter().enumerate() {
        let mut attrs = Vec::new();
        for (i, e) in exprs.iter().enumerate() {
            attrs.push((format!("a{i}"), eval_expr(e, &env)?));
        }
        out.push(NaiveInstance {
            ce_type: rule.head_type.clone(),
            attrs,
            ts,
            head_idx,
        });
    }
    Some(out)
}
