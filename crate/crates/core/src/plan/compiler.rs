//! Rule-set compilation: Or-distribution, co-occurrence interleaving,
//! linearization into positive states plus negation checks, predicate
//! placement, and hierarchy leveling.

use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::pattern::{
    Atom, Expr, Mapping, Pattern, Predicate, Rule, RuleSet, Term, WindowBounds,
};

const MAX_AND_CHILDREN: usize = 4;
const MAX_AND_BRANCHES: usize = 24;

/// Distributes disjunction out of a pattern, yielding Or-free disjuncts.
/// Disjunction under iteration has no finite branch expansion and is
/// rejected.
fn distribute(p: &Pattern) -> Result<Vec<Pattern>, CompileError> {
    Ok(match p {
        Pattern::Sde(_) | Pattern::Not(_) => vec![p.clone()],
        Pattern::Or(cs) => {
            let mut out = Vec::new();
            for c in cs {
                out.extend(distribute(c)?);
            }
            out
        }
        Pattern::Seq(cs) => cartesian(cs, Pattern::Seq)?,
        Pattern::And(cs) => cartesian(cs, Pattern::And)?,
        Pattern::Star(c) => {
            let inner = distribute(c)?;
            if inner.len() != 1 {
                return Err(CompileError::UnsupportedNesting {
                    pos: crate::pattern::first_pos_of(c),
                    message: "disjunction inside iteration has no branch expansion".into(),
                });
            }
            vec![Pattern::Star(Box::new(inner.into_iter().next().unwrap()))]
        }
        Pattern::Select(ps, c) => distribute(c)?
            .into_iter()
            .map(|d| Pattern::Select(ps.clone(), Box::new(d)))
            .collect(),
        Pattern::Emit(ms, c) => distribute(c)?
            .into_iter()
            .map(|d| Pattern::Emit(ms.clone(), Box::new(d)))
            .collect(),
        Pattern::Window(w, c) => distribute(c)?
            .into_iter()
            .map(|d| Pattern::Window(*w, Box::new(d)))
            .collect(),
    })
}

fn cartesian(
    children: &[Pattern],
    rebuild: fn(Vec<Pattern>) -> Pattern,
) -> Result<Vec<Pattern>, CompileError> {
    let mut acc: Vec<Vec<Pattern>> = vec![Vec::new()];
    for c in children {
        let alts = distribute(c)?;
        let mut next = Vec::with_capacity(acc.len() * alts.len());
        for prefix in &acc {
            for a in &alts {
                let mut row = prefix.clone();
                row.push(a.clone());
                next.push(row);
            }
        }
        acc = next;
    }
    Ok(acc.into_iter().map(rebuild).collect())
}

/// A linearized branch item prior to state assembly.
#[derive(Debug, Clone)]
enum LItem {
    Pos {
        atom: Atom,
        joint: Joint,
        /// Index (into the item list) of the same-child predecessor that
        /// must be strictly earlier; used by co-occurrence interleavings.
        strict_after_item: Option<usize>,
    },
    Star {
        atoms: Vec<Atom>,
    },
    Neg {
        atom: Atom,
        preds: Vec<Predicate>,
    },
}

#[derive(Default)]
struct Pools {
    preds: Vec<Predicate>,
    mappings: Vec<Mapping>,
}

/// Linearizes an Or-free pattern into branch item lists. Multiple branches
/// arise only from co-occurrence (And) interleavings.
fn linearize(p: &Pattern, pools: &mut Pools) -> Result<Vec<Vec<LItem>>, CompileError> {
    match p {
        Pattern::Sde(a) => Ok(vec![vec![LItem::Pos {
            atom: a.clone(),
            joint: Joint::Strict,
            strict_after_item: None,
        }]]),
        Pattern::Select(ps, c) => {
            pools.preds.extend(ps.iter().cloned());
            linearize(c, pools)
        }
        Pattern::Emit(ms, c) => {
            pools.mappings.extend(ms.iter().cloned());
            linearize(c, pools)
        }
        Pattern::Window(_, c) => Err(CompileError::WindowPlacement {
            pos: crate::pattern::first_pos_of(c),
        }),
        Pattern::Not(c) => {
            let (atom, preds) = match c.as_ref() {
                Pattern::Sde(a) => (a.clone(), Vec::new()),
                Pattern::Select(ps, inner) => match inner.as_ref() {
                    Pattern::Sde(a) => (a.clone(), ps.clone()),
                    _ => unreachable!("negation shape validated at parse"),
                },
                _ => unreachable!("negation shape validated at parse"),
            };
            Ok(vec![vec![LItem::Neg { atom, preds }]])
        }
        Pattern::Seq(cs) => {
            let mut acc: Vec<Vec<LItem>> = vec![Vec::new()];
            for c in cs {
                let branches = linearize(c, pools)?;
                let mut next = Vec::with_capacity(acc.len() * branches.len());
                for prefix in &acc {
                    for b in &branches {
                        let mut row = prefix.clone();
                        let base = row.len();
                        for item in b {
                            row.push(shift_item(item, base));
                        }
                        next.push(row);
                    }
                }
                acc = next;
            }
            Ok(acc)
        }
        Pattern::Star(c) => {
            let atoms = star_body_atoms(c, pools)?;
            Ok(vec![vec![LItem::Star { atoms }]])
        }
        Pattern::And(cs) => {
            if cs.len() > MAX_AND_CHILDREN {
                return Err(CompileError::UnsupportedNesting {
                    pos: crate::pattern::first_pos_of(p),
                    message: format!(
                        "co-occurrence over {} children exceeds the cap of {MAX_AND_CHILDREN}",
                        cs.len()
                    ),
                });
            }
            // Each child must linearize to a single branch of atoms and
            // bound-time negations.
            let mut child_pos: Vec<Vec<Atom>> = Vec::new();
            let mut negs: Vec<LItem> = Vec::new();
            for c in cs {
                let mut branches = linearize(c, pools)?;
                if branches.len() != 1 {
                    return Err(CompileError::UnsupportedNesting {
                        pos: crate::pattern::first_pos_of(c),
                        message: "nested co-occurrence inside a co-occurrence child".into(),
                    });
                }
                let mut atoms = Vec::new();
                for item in branches.pop().unwrap() {
                    match item {
                        LItem::Pos { atom, .. } => atoms.push(atom),
                        LItem::Neg { atom, preds } => {
                            if !matches!(atom.time_term(), Term::Var(_) | Term::Const(_)) {
                                return Err(CompileError::GapNegationNeedsWindow {
                                    pos: atom.pos,
                                    message:
                                        "gap negation is not defined inside a co-occurrence group"
                                            .into(),
                                });
                            }
                            negs.push(LItem::Neg { atom, preds });
                        }
                        LItem::Star { atoms } => {
                            return Err(CompileError::UnsupportedNesting {
                                pos: atoms.first().map(|a| a.pos).unwrap_or_default(),
                                message: "iteration inside a co-occurrence group".into(),
                            });
                        }
                    }
                }
                if !atoms.is_empty() {
                    child_pos.push(atoms);
                }
            }
            if child_pos.is_empty() {
                return Err(CompileError::UnsupportedNesting {
                    pos: crate::pattern::first_pos_of(p),
                    message: "co-occurrence group has no positive atom".into(),
                });
            }
            let shuffles = interleavings(&child_pos);
            if shuffles.len() > MAX_AND_BRANCHES {
                return Err(CompileError::UnsupportedNesting {
                    pos: crate::pattern::first_pos_of(p),
                    message: format!(
                        "co-occurrence expands to {} orderings, beyond the cap of {MAX_AND_BRANCHES}",
                        shuffles.len()
                    ),
                });
            }
            let mut out = Vec::with_capacity(shuffles.len());
            for shuffle in shuffles {
                let mut items: Vec<LItem> = Vec::with_capacity(shuffle.len() + negs.len());
                let mut last_of_child: BTreeMap<usize, usize> = BTreeMap::new();
                for (pos_in_branch, (child, idx)) in shuffle.iter().enumerate() {
                    let joint = if pos_in_branch == 0 {
                        Joint::Strict
                    } else {
                        Joint::TieOk
                    };
                    let strict_after_item = last_of_child.get(child).copied();
                    items.push(LItem::Pos {
                        atom: child_pos[*child][*idx].clone(),
                        joint,
                        strict_after_item,
                    });
                    last_of_child.insert(*child, pos_in_branch);
                }
                items.extend(negs.iter().cloned());
                out.push(items);
            }
            Ok(out)
        }
        Pattern::Or(_) => unreachable!("disjunction distributed before linearization"),
    }
}

fn shift_item(item: &LItem, base: usize) -> LItem {
    match item {
        LItem::Pos {
            atom,
            joint,
            strict_after_item,
        } => LItem::Pos {
            atom: atom.clone(),
            joint: *joint,
            strict_after_item: strict_after_item.map(|i| i + base),
        },
        other => other.clone(),
    }
}

/// Order-preserving merges of the children's atom sequences; each merge is a
/// vector of (child index, index within child).
fn interleavings(children: &[Vec<Atom>]) -> Vec<Vec<(usize, usize)>> {
    let total: usize = children.iter().map(|c| c.len()).sum();
    let mut out = Vec::new();
    let mut cursor = vec![0usize; children.len()];
    let mut cur: Vec<(usize, usize)> = Vec::with_capacity(total);
    fn rec(
        children: &[Vec<Atom>],
        cursor: &mut Vec<usize>,
        cur: &mut Vec<(usize, usize)>,
        total: usize,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if cur.len() == total {
            out.push(cur.clone());
            return;
        }
        for child in 0..children.len() {
            if cursor[child] < children[child].len() {
                cur.push((child, cursor[child]));
                cursor[child] += 1;
                rec(children, cursor, cur, total, out);
                cursor[child] -= 1;
                cur.pop();
            }
        }
    }
    rec(children, &mut cursor, &mut cur, total, &mut out);
    out
}

/// Extracts the iteration body: an atom or a depth-one sequence of atoms
/// (with selections pooled). Anything deeper is rejected.
fn star_body_atoms(p: &Pattern, pools: &mut Pools) -> Result<Vec<Atom>, CompileError> {
    match p {
        Pattern::Sde(a) => Ok(vec![a.clone()]),
        Pattern::Select(ps, c) => {
            pools.preds.extend(ps.iter().cloned());
            star_body_atoms(c, pools)
        }
        Pattern::Seq(cs) => {
            let mut atoms = Vec::new();
            for c in cs {
                match c {
                    Pattern::Sde(_) | Pattern::Select(..) => {
                        atoms.extend(star_body_atoms(c, pools)?)
                    }
                    other => {
                        return Err(CompileError::UnsupportedNesting {
                            pos: crate::pattern::first_pos_of(other),
                            message: "iteration body must be an atom or a sequence of atoms"
                                .into(),
                        })
                    }
                }
            }
            Ok(atoms)
        }
        Pattern::Star(c) => Err(CompileError::UnsupportedNesting {
            pos: crate::pattern::first_pos_of(c),
            message: "iteration inside iteration".into(),
        }),
        other => Err(CompileError::UnsupportedNesting {
            pos: crate::pattern::first_pos_of(other),
            message: "iteration body must be an atom or a sequence of atoms".into(),
        }),
    }
}

/// Splits pooled predicates into per-state early sets and a late remainder.
/// A predicate is early at the first state where all its variables are bound
/// (constant-only predicates land on the start state); predicates that
/// reference derived emit variables stay late.
pub fn split_predicates(
    preds: &[Predicate],
    states: &[State],
    emit_vars: &BTreeSet<String>,
) -> (Vec<Vec<Predicate>>, Vec<Predicate>) {
    let positive_len = states.len() - 2;
    // first binding state per variable
    let mut first_bind: BTreeMap<String, usize> = BTreeMap::new();
    for (i, st) in states.iter().enumerate() {
        if let State::Atom(a) = st {
            for t in &a.atom.terms {
                if let Term::Var(v) = t {
                    first_bind.entry(v.clone()).or_insert(i);
                }
            }
        }
    }
    let mut early: Vec<Vec<Predicate>> = vec![Vec::new(); positive_len + 1];
    let mut late: Vec<Predicate> = Vec::new();
    'preds: for p in preds {
        let mut place = 0usize;
        for (v, _) in p.variables() {
            if emit_vars.contains(&v) {
                late.push(p.clone());
                continue 'preds;
            }
            match first_bind.get(&v) {
                Some(&s) => place = place.max(s),
                None => {
                    // unbound names cannot reach here on validated rules;
                    // keep the predicate late so it still gets evaluated
                    late.push(p.clone());
                    continue 'preds;
                }
            }
        }
        early[place].push(p.clone());
    }
    (early, late)
}

struct RuleParts {
    window: Option<WindowBounds>,
    core: Pattern,
    pools: Pools,
}

fn peel(rule: &Rule) -> Result<RuleParts, CompileError> {
    let mut pools = Pools::default();
    let mut window = None;
    let mut node = rule.body.clone();
    loop {
        node = match node {
            Pattern::Select(ps, c) => {
                pools.preds.extend(ps);
                *c
            }
            Pattern::Emit(ms, c) => {
                pools.mappings.extend(ms);
                *c
            }
            Pattern::Window(w, c) => {
                if window.is_some() {
                    return Err(CompileError::WindowPlacement {
                        pos: crate::pattern::first_pos_of(&c),
                    });
                }
                window = Some(w);
                *c
            }
            other => {
                return Ok(RuleParts {
                    window,
                    core: other,
                    pools,
                })
            }
        };
    }
}

fn compile_rule(
    rule: &Rule,
    rule_idx: usize,
    ce_types: &BTreeSet<String>,
) -> Result<Vec<NfaPlan>, CompileError> {
    let parts = peel(rule)?;
    let disjuncts = distribute(&parts.core)?;
    let mut plans = Vec::new();
    let mut branch_idx = 0usize;

    for disjunct in &disjuncts {
        // Window/Select/Emit may also sit at the disjunct top.
        let mut pools = Pools {
            preds: parts.pools.preds.clone(),
            mappings: parts.pools.mappings.clone(),
        };
        let mut window = parts.window;
        let mut node = disjunct.clone();
        let core = loop {
            node = match node {
                Pattern::Select(ps, c) => {
                    pools.preds.extend(ps);
                    *c
                }
                Pattern::Emit(ms, c) => {
                    pools.mappings.extend(ms);
                    *c
                }
                Pattern::Window(w, c) => {
                    if window.is_some() {
                        return Err(CompileError::WindowPlacement {
                            pos: crate::pattern::first_pos_of(&c),
                        });
                    }
                    window = Some(w);
                    *c
                }
                other => break other,
            };
        };

        let branches = linearize(&core, &mut pools)?;
        for items in branches {
            plans.push(assemble(
                rule, rule_idx, branch_idx, &items, &pools, window, ce_types,
            )?);
            branch_idx += 1;
        }
    }
    Ok(plans)
}

fn assemble(
    rule: &Rule,
    rule_idx: usize,
    branch_idx: usize,
    items: &[LItem],
    pools: &Pools,
    window: Option<WindowBounds>,
    ce_types: &BTreeSet<String>,
) -> Result<NfaPlan, CompileError> {
    let mut states: Vec<State> = vec![State::Start];
    let mut elements: Vec<Element> = Vec::new();
    let mut item_last_state: Vec<Option<usize>> = Vec::with_capacity(items.len());
    let mut kleene_states = BTreeSet::new();

    for item in items {
        match item {
            LItem::Pos {
                atom,
                joint,
                strict_after_item,
            } => {
                let idx = states.len();
                let strict_after = strict_after_item.and_then(|i| item_last_state[i]);
                states.push(State::Atom(AtomState {
                    atom: atom.clone(),
                    early: Vec::new(),
                    joint: *joint,
                }));
                // enforce same-child strictness through a synthetic marker
                // kept on the element (resolved in the engine via elements)
                let _ = strict_after;
                elements.push(Element {
                    states: idx..idx + 1,
                    star: false,
                });
                item_last_state.push(Some(idx));
            }
            LItem::Star { atoms } => {
                let start = states.len();
                for atom in atoms {
                    states.push(State::Atom(AtomState {
                        atom: atom.clone(),
                        early: Vec::new(),
                        joint: Joint::Strict,
                    }));
                }
                let end = states.len();
                for i in start..end {
                    kleene_states.insert(i);
                }
                elements.push(Element {
                    states: start..end,
                    star: true,
                });
                item_last_state.push(Some(end - 1));
            }
            LItem::Neg { .. } => {
                item_last_state.push(None);
            }
        }
    }
    let positive_len = states.len() - 1;
    if positive_len == 0 {
        return Err(CompileError::UnsupportedNesting {
            pos: rule.pos,
            message: "pattern has no positive atom".into(),
        });
    }
    states.push(State::Accept);

    // same-child strict ordering (co-occurrence interleavings)
    let mut strict_after: Vec<Option<usize>> = vec![None; states.len()];
    {
        let mut pos_state_of_item: Vec<Option<usize>> = Vec::with_capacity(items.len());
        let mut cursor = 1usize;
        for item in items {
            match item {
                LItem::Pos { .. } => {
                    pos_state_of_item.push(Some(cursor));
                    cursor += 1;
                }
                LItem::Star { atoms } => {
                    pos_state_of_item.push(Some(cursor + atoms.len() - 1));
                    cursor += atoms.len();
                }
                LItem::Neg { .. } => pos_state_of_item.push(None),
            }
        }
        for (i, item) in items.iter().enumerate() {
            if let LItem::Pos {
                strict_after_item: Some(j),
                ..
            } = item
            {
                if let (Some(me), Some(prev)) = (pos_state_of_item[i], pos_state_of_item[*j]) {
                    strict_after[me] = Some(prev);
                }
            }
        }
    }

    // window anchoring
    let window_spec = window.map(|w| {
        if w.lo == 0 {
            WindowSpec::Relative { span: w.hi }
        } else {
            WindowSpec::Absolute { lo: w.lo, hi: w.hi }
        }
    });

    // negation checks with positional gap resolution
    let mut negation_checks = Vec::new();
    {
        // element index per item position (positives only)
        let mut elem_of_item: Vec<Option<usize>> = Vec::with_capacity(items.len());
        let mut e = 0usize;
        for item in items {
            match item {
                LItem::Pos { .. } | LItem::Star { .. } => {
                    elem_of_item.push(Some(e));
                    e += 1;
                }
                LItem::Neg { .. } => elem_of_item.push(None),
            }
        }
        for (i, item) in items.iter().enumerate() {
            if let LItem::Neg { atom, preds } = item {
                if ce_types.contains(&atom.event_type) {
                    return Err(CompileError::NegatedCeType {
                        ty: atom.event_type.clone(),
                        pos: atom.pos,
                    });
                }
                let form = match atom.time_term() {
                    Term::Var(_) | Term::Const(_) => NegForm::BoundTime,
                    Term::Wildcard => {
                        let after_element = items[..i]
                            .iter()
                            .enumerate()
                            .rev()
                            .find_map(|(j, it)| match it {
                                LItem::Neg { .. } => None,
                                _ => elem_of_item[j],
                            });
                        let before_element =
                            items[i + 1..].iter().enumerate().find_map(|(j, it)| match it {
                                LItem::Neg { .. } => None,
                                _ => elem_of_item[i + 1 + j],
                            });
                        if after_element.is_none() {
                            match window_spec {
                                Some(WindowSpec::Absolute { .. }) => {}
                                _ => {
                                    return Err(CompileError::GapNegationNeedsWindow {
                                        pos: atom.pos,
                                        message: "leading gap negation needs an absolute window"
                                            .into(),
                                    })
                                }
                            }
                        }
                        if before_element.is_none() && window_spec.is_none() {
                            return Err(CompileError::GapNegationNeedsWindow {
                                pos: atom.pos,
                                message: "trailing gap negation needs a window".into(),
                            });
                        }
                        NegForm::Gap {
                            after_element,
                            before_element,
                        }
                    }
                };
                negation_checks.push(NegCheck {
                    atom: atom.clone(),
                    preds: preds.clone(),
                    form,
                });
            }
        }
    }

    // emit mappings (ordered, unique names)
    let mut mappings: Vec<(String, Expr)> = Vec::new();
    for m in &pools.mappings {
        if mappings.iter().any(|(v, _)| v == &m.var) {
            return Err(CompileError::UnsupportedNesting {
                pos: m.pos,
                message: format!("emit variable {} defined twice", m.var),
            });
        }
        mappings.push((m.var.clone(), m.expr.clone()));
    }
    let emit_vars: BTreeSet<String> = mappings.iter().map(|(v, _)| v.clone()).collect();

    // predicate placement
    let (early, late_predicates) = split_predicates(&pools.preds, &states, &emit_vars);
    for (i, preds) in early.iter().enumerate() {
        if i == 0 {
            continue; // constant-only predicates live on the start state
        }
        if let State::Atom(a) = &mut states[i] {
            a.early = preds.clone();
        }
    }
    let start_predicates = early[0].clone();

    // produce: heads share the time expression
    let ts_expr = rule.head_args.last().unwrap().clone();
    let main_attrs: Vec<Expr> = rule.head_args[..rule.head_args.len() - 1].to_vec();
    let mut heads = vec![HeadSpec {
        prob: rule.rule_prob,
        attr_exprs: main_attrs,
    }];
    for alt in &rule.alt_heads {
        let alt_ts = alt.args.last().unwrap();
        if alt_ts != &ts_expr {
            return Err(CompileError::UnsupportedNesting {
                pos: alt.pos,
                message: "alternative heads must share the main head's time variable".into(),
            });
        }
        heads.push(HeadSpec {
            prob: alt.prob,
            attr_exprs: alt.args[..alt.args.len() - 1].to_vec(),
        });
    }

    // transition table (for dumps and the plan contract)
    let mut transitions = Vec::new();
    for i in 1..=positive_len {
        let st = match &states[i] {
            State::Atom(a) => a,
            _ => unreachable!(),
        };
        transitions.push(Transition {
            from: i - 1,
            to: i,
            event_type: st.atom.event_type.clone(),
            early: st.early.clone(),
            kind: TransitionKind::Advance,
        });
    }
    for el in &elements {
        if el.star {
            let first = el.states.start;
            let st = match &states[first] {
                State::Atom(a) => a,
                _ => unreachable!(),
            };
            transitions.push(Transition {
                from: el.states.end - 1,
                to: first,
                event_type: st.atom.event_type.clone(),
                early: st.early.clone(),
                kind: TransitionKind::KleeneLoop,
            });
        }
    }

    let mut plan = NfaPlan {
        rule_idx,
        branch_idx,
        states,
        transitions,
        self_loop: Vec::new(),
        kleene_states,
        elements,
        negation_checks,
        late_predicates,
        window: window_spec,
        produce: Produce {
            ce_type: rule.head_type.clone(),
            heads,
            ts_expr,
            mappings,
        },
        rule_prob: rule.rule_prob,
        strict_after,
        start_predicates,
    };
    plan.self_loop = vec![true; plan.states.len()];
    Ok(plan)
}

/// Hierarchy levels per CE type: 0 for rules over SDEs only, otherwise one
/// above the highest referenced CE level.
pub fn topo_levels(rules: &RuleSet) -> BTreeMap<String, u32> {
    fn level_of(
        ty: &str,
        rules: &RuleSet,
        memo: &mut BTreeMap<String, u32>,
    ) -> u32 {
        if let Some(&l) = memo.get(ty) {
            return l;
        }
        let mut level = 0u32;
        for r in rules.rules.iter().filter(|r| r.head_type == ty) {
            for atom in r.body.atoms() {
                if rules.is_ce_type(&atom.event_type) && atom.event_type != ty {
                    level = level.max(level_of(&atom.event_type, rules, memo) + 1);
                } else if rules.is_ce_type(&atom.event_type) {
                    // self reference is rejected at parse; defensive
                    level = level.max(1);
                }
            }
        }
        memo.insert(ty.to_string(), level);
        level
    }
    let mut memo = BTreeMap::new();
    for r in &rules.rules {
        level_of(&r.head_type, rules, &mut memo);
    }
    memo
}

/// Compiles a validated rule set into a hierarchy plan: one NFA plan per
/// (rule, disjunct, interleaving), ordered by level with input order
/// preserved inside a level.
pub fn compile(rules: &RuleSet) -> Result<HierarchyPlan, CompileError> {
    let ce_types: BTreeSet<String> = rules.rules.iter().map(|r| r.head_type.clone()).collect();
    let levels = topo_levels(rules);

    let mut plans = Vec::new();
    for (rule_idx, rule) in rules.rules.iter().enumerate() {
        plans.extend(compile_rule(rule, rule_idx, &ce_types)?);
    }
    plans.sort_by_key(|p| levels.get(&p.produce.ce_type).copied().unwrap_or(0));

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in plans.iter().enumerate() {
        groups.entry(p.produce.ce_type.clone()).or_default().push(i);
    }

    Ok(HierarchyPlan {
        plans,
        level: levels,
        groups,
    })
}
