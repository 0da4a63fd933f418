//! Brute-force possible-worlds oracle: enumerates every event history,
//! evaluates the crisp pattern semantics on each one (the naive evaluator,
//! not the automaton), enumerates rule firings per hierarchy level, and sums
//! the probabilities of the histories in which each CE instance is
//! recognized.
//!
//! Summation uses a pairwise (binary-counter) merge tree per instance, so
//! results are bitwise-stable and accurate over millions of terms.

use std::collections::{BTreeMap, BTreeSet};

use crate::event::{EventId, ProbEvent};
use crate::naive::{instances_of, rule_matches, CrispEvent};
use crate::pattern::RuleSet;
use crate::prob::{CeInstanceKey, Cpt, ProbError};

/// Maximum enumerable history-space size.
pub const ORACLE_SPACE_CAP: u128 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum OracleModel<'a> {
    #[default]
    Independent,
    /// Chain-factored history weighting: each event's occurrence mass is
    /// replaced by the CPT entry for (nearest preceding occurred type, this
    /// type) when declared, split over alternatives proportionally.
    Markov(&'a Cpt),
}

/// Deterministic pairwise summation via a binary-counter merge stack.
#[derive(Debug, Clone, Default)]
pub struct PairwiseSum {
    levels: Vec<Option<f64>>,
}

impl PairwiseSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let mut carry = x;
        for slot in self.levels.iter_mut() {
            match slot.take() {
                None => {
                    *slot = Some(carry);
                    return;
                }
                Some(v) => carry += v,
            }
        }
        self.levels.push(Some(carry));
    }

    pub fn total(&self) -> f64 {
        self.levels.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub histories: u128,
    pub marginals: BTreeMap<CeInstanceKey, f64>,
}

struct OracleCtx<'a> {
    rules: &'a RuleSet,
    /// Rule indices grouped by hierarchy level, ascending.
    levels: Vec<Vec<usize>>,
    sums: BTreeMap<CeInstanceKey, PairwiseSum>,
}

/// Hierarchy level per CE type, derived from the dependency graph alone
/// (independent of the plan compiler).
fn ce_levels(rules: &RuleSet) -> BTreeMap<String, u32> {
    fn level_of(ty: &str, rules: &RuleSet, memo: &mut BTreeMap<String, u32>) -> u32 {
        if let Some(&l) = memo.get(ty) {
            return l;
        }
        let mut level = 0;
        for r in rules.rules.iter().filter(|r| r.head_type == ty) {
            for atom in r.body.atoms() {
                if rules.is_ce_type(&atom.event_type) {
                    level = level.max(level_of(&atom.event_type, rules, memo) + 1);
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

/// Exact marginal probability of every produced CE instance over the
/// possible worlds of the stream, optionally filtered to one CE type.
pub fn oracle_marginal(
    events: &[ProbEvent],
    rules: &RuleSet,
    query: Option<&str>,
    model: OracleModel<'_>,
) -> Result<OracleReport, ProbError> {
    let size = crate::event::history_space_size(events);
    if size > ORACLE_SPACE_CAP {
        return Err(ProbError::SpaceTooLarge {
            size,
            cap: ORACLE_SPACE_CAP,
        });
    }
    if let Some(ty) = query {
        if !rules.is_ce_type(ty) {
            return Err(ProbError::NoSuchCe { ty: ty.to_string() });
        }
    }

    let type_levels = ce_levels(rules);
    let max_level = type_levels.values().copied().max().unwrap_or(0);
    let mut levels: Vec<Vec<usize>> = vec![Vec::new(); max_level as usize + 1];
    for (i, r) in rules.rules.iter().enumerate() {
        levels[type_levels[&r.head_type] as usize].push(i);
    }

    let mut ctx = OracleCtx {
        rules,
        levels,
        sums: BTreeMap::new(),
    };

    let mut crisp: Vec<CrispEvent> = Vec::with_capacity(events.len());
    enumerate_histories(events, 0, 1.0, None, model, &mut crisp, &mut ctx);

    let mut marginals = BTreeMap::new();
    for (key, sum) in &ctx.sums {
        if query.map_or(true, |q| key.ce_type == q) {
            marginals.insert(key.clone(), sum.total());
        }
    }
    Ok(OracleReport {
        histories: size,
        marginals,
    })
}

/// Depth-first enumeration of SDE histories; at each leaf the hierarchy is
/// evaluated with rule-firing enumeration.
#[allow(clippy::too_many_arguments)]
fn enumerate_histories(
    events: &[ProbEvent],
    idx: usize,
    weight: f64,
    prev_occurred: Option<&str>,
    model: OracleModel<'_>,
    crisp: &mut Vec<CrispEvent>,
    ctx: &mut OracleCtx<'_>,
) {
    if weight == 0.0 {
        return;
    }
    if idx == events.len() {
        let mut produced = BTreeSet::new();
        let next_id = events.iter().map(|e| e.id + 1).max().unwrap_or(0);
        eval_levels(0, crisp.clone(), weight, next_id, &mut produced, ctx);
        return;
    }
    let e = &events[idx];
    let occurrence = e.occurrence();
    let cpt_entry = match (model, prev_occurred) {
        (OracleModel::Markov(cpt), Some(prev)) => cpt.get(prev, &e.event_type),
        _ => None,
    };
    let occ_mass = cpt_entry.unwrap_or(occurrence);

    for (i, alt) in e.alternatives.iter().enumerate() {
        let p = match cpt_entry {
            Some(c) => {
                if occurrence > 0.0 {
                    c * (alt.prob / occurrence)
                } else {
                    c / e.alternatives.len() as f64
                }
            }
            None => alt.prob,
        };
        if p == 0.0 {
            continue;
        }
        crisp.push(CrispEvent {
            id: e.id,
            alt: i,
            event_type: e.event_type.clone(),
            attrs: alt.attrs.clone(),
            ts: e.ts,
        });
        enumerate_histories(
            events,
            idx + 1,
            weight * p,
            Some(&e.event_type),
            model,
            crisp,
            ctx,
        );
        crisp.pop();
    }
    let non_occ = 1.0 - occ_mass;
    if non_occ > 0.0 {
        enumerate_histories(
            events,
            idx + 1,
            weight * non_occ,
            prev_occurred,
            model,
            crisp,
            ctx,
        );
    }
}

/// Evaluates one hierarchy level on a crisp world: find all matches of the
/// level's rules, enumerate independent head firings per match, extend the
/// world with the fired instances, recurse upward. At the top, every
/// instance produced along the branch receives the branch weight.
fn eval_levels(
    level: usize,
    crisp: Vec<CrispEvent>,
    weight: f64,
    next_id: EventId,
    produced: &mut BTreeSet<CeInstanceKey>,
    ctx: &mut OracleCtx<'_>,
) {
    if weight == 0.0 {
        return;
    }
    if level >= ctx.levels.len() {
        for key in produced.iter() {
            ctx.sums.entry(key.clone()).or_default().push(weight);
        }
        return;
    }

    // matches of this level's rules, with their per-head instances
    let mut match_heads: Vec<Vec<(f64, CeInstanceKey)>> = Vec::new();
    for &rule_idx in &ctx.levels[level] {
        let rule = &ctx.rules.rules[rule_idx];
        for m in rule_matches(rule, &crisp) {
            let Some(instances) = instances_of(rule, &m) else {
                continue;
            };
            let mut heads = Vec::with_capacity(instances.len());
            for inst in instances {
                let prob = if inst.head_idx == 0 {
                    rule.rule_prob
                } else {
                    rule.alt_heads[inst.head_idx - 1].prob
                };
                heads.push((
                    prob,
                    CeInstanceKey {
                        ce_type: inst.ce_type,
                        attrs: inst.attrs,
                        ts: inst.ts,
                    },
                ));
            }
            match_heads.push(heads);
        }
    }

    // enumerate firing assignments: one independent annotated-disjunction
    // choice per match
    fn fire(
        match_heads: &[Vec<(f64, CeInstanceKey)>],
        idx: usize,
        weight: f64,
        fired: &mut BTreeSet<CeInstanceKey>,
        level: usize,
        crisp: &Vec<CrispEvent>,
        next_id: EventId,
        produced: &mut BTreeSet<CeInstanceKey>,
        ctx: &mut OracleCtx<'_>,
    ) {
        if weight == 0.0 {
            return;
        }
        if idx == match_heads.len() {
            // extend the world with the fired instances (dedup by key)
            let mut crisp2 = crisp.clone();
            let mut id = next_id;
            let mut added: Vec<CeInstanceKey> = Vec::new();
            for key in fired.iter() {
                if produced.insert(key.clone()) {
                    added.push(key.clone());
                }
                crisp2.push(CrispEvent {
                    id,
                    alt: 0,
                    event_type: key.ce_type.clone(),
                    attrs: key.attrs.clone(),
                    ts: key.ts,
                });
                id += 1;
            }
            eval_levels(level + 1, crisp2, weight, id, produced, ctx);
            for key in added {
                produced.remove(&key);
            }
            return;
        }
        let heads = &match_heads[idx];
        let mut none_mass = 1.0;
        for (p, key) in heads {
            none_mass -= p;
            if *p == 0.0 {
                continue;
            }
            let inserted = fired.insert(key.clone());
            fire(
                match_heads,
                idx + 1,
                weight * p,
                fired,
                level,
                crisp,
                next_id,
                produced,
                ctx,
            );
            if inserted {
                fired.remove(key);
            }
        }
        if none_mass > 0.0 {
            fire(
                match_heads,
                idx + 1,
                weight * none_mass,
                fired,
                level,
                crisp,
                next_id,
                produced,
                ctx,
            );
        }
    }

    let mut fired = BTreeSet::new();
    fire(
        &match_heads,
        0,
        weight,
        &mut fired,
        level,
        &crisp,
        next_id,
        produced,
        ctx,
    );
}

/// Independent ground truth for a single conjunct: enumerates the involved
/// events' choices directly and sums the weights of consistent assignments.
pub fn literals_prob(events: &[ProbEvent], literals: &[(EventId, u32, bool)]) -> f64 {
    let involved: BTreeSet<EventId> = literals.iter().map(|(id, _, _)| *id).collect();
    let subset: Vec<&ProbEvent> = events.iter().filter(|e| involved.contains(&e.id)).collect();
    fn rec(
        subset: &[&ProbEvent],
        idx: usize,
        weight: f64,
        literals: &[(EventId, u32, bool)],
    ) -> f64 {
        if idx == subset.len() {
            return weight;
        }
        let e = subset[idx];
        let mut total = 0.0;
        // alternatives
        for (i, alt) in e.alternatives.iter().enumerate() {
            let ok = literals.iter().all(|(id, a, positive)| {
                *id != e.id || (if *positive { *a as usize == i } else { *a as usize != i })
            });
            if ok && alt.prob > 0.0 {
                total += rec(subset, idx + 1, weight * alt.prob, literals);
            }
        }
        // non-occurrence satisfies every negative literal, no positive one
        let ok = literals
            .iter()
            .all(|(id, _, positive)| *id != e.id || !*positive);
        let non_occ = e.non_occurrence();
        if ok && non_occ > 0.0 {
            total += rec(subset, idx + 1, weight * non_occ, literals);
        }
        total
    }
    rec(&subset, 0, 1.0, literals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Alternative, Timestamp};
    use crate::pattern::parse_rules;

    fn ev(id: EventId, ty: &str, ts: u64, args: &[(&str, &str)], prob: f64) -> ProbEvent {
        ProbEvent {
            id,
            event_type: ty.into(),
            ts: Timestamp(ts),
            alternatives: vec![Alternative {
                attrs: args
                    .iter()
                    .map(|(k, v)| (k.to_string(), crate::event::AttrValue::Str(v.to_string())))
                    .collect(),
                prob,
            }],
        }
    }

    fn three_event_stream() -> Vec<ProbEvent> {
        vec![
            ev(0, "running", 0, &[("player", "a")], 0.8),
            ev(1, "jumping", 1, &[("player", "a")], 0.6),
            ev(2, "dunking", 2, &[("player", "a")], 0.7),
        ]
    }

    #[test]
    fn sequence_marginal_is_product() {
        let rules =
            parse_rules("dunkrun(P, T3) ::= running(P, T1); jumping(P, T2); dunking(P, T3)")
                .unwrap();
        let report =
            oracle_marginal(&three_event_stream(), &rules, None, OracleModel::Independent)
                .unwrap();
        assert_eq!(report.histories, 8);
        assert_eq!(report.marginals.len(), 1);
        let (key, p) = report.marginals.iter().next().unwrap();
        assert_eq!(key.ce_type, "dunkrun");
        assert_eq!(key.ts, Timestamp(2));
        assert!((p - 0.336).abs() < 1e-12);
    }

    #[test]
    fn no_such_ce_rejected() {
        let rules = parse_rules("x(T) ::= a(T)").unwrap();
        let err = oracle_marginal(
            &three_event_stream(),
            &rules,
            Some("nope"),
            OracleModel::Independent,
        )
        .unwrap_err();
        assert_eq!(err.code(), "NO_SUCH_CE");
    }

    #[test]
    fn space_cap() {
        let events: Vec<ProbEvent> = (0..23)
            .map(|i| ev(i, "a", i, &[], 0.5))
            .collect();
        let rules = parse_rules("x(T) ::= a(T)").unwrap();
        let err =
            oracle_marginal(&events, &rules, None, OracleModel::Independent).unwrap_err();
        assert_eq!(err.code(), "SPACE_TOO_LARGE");
    }

    #[test]
    fn rule_probability_scales_marginal() {
        let rules = parse_rules("0.9::hit(T2) ::= a(T1); b(T2)").unwrap();
        let events = vec![ev(0, "a", 0, &[], 0.5), ev(1, "b", 1, &[], 0.5)];
        let report =
            oracle_marginal(&events, &rules, None, OracleModel::Independent).unwrap();
        let p = report.marginals.values().next().unwrap();
        assert!((p - 0.9 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn markov_weighting_uses_nearest_occurred() {
        // two events, CPT on (a -> b): P(b | a occurred before) = 0.9
        let mut cpt = Cpt::new();
        cpt.insert("a", "b", 0.9);
        let rules = parse_rules("hit(T2) ::= a(T1); b(T2)").unwrap();
        let events = vec![ev(0, "a", 0, &[], 0.5), ev(1, "b", 1, &[], 0.6)];
        let report =
            oracle_marginal(&events, &rules, None, OracleModel::Markov(&cpt)).unwrap();
        // only the both-occur history matches: 0.5 * 0.9
        let p = report.marginals.values().next().unwrap();
        assert!((p - 0.45).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_is_accurate() {
        let mut s = PairwiseSum::new();
        for _ in 0..1_000_000 {
            s.push(1e-6);
        }
        assert!((s.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn literal_prob_enumeration() {
        let events = vec![ev(0, "a", 0, &[], 0.8), ev(1, "b", 1, &[], 0.6)];
        let p = literals_prob(&events, &[(0, 0, true), (1, 0, false)]);
        assert!((p - 0.8 * 0.4).abs() < 1e-12);
    }
}
