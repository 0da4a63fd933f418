//! Probability computation: dependency models (independent, first-order
//! Markov over event types, penalty decay), rule probabilities and combining
//! rules, lineage formulas with exact marginals by Shannon expansion, MAP
//! selection, and the exact possible-worlds oracle.

mod lineage;
mod oracle;

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::event::{AttrValue, Timestamp};

pub use lineage::{ce_marginal, Conjunct, Literal, Lineage, VarProbs};
pub use oracle::{literals_prob, oracle_marginal, OracleModel, OracleReport, PairwiseSum};

/// Conditional probability table over event-type pairs: P(next | previous).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cpt {
    entries: BTreeMap<(String, String), f64>,
}

#[derive(Debug, Error)]
pub enum CptError {
    #[error("CPT parse error: {0}")]
    Parse(String),
    #[error("CPT probability {prob} for {key} out of [0,1]")]
    OutOfRange { key: String, prob: f64 },
}

impl Cpt {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prev: &str, next: &str, prob: f64) {
        self.entries
            .insert((prev.to_string(), next.to_string()), prob);
    }

    pub fn get(&self, prev: &str, next: &str) -> Option<f64> {
        self.entries
            .get(&(prev.to_string(), next.to_string()))
            .copied()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses the JSON map format `{"shooting->ballInNet": 0.95}`.
    pub fn from_json(text: &str) -> Result<Self, CptError> {
        let raw: BTreeMap<String, f64> =
            serde_json::from_str(text).map_err(|e| CptError::Parse(e.to_string()))?;
        let mut cpt = Cpt::new();
        for (key, prob) in raw {
            let Some((prev, next)) = key.split_once("->") else {
                return Err(CptError::Parse(format!(
                    "key '{key}' is not of the form 'prev->next'"
                )));
            };
            if !(0.0..=1.0).contains(&prob) {
                return Err(CptError::OutOfRange { key, prob });
            }
            cpt.insert(prev.trim(), next.trim(), prob);
        }
        Ok(cpt)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum ProbModelKind {
    #[default]
    Independent,
    Markov(Cpt),
}

/// Pluggable dependency model. All built-ins are monotone: extending a match
/// can only shrink its probability, which is what makes threshold pruning
/// sound.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbModel {
    pub kind: ProbModelKind,
    pub decay: Option<f64>,
    pub monotone: bool,
}

impl Default for ProbModel {
    fn default() -> Self {
        ProbModel::independent()
    }
}

impl ProbModel {
    pub fn independent() -> Self {
        ProbModel {
            kind: ProbModelKind::Independent,
            decay: None,
            monotone: true,
        }
    }

    pub fn markov(cpt: Cpt) -> Self {
        ProbModel {
            kind: ProbModelKind::Markov(cpt),
            decay: None,
            monotone: true,
        }
    }

    pub fn with_decay(mut self, decay: f64) -> Self {
        self.decay = Some(decay);
        self
    }

    /// Per-event chain factor: the contribution of selecting `alt_prob` (one
    /// alternative of an event with total occurrence mass `occurrence`) after
    /// a previously selected event of type `prev_type`.
    pub fn factor(
        &self,
        prev_type: Option<&str>,
        event_type: &str,
        alt_prob: f64,
        occurrence: f64,
        alt_count: usize,
    ) -> f64 {
        match (&self.kind, prev_type) {
            (ProbModelKind::Markov(cpt), Some(prev)) => match cpt.get(prev, event_type) {
                Some(c) => {
                    if occurrence > 0.0 {
                        c * (alt_prob / occurrence)
                    } else {
                        c / alt_count as f64
                    }
                }
                None => alt_prob,
            },
            _ => alt_prob,
        }
    }
}

/// One selected event of a match, as the probability ops see it.
#[derive(Debug, Clone)]
pub struct SelectedEvent<'a> {
    pub event_type: &'a str,
    pub alt_prob: f64,
    pub occurrence: f64,
    pub alt_count: usize,
}

/// Product of the chosen alternatives' probabilities, times the bound-time /
/// gap negation factor computed by the runtime.
pub fn match_prob_independent(selected: &[SelectedEvent<'_>], negation_factor: f64) -> f64 {
    selected.iter().map(|s| s.alt_prob).product::<f64>() * negation_factor
}

/// First event contributes its marginal; each later event contributes the
/// CPT entry for the adjacent selected pair when declared, else its marginal.
/// Skipped stream events between selections do not break the chain.
pub fn match_prob_markov(
    selected: &[SelectedEvent<'_>],
    cpt: &Cpt,
    negation_factor: f64,
) -> f64 {
    let model = ProbModel::markov(cpt.clone());
    let mut p = 1.0;
    let mut prev: Option<&str> = None;
    for s in selected {
        p *= model.factor(prev, s.event_type, s.alt_prob, s.occurrence, s.alt_count);
        prev = Some(s.event_type);
    }
    p * negation_factor
}

/// Penalty degradation: `p * decay^intervening`.
pub fn apply_decay(p: f64, intervening: u64, decay: f64) -> f64 {
    p * decay.powi(intervening.min(i32::MAX as u64) as i32)
}

/// CE probability = P(pattern satisfied) * P(CE | pattern satisfied).
pub fn apply_rule_prob(rule_prob: f64, match_prob: f64) -> f64 {
    rule_prob * match_prob
}

/// Noisy-or combining rule for CEs with multiple bodies: 1 - prod(1 - p).
pub fn combine_noisy_or(probs: &[f64]) -> f64 {
    1.0 - probs.iter().map(|p| 1.0 - p).product::<f64>()
}

/// Key identifying a produced CE instance: type, attributes, timestamp.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
pub struct CeInstanceKey {
    pub ce_type: String,
    pub attrs: Vec<(String, AttrValue)>,
    pub ts: Timestamp,
}

impl std::fmt::Display for CeInstanceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let args = self
            .attrs
            .iter()
            .map(|(_, v)| v.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        if args.is_empty() {
            write!(f, "{}({})", self.ce_type, self.ts)
        } else {
            write!(f, "{}({}, {})", self.ce_type, args, self.ts)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("LINEAGE_TOO_LARGE: {vars} distinct events exceed the cap of {cap}")]
    LineageTooLarge { vars: usize, cap: usize },
    #[error("SPACE_TOO_LARGE: {size} histories exceed the cap of {cap}")]
    SpaceTooLarge { size: u128, cap: u128 },
    #[error("NO_SUCH_CE: no rule defines {ty}")]
    NoSuchCe { ty: String },
    #[error("EMPTY_MATCH_SET: MAP query over no matches")]
    EmptyMatchSet,
    #[error("MODEL_NOT_MONOTONE: threshold pruning requires a monotone model")]
    ModelNotMonotone,
}

impl ProbError {
    pub fn code(&self) -> &'static str {
        match self {
            ProbError::LineageTooLarge { .. } => "LINEAGE_TOO_LARGE",
            ProbError::SpaceTooLarge { .. } => "SPACE_TOO_LARGE",
            ProbError::NoSuchCe { .. } => "NO_SUCH_CE",
            ProbError::EmptyMatchSet => "EMPTY_MATCH_SET",
            ProbError::ModelNotMonotone => "MODEL_NOT_MONOTONE",
        }
    }
}

/// Exact per-instance marginals: lineages of matches producing the same CE
/// instance merge as disjuncts, then Shannon expansion evaluates each.
pub fn merge_exact_marginals<'a, I>(
    items: I,
    var_probs: &VarProbs,
    cap: usize,
) -> Result<BTreeMap<CeInstanceKey, f64>, ProbError>
where
    I: IntoIterator<Item = (CeInstanceKey, &'a Lineage)>,
{
    let mut merged: BTreeMap<CeInstanceKey, Lineage> = BTreeMap::new();
    for (key, lineage) in items {
        let slot = merged.entry(key).or_insert_with(Lineage::none);
        *slot = std::mem::take(slot).or(lineage.clone());
    }
    let mut out = BTreeMap::new();
    for (key, lineage) in merged {
        let p = ce_marginal(&lineage, var_probs, cap)?;
        if p > 0.0 {
            out.insert(key, p);
        }
    }
    Ok(out)
}

/// Approximate per-instance marginals: matches of the same instance combine
/// by noisy-or, as if independent.
pub fn merge_noisy_or_marginals<I>(items: I) -> BTreeMap<CeInstanceKey, f64>
where
    I: IntoIterator<Item = (CeInstanceKey, f64)>,
{
    let mut grouped: BTreeMap<CeInstanceKey, Vec<f64>> = BTreeMap::new();
    for (key, p) in items {
        grouped.entry(key).or_default().push(p);
    }
    grouped
        .into_iter()
        .map(|(k, ps)| (k, combine_noisy_or(&ps)))
        .collect()
}

/// MAP selection: the maximum-probability match; ties broken by earliest
/// last-event timestamp, then by lexicographic event ids.
pub fn map_query<'m, M, FP, FT, FI>(
    matches: &'m [M],
    prob: FP,
    last_ts: FT,
    ids: FI,
) -> Result<&'m M, ProbError>
where
    FP: Fn(&M) -> f64,
    FT: Fn(&M) -> Timestamp,
    FI: Fn(&M) -> Vec<u64>,
{
    if matches.is_empty() {
        return Err(ProbError::EmptyMatchSet);
    }
    let mut best = &matches[0];
    for m in &matches[1..] {
        let (pb, pm) = (prob(best), prob(m));
        let better = if pm != pb {
            pm > pb
        } else if last_ts(m) != last_ts(best) {
            last_ts(m) < last_ts(best)
        } else {
            ids(m) < ids(best)
        };
        if better {
            best = m;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sel(ty: &str, p: f64) -> SelectedEvent<'_> {
        SelectedEvent {
            event_type: ty,
            alt_prob: p,
            occurrence: p,
            alt_count: 1,
        }
    }

    #[test]
    fn independent_product_matches_demo_values() {
        let events = [
            sel("hasBall", 0.7),
            sel("hasBall", 0.9),
            sel("shooting", 0.85),
            sel("ballInNet", 0.9),
        ];
        let p = match_prob_independent(&events, 1.0);
        assert!((p - 0.48195).abs() < 1e-12);

        let events = [
            sel("hasBall", 0.8),
            sel("hasBall", 0.9),
            sel("shooting", 0.85),
            sel("ballInNet", 0.9),
        ];
        assert!((match_prob_independent(&events, 1.0) - 0.5508).abs() < 1e-12);

        assert!((match_prob_independent(&[sel("a", 1.0), sel("b", 1.0)], 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn markov_chain_replaces_marginal() {
        let mut cpt = Cpt::new();
        cpt.insert("shooting", "ballInNet", 0.95);
        let events = [
            sel("hasBall", 0.7),
            sel("hasBall", 0.9),
            sel("shooting", 0.85),
            sel("ballInNet", 0.9),
        ];
        let p = match_prob_markov(&events, &cpt, 1.0);
        assert!((p - 0.508725).abs() < 1e-12);
    }

    #[test]
    fn markov_empty_cpt_equals_independent() {
        let cpt = Cpt::new();
        let events = [sel("a", 0.3), sel("b", 0.5), sel("c", 0.7)];
        assert_eq!(
            match_prob_markov(&events, &cpt, 1.0),
            match_prob_independent(&events, 1.0)
        );
    }

    #[test]
    fn markov_all_ones_reduces_to_first() {
        let mut cpt = Cpt::new();
        cpt.insert("a", "b", 1.0);
        cpt.insert("b", "c", 1.0);
        let events = [sel("a", 0.3), sel("b", 0.5), sel("c", 0.7)];
        assert!((match_prob_markov(&events, &cpt, 1.0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn decay_cases() {
        assert_eq!(apply_decay(0.8, 7, 1.0), 0.8);
        assert!((apply_decay(0.5, 2, 0.9) - 0.405).abs() < 1e-12);
        assert_eq!(apply_decay(0.5, 0, 0.9), 0.5);
    }

    #[test]
    fn rule_prob_composition() {
        assert!((apply_rule_prob(0.9, 0.5) - 0.45).abs() < 1e-12);
        assert_eq!(apply_rule_prob(1.0, 0.37), 0.37);
        assert_eq!(apply_rule_prob(0.9, 0.0), 0.0);
    }

    #[test]
    fn noisy_or_cases() {
        assert!((combine_noisy_or(&[0.9, 0.7]) - 0.97).abs() < 1e-12);
        assert!((combine_noisy_or(&[0.42]) - 0.42).abs() < 1e-12);
        assert_eq!(combine_noisy_or(&[]), 0.0);
    }

    #[test]
    fn noisy_or_bounds() {
        let cases: &[&[f64]] = &[&[0.1, 0.2], &[0.5, 0.5, 0.5], &[0.0, 0.9], &[1.0, 0.3]];
        for probs in cases {
            let v = combine_noisy_or(probs);
            let max = probs.iter().copied().fold(0.0, f64::max);
            let sum: f64 = probs.iter().sum();
            assert!(v >= max - 1e-12);
            assert!(v <= sum.min(1.0) + 1e-12);
        }
    }

    #[test]
    fn cpt_json_roundtrip() {
        let cpt = Cpt::from_json(r#"{"shooting->ballInNet": 0.95, "a->b": 0.5}"#).unwrap();
        assert_eq!(cpt.get("shooting", "ballInNet"), Some(0.95));
        assert_eq!(cpt.get("a", "b"), Some(0.5));
        assert_eq!(cpt.get("b", "a"), None);
        assert!(Cpt::from_json(r#"{"nope": 0.5}"#).is_err());
        assert!(Cpt::from_json(r#"{"a->b": 1.5}"#).is_err());
    }

    #[test]
    fn map_query_tie_breaks() {
        #[derive(Debug)]
        struct M(f64, u64, Vec<u64>);
        let ms = vec![
            M(0.48195, 9, vec![4, 6, 7, 9]),
            M(0.5508, 9, vec![3, 6, 7, 9]),
            M(0.61965, 9, vec![0, 6, 7, 9]),
        ];
        let best = map_query(&ms, |m| m.0, |m| Timestamp(m.1), |m| m.2.clone()).unwrap();
        assert_eq!(best.2, vec![0, 6, 7, 9]);

        let ms = vec![M(0.5, 7, vec![2]), M(0.5, 5, vec![1])];
        let best = map_query(&ms, |m| m.0, |m| Timestamp(m.1), |m| m.2.clone()).unwrap();
        assert_eq!(best.1, 5);

        let single = vec![M(0.1, 1, vec![0])];
        assert_eq!(
            map_query(&single, |m| m.0, |m| Timestamp(m.1), |m| m.2.clone())
                .unwrap()
                .1,
            1
        );

        let empty: Vec<M> = Vec::new();
        assert_eq!(
            map_query(&empty, |m| m.0, |m| Timestamp(m.1), |m| m.2.clone())
                .unwrap_err()
                .code(),
            "EMPTY_MATCH_SET"
        );
    }
}
