//! Event data model: timestamps, attribute values, probabilistic events with
//! annotated-disjunction alternatives, and event histories.
//!
//! A [`ProbEvent`] carries one or more mutually exclusive [`Alternative`]s;
//! the residual mass `1 - sum(probs)` is the probability that the event did
//! not occur at all. An [`EventHistory`] fixes one choice (an alternative or
//! non-occurrence) for every event in scope; histories are the atoms of the
//! probability space.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used by all probability-sum and normalization checks.
pub const PROB_EPS: f64 = 1e-9;

/// Point timestamp, a non-negative integer in a configured stream-level unit
/// (seconds by default; the unit is a label, not per-value state).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    /// Signed difference, closed over i64 for predicate arithmetic.
    pub fn diff(self, other: Timestamp) -> i64 {
        self.0 as i64 - other.0 as i64
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Scalar attribute value. Comparisons are defined within the same tag only,
/// except that Int and Float form one numeric family and compare by value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
}

impl AttrValue {
    pub fn tag(&self) -> &'static str {
        match self {
            AttrValue::Str(_) => "string",
            AttrValue::Int(_) => "int",
            AttrValue::Float(_) => "float",
            AttrValue::Bool(_) => "bool",
        }
    }

    /// Comparison under the value model: numeric family compares by value,
    /// otherwise same-tag only. `None` marks an ill-typed comparison.
    pub fn compare(&self, other: &AttrValue) -> Option<Ordering> {
        use AttrValue::*;
        match (self, other) {
            (Str(a), Str(b)) => Some(a.cmp(b)),
            (Bool(a), Bool(b)) => Some(a.cmp(b)),
            (Int(a), Int(b)) => Some(a.cmp(b)),
            (Float(a), Float(b)) => a.partial_cmp(b),
            (Int(a), Float(b)) => (*a as f64).partial_cmp(b),
            (Float(a), Int(b)) => a.partial_cmp(&(*b as f64)),
            _ => None,
        }
    }

    /// Total order used for deterministic keying (BTreeMap keys, output
    /// sorting). Orders first by tag, then by value; floats via total_cmp.
    pub fn total_cmp(&self, other: &AttrValue) -> Ordering {
        use AttrValue::*;
        fn rank(v: &AttrValue) -> u8 {
            match v {
                Str(_) => 0,
                Int(_) => 1,
                Float(_) => 2,
                Bool(_) => 3,
            }
        }
        match (self, other) {
            (Str(a), Str(b)) => a.cmp(b),
            (Int(a), Int(b)) => a.cmp(b),
            (Float(a), Float(b)) => a.total_cmp(b),
            (Bool(a), Bool(b)) => a.cmp(b),
            (a, b) => rank(a).cmp(&rank(b)),
        }
    }
}

impl PartialEq for AttrValue {
    fn eq(&self, other: &Self) -> bool {
        self.total_cmp(other) == Ordering::Equal
    }
}
impl Eq for AttrValue {}

impl PartialOrd for AttrValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.total_cmp(other))
    }
}
impl Ord for AttrValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Str(s) => write!(f, "{s}"),
            AttrValue::Int(i) => write!(f, "{i}"),
            AttrValue::Float(x) => write!(f, "{x}"),
            AttrValue::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// Stream-scoped event identifier. Assigned by ingestion order when the
/// input carries none; lineage literals need stable identity.
pub type EventId = u64;

/// One mutually exclusive outcome of a probabilistic event: a full attribute
/// assignment plus its probability. Attributes are kept in a canonical order
/// (input attributes sorted by name; produced attributes in head order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub attrs: Vec<(String, AttrValue)>,
    pub prob: f64,
}

impl Alternative {
    pub fn attr(&self, name: &str) -> Option<&AttrValue> {
        self.attrs.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

/// A timestamped probabilistic simple event with annotated-disjunction
/// alternatives. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbEvent {
    pub id: EventId,
    pub event_type: String,
    pub ts: Timestamp,
    pub alternatives: Vec<Alternative>,
}

impl ProbEvent {
    /// Probability that the event did not occur at all.
    pub fn non_occurrence(&self) -> f64 {
        (1.0 - self.occurrence()).max(0.0)
    }

    /// Total occurrence probability (sum over alternatives).
    pub fn occurrence(&self) -> f64 {
        self.alternatives.iter().map(|a| a.prob).sum()
    }

    pub fn is_crisp(&self) -> bool {
        self.alternatives.len() == 1 && (self.alternatives[0].prob - 1.0).abs() <= PROB_EPS
    }
}

/// Raw decoded event record, the wire shape prior to validation. Either
/// `alts` is present, or the single-alternative shorthand `args` (+ optional
/// `prob`, defaulting to 1.0 for crisp events) is used.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawEvent {
    #[serde(rename = "type")]
    pub event_type: Option<String>,
    pub ts: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alts: Option<Vec<RawAlternative>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub args: Option<BTreeMap<String, AttrValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawAlternative {
    pub args: BTreeMap<String, AttrValue>,
    #[serde(default = "default_prob")]
    pub prob: f64,
}

fn default_prob() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EventError {
    #[error("PROB_SUM_EXCEEDED: alternative probabilities sum to {sum} > 1")]
    ProbSumExceeded { sum: String },
    #[error("NEGATIVE_PROB: alternative probability {prob} out of [0,1]")]
    NegativeProb { prob: String },
    #[error("MISSING_FIELD: {field}")]
    MissingField { field: &'static str },
    #[error("MIXED_ATTR_KEYS: alternatives disagree on attribute keys")]
    MixedAttrKeys,
    #[error("INCOMPLETE_HISTORY: no choice recorded for event {id}")]
    IncompleteHistory { id: EventId },
}

impl EventError {
    pub fn code(&self) -> &'static str {
        match self {
            EventError::ProbSumExceeded { .. } => "PROB_SUM_EXCEEDED",
            EventError::NegativeProb { .. } => "NEGATIVE_PROB",
            EventError::MissingField { .. } => "MISSING_FIELD",
            EventError::MixedAttrKeys => "MIXED_ATTR_KEYS",
            EventError::IncompleteHistory { .. } => "INCOMPLETE_HISTORY",
        }
    }
}

/// Validates a raw record into a [`ProbEvent`]. Crisp events normalize to a
/// single alternative with prob 1.0; `fallback_id` is used when the record
/// carries no id (callers pass the ingestion index).
pub fn validate_event(raw: &RawEvent, fallback_id: EventId) -> Result<ProbEvent, EventError> {
    let event_type = raw
        .event_type
        .clone()
        .ok_or(EventError::MissingField { field: "type" })?;
    let ts = raw.ts.ok_or(EventError::MissingField { field: "ts" })?;

    let alts: Vec<Alternative> = match (&raw.alts, &raw.args) {
        (Some(alts), None) => alts
            .iter()
            .map(|a| Alternative {
                attrs: a.args.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                prob: a.prob,
            })
            .collect(),
        (None, Some(args)) => vec![Alternative {
            attrs: args.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            prob: raw.prob.unwrap_or(1.0),
        }],
        (Some(_), Some(_)) | (None, None) => {
            return Err(EventError::MissingField {
                field: "alts or args (exactly one)",
            })
        }
    };
    if alts.is_empty() {
        return Err(EventError::MissingField { field: "alts" });
    }

    let mut sum = 0.0;
    for a in &alts {
        if !(0.0..=1.0 + PROB_EPS).contains(&a.prob) || a.prob.is_nan() {
            return Err(EventError::NegativeProb {
                prob: format!("{}", a.prob),
            });
        }
        sum += a.prob;
    }
    if sum > 1.0 + PROB_EPS {
        return Err(EventError::ProbSumExceeded {
            sum: format!("{sum}"),
        });
    }

    let keys: Vec<&String> = alts[0].attrs.iter().map(|(k, _)| k).collect();
    for a in &alts[1..] {
        let k2: Vec<&String> = a.attrs.iter().map(|(k, _)| k).collect();
        if k2 != keys {
            return Err(EventError::MixedAttrKeys);
        }
    }

    Ok(ProbEvent {
        id: raw.id.unwrap_or(fallback_id),
        event_type,
        ts: Timestamp(ts),
        alternatives: alts,
    })
}

/// One joint choice per event: a chosen alternative index or non-occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Alt(usize),
    NonOccurrence,
}

/// An event history (possible world) over a fixed event set.
#[derive(Debug, Clone, Default)]
pub struct EventHistory {
    pub choices: BTreeMap<EventId, Choice>,
}

impl EventHistory {
    pub fn choice(&self, id: EventId) -> Option<Choice> {
        self.choices.get(&id).copied()
    }
}

/// Number of event histories spanned by the given events:
/// the product over events of (alternatives + 1).
pub fn history_space_size(events: &[ProbEvent]) -> u128 {
    events
        .iter()
        .map(|e| e.alternatives.len() as u128 + 1)
        .try_fold(1u128, |acc, n| acc.checked_mul(n))
        .unwrap_or(u128::MAX)
}

/// Probability of a history under event independence: the product of the
/// chosen alternatives' probabilities (non-occurrence contributes the
/// residual mass).
pub fn history_prob(h: &EventHistory, events: &[ProbEvent]) -> Result<f64, EventError> {
    let mut p = 1.0;
    for e in events {
        let c = h
            .choice(e.id)
            .ok_or(EventError::IncompleteHistory { id: e.id })?;
        p *= match c {
            Choice::Alt(i) => e.alternatives[i].prob,
            Choice::NonOccurrence => e.non_occurrence(),
        };
    }
    Ok(p)
}

/// Visits every history over `events`, passing the joint choice vector
/// (parallel to `events`) and its probability. Enumeration order is
/// deterministic: per event, alternatives first (in order), then
/// non-occurrence.
pub fn for_each_history<F: FnMut(&[Choice], f64)>(events: &[ProbEvent], mut f: F) {
    let mut choices = vec![Choice::NonOccurrence; events.len()];
    fn rec<F: FnMut(&[Choice], f64)>(
        events: &[ProbEvent],
        idx: usize,
        weight: f64,
        choices: &mut Vec<Choice>,
        f: &mut F,
    ) {
        if idx == events.len() {
            f(choices, weight);
            return;
        }
        let e = &events[idx];
        for (i, alt) in e.alternatives.iter().enumerate() {
            choices[idx] = Choice::Alt(i);
            rec(events, idx + 1, weight * alt.prob, choices, f);
        }
        choices[idx] = Choice::NonOccurrence;
        rec(events, idx + 1, weight * e.non_occurrence(), choices, f);
    }
    rec(events, 0, 1.0, &mut choices, &mut f);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(ty: &str, ts: u64, args: &[(&str, AttrValue)], prob: f64) -> RawEvent {
        RawEvent {
            event_type: Some(ty.to_string()),
            ts: Some(ts),
            id: None,
            alts: None,
            args: Some(
                args.iter()
                    .map(|(k, v)| (k.to_string(), v.clone()))
                    .collect(),
            ),
            prob: Some(prob),
        }
    }

    fn ev(ty: &str, ts: u64, prob: f64, id: EventId) -> ProbEvent {
        validate_event(&raw(ty, ts, &[("x", AttrValue::Int(1))], prob), id).unwrap()
    }

    #[test]
    fn table_style_event_has_residual_mass() {
        let e = validate_event(
            &raw("hasBall", 4, &[("player", AttrValue::Str("p2".into()))], 0.7),
            0,
        )
        .unwrap();
        assert!((e.non_occurrence() - 0.3).abs() < 1e-12);
        assert_eq!(e.ts, Timestamp(4));
    }

    #[test]
    fn crisp_event_normalizes() {
        let e = ev("e", 0, 1.0, 0);
        assert!(e.is_crisp());
        assert!(e.non_occurrence().abs() < 1e-12);
    }

    #[test]
    fn prob_sum_exceeded() {
        let r = RawEvent {
            event_type: Some("e".into()),
            ts: Some(0),
            id: None,
            alts: Some(vec![
                RawAlternative {
                    args: [("x".to_string(), AttrValue::Int(1))].into_iter().collect(),
                    prob: 0.7,
                },
                RawAlternative {
                    args: [("x".to_string(), AttrValue::Int(2))].into_iter().collect(),
                    prob: 0.5,
                },
            ]),
            args: None,
            prob: None,
        };
        let err = validate_event(&r, 0).unwrap_err();
        assert_eq!(err.code(), "PROB_SUM_EXCEEDED");
    }

    #[test]
    fn negative_prob_and_missing_fields() {
        let err = validate_event(&raw("e", 0, &[], -0.1), 0).unwrap_err();
        assert_eq!(err.code(), "NEGATIVE_PROB");

        let mut r = raw("e", 0, &[], 0.5);
        r.event_type = None;
        assert_eq!(validate_event(&r, 0).unwrap_err().code(), "MISSING_FIELD");
        let mut r = raw("e", 0, &[], 0.5);
        r.ts = None;
        assert_eq!(validate_event(&r, 0).unwrap_err().code(), "MISSING_FIELD");
    }

    #[test]
    fn mixed_attr_keys_rejected() {
        let r = RawEvent {
            event_type: Some("e".into()),
            ts: Some(0),
            id: None,
            alts: Some(vec![
                RawAlternative {
                    args: [("x".to_string(), AttrValue::Int(1))].into_iter().collect(),
                    prob: 0.3,
                },
                RawAlternative {
                    args: [("y".to_string(), AttrValue::Int(2))].into_iter().collect(),
                    prob: 0.3,
                },
            ]),
            args: None,
            prob: None,
        };
        assert_eq!(validate_event(&r, 0).unwrap_err().code(), "MIXED_ATTR_KEYS");
    }

    #[test]
    fn validation_is_idempotent() {
        let e = validate_event(
            &raw("hasBall", 4, &[("player", AttrValue::Str("p2".into()))], 0.7),
            3,
        )
        .unwrap();
        let back = RawEvent {
            event_type: Some(e.event_type.clone()),
            ts: Some(e.ts.0),
            id: Some(e.id),
            alts: Some(
                e.alternatives
                    .iter()
                    .map(|a| RawAlternative {
                        args: a.attrs.iter().cloned().collect(),
                        prob: a.prob,
                    })
                    .collect(),
            ),
            args: None,
            prob: None,
        };
        assert_eq!(validate_event(&back, 99).unwrap(), e);
    }

    #[test]
    fn space_sizes() {
        let es: Vec<ProbEvent> = (0..3).map(|i| ev("e", i, 0.5, i)).collect();
        assert_eq!(history_space_size(&es), 8);
        let es: Vec<ProbEvent> = (0..10).map(|i| ev("e", i, 0.5, i)).collect();
        assert_eq!(history_space_size(&es), 1024);
        assert_eq!(history_space_size(&[]), 1);
    }

    #[test]
    fn history_probs() {
        let es = vec![ev("r", 0, 0.8, 0), ev("j", 1, 0.6, 1), ev("d", 2, 0.7, 2)];
        let all = EventHistory {
            choices: es.iter().map(|e| (e.id, Choice::Alt(0))).collect(),
        };
        assert!((history_prob(&all, &es).unwrap() - 0.336).abs() < 1e-12);

        let none = EventHistory {
            choices: es.iter().map(|e| (e.id, Choice::NonOccurrence)).collect(),
        };
        assert!((history_prob(&none, &es).unwrap() - 0.024).abs() < 1e-12);

        assert!((history_prob(&EventHistory::default(), &[]).unwrap() - 1.0).abs() < 1e-12);

        let incomplete = EventHistory::default();
        assert_eq!(
            history_prob(&incomplete, &es).unwrap_err().code(),
            "INCOMPLETE_HISTORY"
        );
    }

    #[test]
    fn histories_normalize_and_count() {
        let es = vec![
            ev("a", 0, 0.8, 0),
            ev("b", 1, 0.6, 1),
            validate_event(
                &RawEvent {
                    event_type: Some("c".into()),
                    ts: Some(2),
                    id: Some(2),
                    alts: Some(vec![
                        RawAlternative {
                            args: [("x".to_string(), AttrValue::Int(1))].into_iter().collect(),
                            prob: 0.5,
                        },
                        RawAlternative {
                            args: [("x".to_string(), AttrValue::Int(2))].into_iter().collect(),
                            prob: 0.2,
                        },
                    ]),
                    args: None,
                    prob: None,
                },
                2,
            )
            .unwrap(),
        ];
        let mut total = 0.0;
        let mut count = 0u128;
        for_each_history(&es, |_, w| {
            total += w;
            count += 1;
        });
        assert_eq!(count, history_space_size(&es));
        assert!((total - 1.0).abs() < PROB_EPS);
    }
}
