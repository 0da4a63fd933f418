//! Compilation of a validated rule set into executable automaton plans: one
//! NFA-with-buffer plan per (rule, disjunct, interleaving) branch, plus a
//! topologically ordered hierarchy plan.
//!
//! Compilation is pure and total on validated rule sets; equal input yields
//! byte-identical plans (see [`dump`]).

mod compiler;
mod dump;

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use thiserror::Error;

use crate::pattern::{Atom, Expr, Pos, Predicate, RuleSet};

/// How a state's selected event relates in time to the previous selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Joint {
    /// Strict succession (sequence semantics): ts must increase.
    Strict,
    /// Tie-permitting succession (unordered co-occurrence branches).
    TieOk,
}

/// One positive automaton state: the atom it matches, predicates that become
/// checkable when it binds, and its temporal joint to the previous state.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomState {
    pub atom: Atom,
    pub early: Vec<Predicate>,
    pub joint: Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Start,
    Atom(AtomState),
    Accept,
}

/// A positive element of the branch: either a single state or a Kleene group
/// of contiguous states matched one or more times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    /// Positive state indices covered (1-based, contiguous).
    pub states: Range<usize>,
    pub star: bool,
}

/// Negation form, statically distinguished by the negated atom's time term.
#[derive(Debug, Clone, PartialEq)]
pub enum NegForm {
    /// Time variable bound by a positive atom: absence at that instant.
    BoundTime,
    /// Wildcard time inside a sequence: absence strictly between the adjacent
    /// positive elements (window bounds at the ends).
    Gap {
        after_element: Option<usize>,
        before_element: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegCheck {
    pub atom: Atom,
    /// Predicates scoped to the negation (from a Select wrapped by the Not);
    /// they reference bound variables only, so they gate whether the check
    /// applies at all.
    pub preds: Vec<Predicate>,
    pub form: NegForm,
}

/// Window anchoring: `within [0,b]` is relative to the first matched event;
/// nonzero lower bounds are absolute stream-time bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSpec {
    Relative { span: u64 },
    Absolute { lo: u64, hi: u64 },
}

impl WindowSpec {
    /// Latest timestamp an event may have, given the first selected
    /// timestamp; used as the run's eviction deadline.
    pub fn deadline(&self, first_ts: u64) -> u64 {
        match self {
            WindowSpec::Relative { span } => first_ts.saturating_add(*span),
            WindowSpec::Absolute { hi, .. } => *hi,
        }
    }
}

/// One head of the produced CE: its probability and attribute expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSpec {
    pub prob: f64,
    pub attr_exprs: Vec<Expr>,
}

/// What the plan produces on a full match.
#[derive(Debug, Clone, PartialEq)]
pub struct Produce {
    pub ce_type: String,
    /// Main head first, then alternative heads; probabilities sum to <= 1.
    pub heads: Vec<HeadSpec>,
    /// Expression for the produced timestamp.
    pub ts_expr: Expr,
    /// Derived-variable definitions, evaluated before heads and predicates
    /// that reference them.
    pub mappings: Vec<(String, Expr)>,
}

/// Transition table entry (derived from the state list; kept materialized
/// for plan dumps and golden tests).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub event_type: String,
    pub early: Vec<Predicate>,
    pub kind: TransitionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionKind {
    Advance,
    KleeneLoop,
}

/// The compiled automaton for one branch of one rule.
#[derive(Debug, Clone, PartialEq)]
pub struct NfaPlan {
    pub rule_idx: usize,
    pub branch_idx: usize,
    /// Start, positive states in branch order, Accept.
    pub states: Vec<State>,
    pub transitions: Vec<Transition>,
    /// Skip flag per state; always true under skip-till-any-match.
    pub self_loop: Vec<bool>,
    /// Positive state indices that belong to a Kleene group.
    pub kleene_states: BTreeSet<usize>,
    /// Positive elements in branch order (states grouped by Kleene role).
    pub elements: Vec<Element>,
    pub negation_checks: Vec<NegCheck>,
    /// Predicates that cannot be placed at a state (they reference derived
    /// emit variables) and are checked after a full match.
    pub late_predicates: Vec<Predicate>,
    pub window: Option<WindowSpec>,
    pub produce: Produce,
    pub rule_prob: f64,
    /// For each state, an earlier state whose selection must be strictly
    /// before it in time (same-child ordering inside co-occurrence
    /// interleavings, where the direct joint only permits ties).
    pub strict_after: Vec<Option<usize>>,
    /// Constant-only predicates, checked once per run spawn.
    pub start_predicates: Vec<Predicate>,
}

impl NfaPlan {
    /// Number of positive states.
    pub fn positive_len(&self) -> usize {
        self.states.len() - 2
    }

    /// The atom state at 1-based positive index `i`.
    pub fn atom_state(&self, i: usize) -> &AtomState {
        match &self.states[i] {
            State::Atom(a) => a,
            _ => panic!("state {i} is not a positive state"),
        }
    }

    /// The Kleene group containing positive state `i`, if any.
    pub fn group_of(&self, i: usize) -> Option<&Element> {
        self.elements
            .iter()
            .find(|e| e.star && e.states.contains(&i))
    }

    pub fn element_of(&self, i: usize) -> usize {
        self.elements
            .iter()
            .position(|e| e.states.contains(&i))
            .expect("state belongs to an element")
    }

    /// Upper bound on every head probability, used for run prob bounds.
    pub fn max_head_prob(&self) -> f64 {
        self.produce
            .heads
            .iter()
            .map(|h| h.prob)
            .fold(0.0, f64::max)
    }
}

/// The full compiled rule set: plans in stable topological order plus the
/// level map and combining groups.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HierarchyPlan {
    pub plans: Vec<NfaPlan>,
    /// CE type -> hierarchy level (0 = defined over SDEs only).
    pub level: BTreeMap<String, u32>,
    /// CE type -> indices into `plans`; rules sharing a head form one
    /// combining group.
    pub groups: BTreeMap<String, Vec<usize>>,
}

impl HierarchyPlan {
    pub fn max_level(&self) -> u32 {
        self.level.values().copied().max().unwrap_or(0)
    }

    pub fn plan_level(&self, plan: &NfaPlan) -> u32 {
        self.level[&plan.produce.ce_type]
    }

    /// True when any plan declares gap or bound-time negation (the engine
    /// then needs the event buffer).
    pub fn needs_negation_buffer(&self) -> bool {
        self.plans.iter().any(|p| !p.negation_checks.is_empty())
    }

    /// Largest window deadline horizon, `None` when some plan is unwindowed.
    pub fn max_window_span(&self) -> Option<u64> {
        let mut max = 0u64;
        for p in &self.plans {
            match p.window {
                Some(WindowSpec::Relative { span }) => max = max.max(span),
                Some(WindowSpec::Absolute { hi, .. }) => max = max.max(hi),
                None => return None,
            }
        }
        Some(max)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("UNSUPPORTED_NESTING at {pos}: {message}")]
    UnsupportedNesting { pos: Pos, message: String },
    #[error("NEGATED_CE_UNSUPPORTED at {pos}: negated atom {ty} names a derived event type")]
    NegatedCeType { ty: String, pos: Pos },
    #[error("GAP_NEGATION_NEEDS_WINDOW at {pos}: {message}")]
    GapNegationNeedsWindow { pos: Pos, message: String },
    #[error("WINDOW_PLACEMENT at {pos}: a window must wrap the whole rule body")]
    WindowPlacement { pos: Pos },
}

impl CompileError {
    pub fn code(&self) -> &'static str {
        match self {
            CompileError::UnsupportedNesting { .. } => "UNSUPPORTED_NESTING",
            CompileError::NegatedCeType { .. } => "NEGATED_CE_UNSUPPORTED",
            CompileError::GapNegationNeedsWindow { .. } => "GAP_NEGATION_NEEDS_WINDOW",
            CompileError::WindowPlacement { .. } => "WINDOW_PLACEMENT",
        }
    }
}

pub use compiler::{compile, split_predicates, topo_levels};
pub use dump::{dump_hierarchy, dump_plan};

/// Convenience: compile a rule set and return the hierarchy plan.
pub fn compile_ruleset(rules: &RuleSet) -> Result<HierarchyPlan, CompileError> {
    compile(rules)
}
