//! Probabilistic complex event recognition over uncertain event streams.
//!
//! The crate is organized around a pipeline:
//!
//! * [`event`] — the probabilistic event data model (annotated-disjunction
//!   events, event histories) shared by everything else.
//! * [`pattern`] — the rule DSL: abstract syntax, parser, and static checks.
//! * [`plan`] — compilation of a rule set into executable NFA plans plus a
//!   topologically ordered hierarchy plan.
//! * [`engine`] — the streaming recognition runtime: NFA runs, active
//!   instance stacks, windows, negation, pruning, hierarchy promotion.
//! * [`naive`] — a direct recursive evaluator of the pattern algebra over
//!   whole streams; the semantic reference the automaton is checked against.
//! * [`prob`] — probability models, lineage construction, exact marginals by
//!   Shannon expansion, MAP queries, and the possible-worlds oracle.
//! * [`synth`] — seeded synthetic stream/rule generation and the in-memory
//!   benchmark loop.

pub mod engine;
pub mod event;
pub mod naive;
pub mod pattern;
pub mod plan;
pub mod prob;
pub mod synth;

pub use engine::{Engine, EngineConfig, MatchRecord};
pub use event::{AttrValue, Alternative, EventHistory, ProbEvent, Timestamp};
pub use pattern::{parse_rules, Rule, RuleSet};
pub use plan::{compile, HierarchyPlan, NfaPlan};
pub use prob::{CeInstanceKey, Cpt, Lineage, ProbModel};
