//! Streaming recognition runtime: consumes a timestamp-ordered probabilistic
//! event stream, advances NFA runs under skip-till-any-match with zero
//! consumption, maintains active instance stacks, enforces windows and
//! negation, applies threshold pruning, and emits matches. Recognized CEs
//! are re-injected as events for higher hierarchy levels (level 0 streams
//! online; higher levels run over the merged, time-sorted input at flush).
//!
//! One engine instance owns its mutable state and is driven by one thread at
//! a time; independent instances share nothing.

mod ais;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::event::{AttrValue, EventId, ProbEvent, Timestamp};
use crate::naive::{eval_expr, eval_predicate};
use crate::pattern::Term;
use crate::plan::{HierarchyPlan, Joint, NegForm, NfaPlan, State, WindowSpec};
use crate::prob::{
    apply_decay, Lineage, Literal, ProbModel, ProbModelKind, SelectedEvent, VarProbs,
};

pub use ais::{Ais, AisEntry, AisRef};

/// Derived probability variables (rule firings, promoted CEs) live in a
/// reserved id range above any plausible input id.
pub const DERIVED_ID_BASE: EventId = 1 << 62;

/// Instance-level identity of one selected (event, alternative): promoted
/// events are identified by what they are (type, time, attribute values),
/// not by which match promoted them, so rule firings ground once per
/// instance-level body assignment exactly as the possible-worlds semantics
/// requires.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroundIdent {
    Base(EventId, usize),
    Derived(String, Timestamp, Vec<(String, AttrValue)>),
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Hard cap on live runs across all plans.
    pub run_cap: usize,
    /// Run-pruning threshold; 0 disables pruning.
    pub prune_epsilon: f64,
    /// Cap on distinct events per lineage for exact marginals.
    pub lineage_cap: usize,
    pub model: ProbModel,
    /// Treat promoted CEs as fresh independent events instead of carrying
    /// lineage upward.
    pub approx_hierarchy: bool,
    /// Reject matches outright when a negation candidate exists, instead of
    /// the probabilistic non-occurrence factor.
    pub hard_negation: bool,
    /// Evaluate every predicate at emission instead of at its early state
    /// (differential testing of the early/late split).
    pub force_late: bool,
    /// Evict dead runs and stale buffer entries as the stream advances.
    pub auto_evict: bool,
    /// Maintain per-event probability and lineage indexes (off for pure
    /// throughput runs).
    pub track_lineage: bool,
    /// Label for the stream's time unit.
    pub time_unit: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            run_cap: 100_000,
            prune_epsilon: 0.0,
            lineage_cap: 25,
            model: ProbModel::independent(),
            approx_hierarchy: false,
            hard_negation: false,
            force_late: false,
            auto_evict: true,
            track_lineage: true,
            time_unit: "seconds".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("OUT_OF_ORDER_EVENT: ts {ts} after {last}")]
    OutOfOrderEvent { ts: Timestamp, last: Timestamp },
    #[error("RUN_CAP_EXCEEDED: {live} live runs over the cap of {cap}")]
    RunCapExceeded { live: usize, cap: usize },
    #[error("DUPLICATE_EVENT_ID: {id}")]
    DuplicateEventId { id: EventId },
    #[error("HIERARCHY_ORDER_VIOLATION: {ty} is consumed at or below its producing level")]
    HierarchyOrderViolation { ty: String },
    #[error("PRODUCE_ERROR: {message}")]
    ProduceError { message: String },
    #[error("MODEL_NOT_MONOTONE: threshold pruning requires a monotone model")]
    ModelNotMonotone,
    #[error("STREAM_FLUSHED: ingest after flush")]
    StreamFlushed,
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::OutOfOrderEvent { .. } => "OUT_OF_ORDER_EVENT",
            EngineError::RunCapExceeded { .. } => "RUN_CAP_EXCEEDED",
            EngineError::DuplicateEventId { .. } => "DUPLICATE_EVENT_ID",
            EngineError::HierarchyOrderViolation { .. } => "HIERARCHY_ORDER_VIOLATION",
            EngineError::ProduceError { .. } => "PRODUCE_ERROR",
            EngineError::ModelNotMonotone => "MODEL_NOT_MONOTONE",
            EngineError::StreamFlushed => "STREAM_FLUSHED",
        }
    }
}

/// One selected event of a run.
#[derive(Debug, Clone)]
struct Sel {
    state: usize,
    ev: Arc<ProbEvent>,
    alt: usize,
}

/// A partial match: current state, selections, rigid bindings, and the
/// monotone nonincreasing probability upper bound.
#[derive(Debug, Clone)]
struct Run {
    state: usize,
    selected: Vec<Sel>,
    bindings: BTreeMap<String, AttrValue>,
    bound: f64,
    first_ts: Timestamp,
    last_ts: Timestamp,
    deadline: Option<Timestamp>,
    last_entry: AisRef,
}

#[derive(Debug, Default)]
struct PlanRt {
    runs: Vec<Run>,
    ais: Ais,
}

/// A completed run awaiting its negation horizon before validation.
#[derive(Debug, Clone)]
struct PendingMatch {
    plan_idx: usize,
    run: Run,
    release_ts: Timestamp,
}

/// Accumulated contributions to one promoted CE instance; derivations
/// combine by noisy-or for the re-injected probability (the exact marginal
/// lives in the instance's lineage).
#[derive(Debug, Clone)]
struct PromotedAcc {
    id: EventId,
    level: u32,
    probs: Vec<f64>,
}

/// A fully validated, emitted match for one head of one rule.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub plan_idx: usize,
    pub rule_idx: usize,
    pub head_idx: usize,
    pub ce_type: String,
    /// Produced attributes, keyed a0..aN in head order.
    pub attrs: Vec<(String, AttrValue)>,
    pub ts: Timestamp,
    /// Pattern probability under the configured model, including negation
    /// factors, before the rule probability and decay.
    pub match_prob: f64,
    pub head_prob: f64,
    pub decay_factor: f64,
    /// Reported probability: head_prob * match_prob * decay_factor.
    pub prob: f64,
    /// Selected (event id, alternative) pairs in selection order.
    pub selected: Vec<(EventId, usize)>,
    pub last_event_ts: Timestamp,
    /// Atom-uid-labeled selection plus final bindings: the match identity
    /// shared with the reference evaluator.
    pub identity: (Vec<(u32, EventId, usize)>, Vec<(String, AttrValue)>),
    pub lineage: Lineage,
    /// Id of the event this match was promoted as (0 when not promoted).
    pub promoted_id: EventId,
}

impl MatchRecord {
    pub fn instance_key(&self) -> crate::prob::CeInstanceKey {
        crate::prob::CeInstanceKey {
            ce_type: self.ce_type.clone(),
            attrs: self.attrs.clone(),
            ts: self.ts,
        }
    }
}

/// The recognition engine.
pub struct Engine {
    plans: Arc<HierarchyPlan>,
    cfg: EngineConfig,
    rt: Vec<PlanRt>,
    level0_plans: Vec<usize>,
    /// Input events in arrival order (timestamp-sorted).
    buffer: Vec<Arc<ProbEvent>>,
    need_buffer: bool,
    keep_all_buffer: bool,
    last_ts: Option<Timestamp>,
    seen_ids: HashSet<EventId>,
    next_derived_id: EventId,
    var_probs: VarProbs,
    /// Promoted-event id -> per-alternative lineage (exact hierarchy mode).
    derived_lineage: BTreeMap<EventId, Vec<Lineage>>,
    /// (rule, instance-level grounding) -> firing-variable id.
    fire_vars: BTreeMap<
        (usize, Vec<(u32, GroundIdent)>, Vec<(String, AttrValue)>),
        EventId,
    >,
    emitted: BTreeSet<(usize, Vec<(u32, EventId, usize)>, Vec<(String, AttrValue)>)>,
    pending: Vec<PendingMatch>,
    /// Accumulated promotions keyed by CE instance: distinct derivations of
    /// one instance merge into one re-injected event.
    promoted: BTreeMap<(String, Timestamp, Vec<(String, AttrValue)>), PromotedAcc>,
    /// Events promoted through the public API.
    injected: Vec<(u32, Arc<ProbEvent>)>,
    /// Event types consumed by at least one plan.
    consumed_types: BTreeSet<String>,
    flushed: bool,
    peak_live_runs: usize,
    evicted_runs: usize,
    evicted_entries: usize,
}

impl Engine {
    pub fn new(plans: HierarchyPlan, cfg: EngineConfig) -> Self {
        let need_buffer = plans.needs_negation_buffer()
            || cfg.model.decay.is_some()
            || plans.max_level() > 0;
        let keep_all_buffer = plans.max_level() > 0 || plans.max_window_span().is_none();
        let consumed_types = plans
            .plans
            .iter()
            .flat_map(|p| {
                p.states.iter().filter_map(|s| match s {
                    State::Atom(a) => Some(a.atom.event_type.clone()),
                    _ => None,
                })
            })
            .collect();
        let rt = plans
            .plans
            .iter()
            .map(|p| PlanRt {
                runs: Vec::new(),
                ais: Ais::new(p.positive_len()),
            })
            .collect();
        let level0_plans = (0..plans.plans.len())
            .filter(|&i| plans.plan_level(&plans.plans[i]) == 0)
            .collect();
        Engine {
            plans: Arc::new(plans),
            cfg,
            rt,
            level0_plans,
            buffer: Vec::new(),
            need_buffer,
            keep_all_buffer,
            last_ts: None,
            seen_ids: HashSet::new(),
            next_derived_id: DERIVED_ID_BASE,
            var_probs: VarProbs::new(),
            derived_lineage: BTreeMap::new(),
            fire_vars: BTreeMap::new(),
            emitted: BTreeSet::new(),
            pending: Vec::new(),
            promoted: BTreeMap::new(),
            injected: Vec::new(),
            consumed_types,
            flushed: false,
            peak_live_runs: 0,
            evicted_runs: 0,
            evicted_entries: 0,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn plans(&self) -> &HierarchyPlan {
        &self.plans
    }

    pub fn live_runs(&self) -> usize {
        self.rt.iter().map(|r| r.runs.len()).sum()
    }

    pub fn peak_live_runs(&self) -> usize {
        self.peak_live_runs
    }

    /// Probability index over input events and firing variables, the
    /// probability space behind emitted lineages.
    pub fn var_probs(&self) -> &VarProbs {
        &self.var_probs
    }

    pub fn ais(&self, plan_idx: usize) -> &Ais {
        &self.rt[plan_idx].ais
    }

    /// Consumes one stream event. The stream must be timestamp-ordered
    /// (equal timestamps allowed). Returns the matches that became final.
    pub fn ingest(&mut self, event: ProbEvent) -> Result<Vec<MatchRecord>, EngineError> {
        if self.flushed {
            return Err(EngineError::StreamFlushed);
        }
        if let Some(last) = self.last_ts {
            if event.ts < last {
                return Err(EngineError::OutOfOrderEvent {
                    ts: event.ts,
                    last,
                });
            }
        }
        let mut out = Vec::new();
        if self.last_ts != Some(event.ts) {
            self.release_pending(Some(event.ts), &mut out)?;
            if self.cfg.auto_evict {
                self.evict(event.ts);
            }
        }
        self.last_ts = Some(event.ts);

        if event.id >= DERIVED_ID_BASE || !self.seen_ids.insert(event.id) {
            return Err(EngineError::DuplicateEventId { id: event.id });
        }
        if self.cfg.track_lineage {
            self.var_probs.insert(
                event.id,
                event.alternatives.iter().map(|a| a.prob).collect(),
            );
        }

        let ev = Arc::new(event);
        if self.need_buffer {
            self.buffer.push(ev.clone());
        }

        if self.consumed_types.contains(&ev.event_type) {
            let level0 = self.level0_plans.clone();
            self.feed_event(&ev, &level0, &mut out)?;
        }

        let live = self.live_runs();
        self.peak_live_runs = self.peak_live_runs.max(live);
        if live > self.cfg.run_cap {
            return Err(EngineError::RunCapExceeded {
                live,
                cap: self.cfg.run_cap,
            });
        }
        if self.cfg.prune_epsilon > 0.0 {
            self.prune_below(self.cfg.prune_epsilon)?;
        }
        sort_records(&mut out);
        Ok(out)
    }

    /// Ends the stream: releases pending matches and runs the hierarchy
    /// levels above 0 over the merged, time-sorted input.
    pub fn flush(&mut self) -> Result<Vec<MatchRecord>, EngineError> {
        if self.flushed {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        self.release_pending(None, &mut out)?;

        let max_level = self.plans.max_level();
        for level in 1..=max_level {
            let plan_ids: Vec<usize> = (0..self.plans.plans.len())
                .filter(|&i| self.plans.plan_level(&self.plans.plans[i]) == level)
                .collect();
            if plan_ids.is_empty() {
                continue;
            }
            let mut inputs: Vec<Arc<ProbEvent>> = self.buffer.clone();
            for ((ce_type, ts, attrs), acc) in &self.promoted {
                if acc.level < level {
                    inputs.push(Arc::new(ProbEvent {
                        id: acc.id,
                        event_type: ce_type.clone(),
                        ts: *ts,
                        alternatives: vec![crate::event::Alternative {
                            attrs: attrs.clone(),
                            prob: crate::prob::combine_noisy_or(&acc.probs).min(1.0),
                        }],
                    }));
                }
            }
            inputs.extend(
                self.injected
                    .iter()
                    .filter(|(l, _)| *l < level)
                    .map(|(_, e)| e.clone()),
            );
            inputs.sort_by_key(|e| (e.ts, e.id));
            for ev in inputs {
                if !self.consumed_types.contains(&ev.event_type) {
                    continue;
                }
                self.feed_event(&ev, &plan_ids, &mut out)?;
                let live = self.live_runs();
                self.peak_live_runs = self.peak_live_runs.max(live);
                if live > self.cfg.run_cap {
                    return Err(EngineError::RunCapExceeded {
                        live,
                        cap: self.cfg.run_cap,
                    });
                }
            }
            self.release_pending(None, &mut out)?;
        }
        self.flushed = true;
        sort_records(&mut out);
        Ok(out)
    }

    /// Removes runs whose window deadline has passed and, when safe, buffer
    /// events and stack entries no live run can reach. Match results are
    /// unaffected. Returns the count of evicted runs and entries.
    pub fn evict(&mut self, now: Timestamp) -> usize {
        let mut count = 0;
        for rt in &mut self.rt {
            let before = rt.runs.len();
            rt.runs.retain(|r| r.deadline.map_or(true, |d| d >= now));
            count += before - rt.runs.len();
        }
        self.evicted_runs += count;
        if !self.keep_all_buffer {
            if let Some(span) = self.plans.max_window_span() {
                let horizon = Timestamp(now.0.saturating_sub(span).saturating_sub(1));
                let keep_from = self
                    .buffer
                    .partition_point(|e| e.ts < horizon)
                    .min(self.buffer.len());
                if keep_from > 0 {
                    self.buffer.drain(..keep_from);
                    count += keep_from;
                }
                for rt in &mut self.rt {
                    let n = rt.ais.evict_before(horizon);
                    self.evicted_entries += n;
                    count += n;
                }
            }
        }
        count
    }

    /// Removes runs whose probability upper bound fell below epsilon.
    /// Sound because every built-in model is monotone nonincreasing.
    pub fn prune_below(&mut self, epsilon: f64) -> Result<usize, EngineError> {
        if !self.cfg.model.monotone {
            return Err(EngineError::ModelNotMonotone);
        }
        let mut count = 0;
        for rt in &mut self.rt {
            let before = rt.runs.len();
            rt.runs.retain(|r| r.bound >= epsilon);
            count += before - rt.runs.len();
        }
        Ok(count)
    }

    /// Re-injects a recognized CE as an input event for higher levels.
    pub fn promote(&mut self, event: ProbEvent, from_level: u32) -> Result<(), EngineError> {
        for plan in &self.plans.plans {
            if self.plans.plan_level(plan) <= from_level {
                let consumes = plan.states.iter().any(|s| match s {
                    State::Atom(a) => a.atom.event_type == event.event_type,
                    _ => false,
                });
                if consumes {
                    return Err(EngineError::HierarchyOrderViolation {
                        ty: event.event_type.clone(),
                    });
                }
            }
        }
        self.injected.push((from_level, Arc::new(event)));
        Ok(())
    }

    fn release_pending(
        &mut self,
        before: Option<Timestamp>,
        out: &mut Vec<MatchRecord>,
    ) -> Result<(), EngineError> {
        let mut staying = Vec::new();
        let pending = std::mem::take(&mut self.pending);
        for p in pending {
            let due = match before {
                Some(ts) => p.release_ts < ts,
                None => true,
            };
            if due {
                self.finalize(p.plan_idx, &p.run, out)?;
            } else {
                staying.push(p);
            }
        }
        self.pending = staying;
        Ok(())
    }

    /// Advances every run of the given plans on one event, spawns new runs,
    /// and queues or finalizes completions.
    fn feed_event(
        &mut self,
        ev: &Arc<ProbEvent>,
        plan_ids: &[usize],
        out: &mut Vec<MatchRecord>,
    ) -> Result<(), EngineError> {
        let plans = Arc::clone(&self.plans);
        for &plan_idx in plan_ids {
            let plan = &plans.plans[plan_idx];
            let mut additions: Vec<Run> = Vec::new();
            let mut completions: Vec<Run> = Vec::new();

            let rt = &mut self.rt[plan_idx];
            for run_i in 0..rt.runs.len() {
                let targets = successor_states(plan, rt.runs[run_i].state);
                for t in targets {
                    for alt in 0..ev.alternatives.len() {
                        let extended = {
                            let run = &rt.runs[run_i];
                            try_extend(plan, run, ev, alt, t, &self.cfg)
                        };
                        if let Some(mut next) = extended {
                            let pred = Some(rt.runs[run_i].last_entry);
                            next.last_entry =
                                rt.ais.record(t, ev.id, alt, ev.ts, pred);
                            route_run(plan, next, &mut additions, &mut completions);
                        }
                    }
                }
            }
            for alt in 0..ev.alternatives.len() {
                if let Some(mut spawned) = try_spawn(plan, ev, alt, &self.cfg) {
                    spawned.last_entry = rt.ais.record(1, ev.id, alt, ev.ts, None);
                    route_run(plan, spawned, &mut additions, &mut completions);
                }
            }
            rt.runs.extend(additions);

            for run in completions {
                let release_ts = self.completion_release_ts(plan_idx, &run);
                match (release_ts, self.last_ts) {
                    (Some(r), Some(now)) if r >= now && !self.flushed => {
                        self.pending.push(PendingMatch {
                            plan_idx,
                            run,
                            release_ts: r,
                        });
                    }
                    _ => self.finalize(plan_idx, &run, out)?,
                }
            }
        }
        Ok(())
    }

    /// Latest timestamp at which a negation candidate for this match could
    /// still arrive; `None` when every check is already settled.
    fn completion_release_ts(&self, plan_idx: usize, run: &Run) -> Option<Timestamp> {
        let plan = &self.plans.plans[plan_idx];
        let mut release: Option<Timestamp> = None;
        let mut bump = |ts: Timestamp| {
            release = Some(release.map_or(ts, |r: Timestamp| r.max(ts)));
        };
        for check in &plan.negation_checks {
            match &check.form {
                NegForm::BoundTime => {
                    if let Some(t) = resolve_instant(&check.atom, &run.bindings) {
                        bump(t);
                    }
                }
                NegForm::Gap {
                    before_element: None,
                    ..
                } => {
                    if let Some(w) = plan.window {
                        bump(Timestamp(w.deadline(run.first_ts.0)));
                    }
                }
                NegForm::Gap { .. } => {}
            }
        }
        release
    }

    fn finalize(
        &mut self,
        plan_idx: usize,
        run: &Run,
        out: &mut Vec<MatchRecord>,
    ) -> Result<(), EngineError> {
        let plans = Arc::clone(&self.plans);
        let plan = &plans.plans[plan_idx];

        // full re-validation: bindings, joints, every predicate, window
        let sels: Vec<(usize, &Arc<ProbEvent>, usize)> = run
            .selected
            .iter()
            .map(|s| (s.state, &s.ev, s.alt))
            .collect();
        let Some(env) = validate_selection(plan, &sels) else {
            return Ok(());
        };

        // negation checks against the buffer
        let Some((neg_factor, neg_literals)) =
            self.negation_outcome(plan, &run.selected, &env)
        else {
            return Ok(()); // hard-rejected
        };
        if neg_factor == 0.0 {
            return Ok(()); // no possible world satisfies the match
        }

        // identity and deduplication (one entry per match, all heads)
        let mut uid_sel: Vec<(u32, EventId, usize)> = run
            .selected
            .iter()
            .map(|s| (plan.atom_state(s.state).atom.uid, s.ev.id, s.alt))
            .collect();
        uid_sel.sort_unstable();
        let bindings_vec: Vec<(String, AttrValue)> =
            env.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let identity = (plan.rule_idx, uid_sel.clone(), bindings_vec.clone());
        if !self.emitted.insert(identity) {
            return Ok(());
        }

        // probabilities
        let selected_events: Vec<SelectedEvent<'_>> = run
            .selected
            .iter()
            .map(|s| SelectedEvent {
                event_type: &s.ev.event_type,
                alt_prob: s.ev.alternatives[s.alt].prob,
                occurrence: s.ev.occurrence(),
                alt_count: s.ev.alternatives.len(),
            })
            .collect();
        let match_prob = match &self.cfg.model.kind {
            ProbModelKind::Independent => {
                crate::prob::match_prob_independent(&selected_events, neg_factor)
            }
            ProbModelKind::Markov(cpt) => {
                crate::prob::match_prob_markov(&selected_events, cpt, neg_factor)
            }
        };
        let decay_factor = match self.cfg.model.decay {
            Some(d) => apply_decay(1.0, self.intervening_count(run), d),
            None => 1.0,
        };

        // produced timestamp
        let ts = match eval_expr(&plan.produce.ts_expr, &env) {
            Some(AttrValue::Int(t)) if t >= 0 => Timestamp(t as u64),
            other => {
                return Err(EngineError::ProduceError {
                    message: format!(
                        "head time for {} evaluated to {:?}",
                        plan.produce.ce_type, other
                    ),
                })
            }
        };

        // lineage: conjunction over selections (substituting promoted
        // events), negation literals, then one firing literal per head
        let base_lineage = if self.cfg.track_lineage {
            let mut l = Lineage::always();
            for s in &run.selected {
                if let Some(alts) = self.derived_lineage.get(&s.ev.id) {
                    l = l.and(&alts[s.alt]);
                } else {
                    l = l.and_literal(Literal::pos(s.ev.id, s.alt as u32));
                }
            }
            for lit in &neg_literals {
                l = l.and_literal(*lit);
            }
            l
        } else {
            Lineage::always()
        };
        // a single always-firing head needs no firing variable: the literal
        // would be true in every world
        let fire_needed =
            plan.produce.heads.len() > 1 || plan.produce.heads[0].prob < 1.0 - 1e-12;
        let fire_id = if fire_needed {
            let mut ground_sel: Vec<(u32, GroundIdent)> = run
                .selected
                .iter()
                .map(|s| {
                    let uid = plan.atom_state(s.state).atom.uid;
                    let ident = if s.ev.id >= DERIVED_ID_BASE {
                        GroundIdent::Derived(
                            s.ev.event_type.clone(),
                            s.ev.ts,
                            s.ev.alternatives[s.alt].attrs.clone(),
                        )
                    } else {
                        GroundIdent::Base(s.ev.id, s.alt)
                    };
                    (uid, ident)
                })
                .collect();
            ground_sel.sort();
            let fire_key = (plan.rule_idx, ground_sel, bindings_vec.clone());
            match self.fire_vars.get(&fire_key) {
                Some(&id) => Some(id),
                None => {
                    let id = self.next_derived_id;
                    self.next_derived_id += 1;
                    self.seen_ids.insert(id);
                    self.fire_vars.insert(fire_key, id);
                    if self.cfg.track_lineage {
                        self.var_probs
                            .insert(id, plan.produce.heads.iter().map(|h| h.prob).collect());
                    }
                    Some(id)
                }
            }
        } else {
            None
        };

        // heads
        let mut head_records = Vec::with_capacity(plan.produce.heads.len());
        for (head_idx, head) in plan.produce.heads.iter().enumerate() {
            let mut attrs = Vec::with_capacity(head.attr_exprs.len());
            for (i, e) in head.attr_exprs.iter().enumerate() {
                match eval_expr(e, &env) {
                    Some(v) => attrs.push((format!("a{i}"), v)),
                    None => {
                        return Err(EngineError::ProduceError {
                            message: format!(
                                "head attribute {i} of {} failed to evaluate",
                                plan.produce.ce_type
                            ),
                        })
                    }
                }
            }
            let lineage = match (self.cfg.track_lineage, fire_id) {
                (true, Some(id)) => base_lineage.and_literal(Literal::pos(id, head_idx as u32)),
                (true, None) => base_lineage.clone(),
                (false, _) => Lineage::always(),
            };
            head_records.push((head_idx, head.prob, attrs, lineage));
        }

        // promotion: one single-alternative event per distinct produced
        // instance; derivations of the same instance merge
        let referenced_above = self
            .plans
            .plans
            .iter()
            .any(|p| {
                self.plans.plan_level(p) > self.plans.plan_level(plan)
                    && p.states.iter().any(|s| match s {
                        State::Atom(a) => a.atom.event_type == plan.produce.ce_type,
                        _ => false,
                    })
            });
        let level = self.plans.plan_level(plan);

        let selected: Vec<(EventId, usize)> =
            run.selected.iter().map(|s| (s.ev.id, s.alt)).collect();
        for (head_idx, head_prob, attrs, lineage) in head_records {
            if self.cfg.track_lineage && lineage.is_false() {
                // the selection contradicts a promoted event's derivation:
                // no possible world satisfies this match
                continue;
            }
            let prob = head_prob * match_prob * decay_factor;
            let mut promoted_id = 0;
            if referenced_above {
                let key = (plan.produce.ce_type.clone(), ts, attrs.clone());
                let next_id = &mut self.next_derived_id;
                let seen = &mut self.seen_ids;
                let acc = self.promoted.entry(key).or_insert_with(|| {
                    let id = *next_id;
                    *next_id += 1;
                    seen.insert(id);
                    PromotedAcc {
                        id,
                        level,
                        probs: Vec::new(),
                    }
                });
                acc.probs.push(prob);
                promoted_id = acc.id;
                if self.cfg.track_lineage {
                    if self.cfg.approx_hierarchy {
                        let combined = crate::prob::combine_noisy_or(&acc.probs);
                        self.var_probs.insert(acc.id, vec![combined]);
                    } else {
                        let slot = self
                            .derived_lineage
                            .entry(acc.id)
                            .or_insert_with(|| vec![Lineage::none()]);
                        slot[0] = std::mem::take(&mut slot[0]).or(lineage.clone());
                    }
                }
            }
            out.push(MatchRecord {
                plan_idx,
                rule_idx: plan.rule_idx,
                head_idx,
                ce_type: plan.produce.ce_type.clone(),
                attrs,
                ts,
                match_prob,
                head_prob,
                decay_factor,
                prob,
                selected: selected.clone(),
                last_event_ts: run.last_ts,
                identity: (uid_sel.clone(), bindings_vec.clone()),
                lineage,
                promoted_id,
            });
        }
        Ok(())
    }

    /// Gap and bound-time negation: returns the probabilistic factor and the
    /// negative literals, or `None` when hard negation rejects the match.
    fn negation_outcome(
        &self,
        plan: &NfaPlan,
        selected: &[Sel],
        env: &BTreeMap<String, AttrValue>,
    ) -> Option<(f64, Vec<Literal>)> {
        if plan.negation_checks.is_empty() {
            return Some((1.0, Vec::new()));
        }
        let mut factor = 1.0;
        let mut literals = Vec::new();
        for check in &plan.negation_checks {
            if !check.preds.iter().all(|p| eval_predicate(p, env)) {
                continue;
            }
            let (lo, hi, lo_open, hi_open) = match &check.form {
                NegForm::BoundTime => {
                    let t = resolve_instant(&check.atom, env)?;
                    (t, t, false, false)
                }
                NegForm::Gap {
                    after_element,
                    before_element,
                } => {
                    let lo = match after_element {
                        Some(e) => (last_sel_of_element(plan, selected, *e)?.ev.ts, true),
                        None => match plan.window {
                            Some(WindowSpec::Absolute { lo, .. }) => (Timestamp(lo), false),
                            _ => return Some((0.0, Vec::new())),
                        },
                    };
                    let hi = match before_element {
                        Some(e) => (first_sel_of_element(plan, selected, *e)?.ev.ts, true),
                        None => match plan.window {
                            Some(w) => (Timestamp(w.deadline(selected[0].ev.ts.0)), false),
                            None => return Some((0.0, Vec::new())),
                        },
                    };
                    (lo.0, hi.0, lo.1, hi.1)
                }
            };
            if lo > hi {
                continue;
            }
            let from = self.buffer.partition_point(|e| e.ts < lo);
            for ev in &self.buffer[from..] {
                if ev.ts > hi {
                    break;
                }
                if (lo_open && ev.ts == lo) || (hi_open && ev.ts == hi) {
                    continue;
                }
                if ev.event_type != check.atom.event_type
                    || check.atom.terms.len() != ev.alternatives[0].attrs.len() + 1
                {
                    continue;
                }
                let selected_alt = selected
                    .iter()
                    .find(|s| s.ev.id == ev.id)
                    .map(|s| s.alt);
                let mut matching_mass = 0.0;
                let mut any_matching = false;
                for (alt_idx, alt) in ev.alternatives.iter().enumerate() {
                    if !alt_matches_neg_atom(&check.atom, alt, ev.ts, env) {
                        continue;
                    }
                    any_matching = true;
                    if selected_alt == Some(alt_idx) {
                        // the match itself selects a violating alternative
                        return Some((0.0, Vec::new()));
                    }
                    matching_mass += alt.prob;
                    literals.push(Literal::neg(ev.id, alt_idx as u32));
                }
                if !any_matching {
                    continue;
                }
                if self.cfg.hard_negation {
                    if ev.alternatives
                        .iter()
                        .enumerate()
                        .any(|(i, a)| a.prob > 0.0 && alt_matches_neg_atom(&check.atom, a, ev.ts, env) && selected_alt != Some(i))
                    {
                        return None;
                    }
                } else if selected_alt.is_some() {
                    // candidate is a selected event on a different
                    // alternative: given that choice, it cannot violate
                    continue;
                } else {
                    factor *= (1.0 - matching_mass).max(0.0);
                    if factor == 0.0 {
                        return Some((0.0, Vec::new()));
                    }
                }
            }
        }
        Some((factor, literals))
    }

    /// Unselected input events strictly between the match's first and last
    /// selected timestamps.
    fn intervening_count(&self, run: &Run) -> u64 {
        if run.selected.len() < 2 {
            return 0;
        }
        let lo = run.first_ts;
        let hi = run.last_ts;
        let from = self.buffer.partition_point(|e| e.ts <= lo);
        let mut count = 0u64;
        for ev in &self.buffer[from..] {
            if ev.ts >= hi {
                break;
            }
            if !run.selected.iter().any(|s| s.ev.id == ev.id) {
                count += 1;
            }
        }
        count
    }
}

fn sort_records(records: &mut [MatchRecord]) {
    records.sort_by(|a, b| {
        (a.plan_idx, &a.selected, a.head_idx).cmp(&(b.plan_idx, &b.selected, b.head_idx))
    });
}

/// States reachable from `state` on the next selection.
fn successor_states(plan: &NfaPlan, state: usize) -> Vec<usize> {
    let n = plan.positive_len();
    let mut out = Vec::with_capacity(2);
    if let Some(group) = plan.group_of(state) {
        let end = group.states.end - 1;
        if state < end {
            out.push(state + 1);
        } else {
            out.push(group.states.start); // next iteration
            if state + 1 <= n {
                out.push(state + 1);
            }
        }
    } else if state + 1 <= n {
        out.push(state + 1);
    }
    out
}

fn accept_eligible(plan: &NfaPlan, state: usize) -> bool {
    let n = plan.positive_len();
    if state != n {
        return false;
    }
    match plan.group_of(state) {
        Some(g) => state == g.states.end - 1,
        None => true,
    }
}

fn can_continue(plan: &NfaPlan, state: usize) -> bool {
    !successor_states(plan, state).is_empty()
}

fn route_run(
    plan: &NfaPlan,
    run: Run,
    additions: &mut Vec<Run>,
    completions: &mut Vec<Run>,
) {
    if accept_eligible(plan, run.state) {
        completions.push(run.clone());
    }
    if can_continue(plan, run.state) {
        additions.push(run);
    }
}

fn try_spawn(plan: &NfaPlan, ev: &Arc<ProbEvent>, alt: usize, cfg: &EngineConfig) -> Option<Run> {
    let st = plan.atom_state(1);
    if st.atom.event_type != ev.event_type
        || st.atom.terms.len() != ev.alternatives[alt].attrs.len() + 1
    {
        return None;
    }
    if let Some(w) = plan.window {
        match w {
            WindowSpec::Absolute { lo, hi } => {
                if ev.ts.0 < lo || ev.ts.0 > hi {
                    return None;
                }
            }
            WindowSpec::Relative { .. } => {}
        }
    }
    let bindings = unify(&st.atom, ev, alt, &BTreeMap::new())?;
    if !cfg.force_late {
        for p in plan.start_predicates.iter().chain(st.early.iter()) {
            if !eval_predicate(p, &bindings) {
                return None;
            }
        }
    }
    let model = &cfg.model;
    let a = &ev.alternatives[alt];
    let bound = plan.max_head_prob()
        * model.factor(
            None,
            &ev.event_type,
            a.prob,
            ev.occurrence(),
            ev.alternatives.len(),
        );
    Some(Run {
        state: 1,
        selected: vec![Sel {
            state: 1,
            ev: ev.clone(),
            alt,
        }],
        bindings,
        bound,
        first_ts: ev.ts,
        last_ts: ev.ts,
        deadline: plan.window.map(|w| Timestamp(w.deadline(ev.ts.0))),
        last_entry: (0, 0, 0),
    })
}

fn try_extend(
    plan: &NfaPlan,
    run: &Run,
    ev: &Arc<ProbEvent>,
    alt: usize,
    target: usize,
    cfg: &EngineConfig,
) -> Option<Run> {
    let st = plan.atom_state(target);
    if st.atom.event_type != ev.event_type
        || st.atom.terms.len() != ev.alternatives[alt].attrs.len() + 1
    {
        return None;
    }
    // temporal joint vs the previous selection
    let strict = match st.joint {
        Joint::Strict => true,
        Joint::TieOk => false,
    } || target <= run.state; // kleene loop is always strict succession
    if strict {
        if ev.ts <= run.last_ts {
            return None;
        }
    } else if ev.ts < run.last_ts {
        return None;
    }
    // same-child strictness inside co-occurrence interleavings
    if let Some(j) = plan.strict_after[target] {
        let prev = run.selected.iter().rev().find(|s| s.state == j)?;
        if ev.ts <= prev.ev.ts {
            return None;
        }
    }
    // window containment
    if let Some(w) = plan.window {
        match w {
            WindowSpec::Relative { span } => {
                if ev.ts.0.saturating_sub(run.first_ts.0) > span {
                    return None;
                }
            }
            WindowSpec::Absolute { lo, hi } => {
                if ev.ts.0 < lo || ev.ts.0 > hi {
                    return None;
                }
            }
        }
    }
    let bindings = unify(&st.atom, ev, alt, &run.bindings)?;
    if !cfg.force_late {
        for p in &st.early {
            if !eval_predicate(p, &bindings) {
                return None;
            }
        }
    }
    let a = &ev.alternatives[alt];
    let prev_type = run.selected.last().map(|s| s.ev.event_type.as_str());
    let factor = cfg.model.factor(
        prev_type,
        &ev.event_type,
        a.prob,
        ev.occurrence(),
        ev.alternatives.len(),
    );
    let bound = run.bound * factor;
    debug_assert!(
        bound <= run.bound + 1e-12,
        "probability bound must not increase"
    );
    let mut selected = run.selected.clone();
    selected.push(Sel {
        state: target,
        ev: ev.clone(),
        alt,
    });
    Some(Run {
        state: target,
        selected,
        bindings,
        bound,
        first_ts: run.first_ts,
        last_ts: ev.ts,
        deadline: run.deadline,
        last_entry: run.last_entry,
    })
}

/// Unifies an atom against one alternative of an event, extending bindings.
fn unify(
    atom: &crate::pattern::Atom,
    ev: &ProbEvent,
    alt: usize,
    bindings: &BTreeMap<String, AttrValue>,
) -> Option<BTreeMap<String, AttrValue>> {
    let a = &ev.alternatives[alt];
    let mut out = bindings.clone();
    for (term, (_, value)) in atom.attr_terms().iter().zip(a.attrs.iter()) {
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

/// Full re-validation of a selection against a plan: state path, joints,
/// bindings, all predicates, emit mappings, window. Returns the final
/// environment (bindings plus derived variables).
pub(crate) fn validate_selection(
    plan: &NfaPlan,
    sels: &[(usize, &Arc<ProbEvent>, usize)],
) -> Option<BTreeMap<String, AttrValue>> {
    if sels.is_empty() {
        return None;
    }
    // state path
    if sels[0].0 != 1 {
        return None;
    }
    for w in sels.windows(2) {
        let (prev, cur) = (w[0].0, w[1].0);
        if !successor_states_contains(plan, prev, cur) {
            return None;
        }
    }
    if !accept_eligible(plan, sels.last().unwrap().0) {
        return None;
    }
    // joints and window
    let first_ts = sels[0].1.ts;
    let mut bindings = BTreeMap::new();
    let mut last_ts: Option<Timestamp> = None;
    for (i, (state, ev, alt)) in sels.iter().enumerate() {
        let st = plan.atom_state(*state);
        if let Some(prev) = last_ts {
            let strict = matches!(st.joint, Joint::Strict) || *state <= sels[i - 1].0;
            if strict {
                if ev.ts <= prev {
                    return None;
                }
            } else if ev.ts < prev {
                return None;
            }
        }
        if let Some(j) = plan.strict_after[*state] {
            let before = sels[..i].iter().rev().find(|(s, ..)| *s == j)?;
            if ev.ts <= before.1.ts {
                return None;
            }
        }
        if let Some(w) = plan.window {
            match w {
                WindowSpec::Relative { span } => {
                    if ev.ts.0.saturating_sub(first_ts.0) > span || ev.ts < first_ts {
                        return None;
                    }
                }
                WindowSpec::Absolute { lo, hi } => {
                    if ev.ts.0 < lo || ev.ts.0 > hi {
                        return None;
                    }
                }
            }
        }
        bindings = unify(&st.atom, ev, *alt, &bindings)?;
        last_ts = Some(ev.ts);
    }
    // every predicate is re-checked here, early placement notwithstanding
    for p in plan.start_predicates.iter() {
        if !eval_predicate(p, &bindings) {
            return None;
        }
    }
    for (state, ..) in sels {
        for p in &plan.atom_state(*state).early {
            if !eval_predicate(p, &bindings) {
                return None;
            }
        }
    }
    // derived variables, then late predicates
    let mut env = bindings;
    for (var, expr) in &plan.produce.mappings {
        let v = eval_expr(expr, &env)?;
        env.insert(var.clone(), v);
    }
    for p in &plan.late_predicates {
        if !eval_predicate(p, &env) {
            return None;
        }
    }
    Some(env)
}

fn successor_states_contains(plan: &NfaPlan, from: usize, to: usize) -> bool {
    successor_states(plan, from).contains(&to)
}

fn resolve_instant(
    atom: &crate::pattern::Atom,
    env: &BTreeMap<String, AttrValue>,
) -> Option<Timestamp> {
    match atom.time_term() {
        Term::Var(v) => match env.get(v) {
            Some(AttrValue::Int(t)) if *t >= 0 => Some(Timestamp(*t as u64)),
            _ => None,
        },
        Term::Const(AttrValue::Int(t)) if *t >= 0 => Some(Timestamp(*t as u64)),
        _ => None,
    }
}

fn alt_matches_neg_atom(
    atom: &crate::pattern::Atom,
    alt: &crate::event::Alternative,
    _ts: Timestamp,
    env: &BTreeMap<String, AttrValue>,
) -> bool {
    if atom.terms.len() != alt.attrs.len() + 1 {
        return false;
    }
    for (term, (_, value)) in atom.attr_terms().iter().zip(alt.attrs.iter()) {
        match term {
            Term::Wildcard => {}
            Term::Const(c) => {
                if c != value {
                    return false;
                }
            }
            Term::Var(v) => match env.get(v) {
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

/// First selection belonging to a plan element.
fn first_sel_of_element<'r>(plan: &NfaPlan, sels: &'r [Sel], element: usize) -> Option<&'r Sel> {
    let range = &plan.elements[element].states;
    sels.iter().find(|s| range.contains(&s.state))
}

/// Last selection belonging to a plan element.
fn last_sel_of_element<'r>(plan: &NfaPlan, sels: &'r [Sel], element: usize) -> Option<&'r Sel> {
    let range = &plan.elements[element].states;
    sels.iter().rev().find(|s| range.contains(&s.state))
}

/// Reconstructs all full matches from a plan's active instance stack and
/// validates them exactly like run completions (test support; mirrors the
/// "quick retrieval of matching subsequences" contract).
pub fn ais_matches(
    engine: &Engine,
    plan_idx: usize,
    events: &[ProbEvent],
) -> Vec<(Vec<(u32, EventId, usize)>, Vec<(String, AttrValue)>)> {
    let plan = &engine.plans.plans[plan_idx];
    let by_id: BTreeMap<EventId, Arc<ProbEvent>> = events
        .iter()
        .map(|e| (e.id, Arc::new(e.clone())))
        .collect();
    let mut out = BTreeSet::new();
    for path in engine.rt[plan_idx].ais.reconstruct(plan) {
        let sels: Option<Vec<(usize, &Arc<ProbEvent>, usize)>> = path
            .iter()
            .map(|(state, id, alt)| by_id.get(id).map(|ev| (*state, ev, *alt)))
            .collect();
        let Some(sels) = sels else { continue };
        let Some(env) = validate_selection(plan, &sels) else {
            continue;
        };
        let run = Run {
            state: sels.last().unwrap().0,
            selected: sels
                .iter()
                .map(|(s, ev, a)| Sel {
                    state: *s,
                    ev: (*ev).clone(),
                    alt: *a,
                })
                .collect(),
            bindings: env.clone(),
            bound: 1.0,
            first_ts: sels[0].1.ts,
            last_ts: sels.last().unwrap().1.ts,
            deadline: None,
            last_entry: (0, 0, 0),
        };
        let Some((factor, _)) = engine.negation_outcome(plan, &run.selected, &env) else {
            continue;
        };
        if factor == 0.0 {
            continue;
        }
        let mut uid_sel: Vec<(u32, EventId, usize)> = run
            .selected
            .iter()
            .map(|s| (plan.atom_state(s.state).atom.uid, s.ev.id, s.alt))
            .collect();
        uid_sel.sort_unstable();
        out.insert((uid_sel, env.into_iter().collect()));
    }
    out.into_iter().collect()
}
