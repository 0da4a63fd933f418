//! Active Instance Stack: per-state stacks of triggering events with
//! predecessor pointers, forming a DAG from which every full match can be
//! reconstructed by walking accept-state entries backwards.

use std::collections::{BTreeMap, BTreeSet};

use crate::event::{EventId, Timestamp};
use crate::plan::NfaPlan;

/// Reference to a stack entry: (state, event id, alternative).
pub type AisRef = (usize, EventId, usize);

#[derive(Debug, Clone, Default)]
pub struct AisEntry {
    pub ts: Timestamp,
    /// Entry was created by a run spawn (a path may start here).
    pub is_start: bool,
    /// Predecessor entries (previous state, or the same state's stack for
    /// iteration chains).
    pub preds: BTreeSet<AisRef>,
}

/// One stack per positive state (index 1..=n; slot 0 unused).
#[derive(Debug, Clone, Default)]
pub struct Ais {
    pub stacks: Vec<BTreeMap<(EventId, usize), AisEntry>>,
}

impl Ais {
    pub fn new(positive_len: usize) -> Self {
        Ais {
            stacks: vec![BTreeMap::new(); positive_len + 1],
        }
    }

    /// Records an advance into `state` by (event, alt); `pred` is the
    /// previous selection of the advancing run, `None` for a spawn.
    pub fn record(
        &mut self,
        state: usize,
        event: EventId,
        alt: usize,
        ts: Timestamp,
        pred: Option<AisRef>,
    ) -> AisRef {
        if let Some(p) = pred {
            debug_assert!(
                self.entry(&p).map_or(true, |e| e.ts <= ts),
                "predecessor entries precede in time"
            );
        }
        let entry = self.stacks[state].entry((event, alt)).or_default();
        entry.ts = ts;
        match pred {
            Some(p) => {
                entry.preds.insert(p);
            }
            None => entry.is_start = true,
        }
        (state, event, alt)
    }

    pub fn entry(&self, r: &AisRef) -> Option<&AisEntry> {
        self.stacks.get(r.0).and_then(|s| s.get(&(r.1, r.2)))
    }

    pub fn len(&self) -> usize {
        self.stacks.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops entries older than the horizon. Paths through dropped entries
    /// belong to matches that were already emitted or runs already evicted.
    pub fn evict_before(&mut self, horizon: Timestamp) -> usize {
        let mut removed = 0;
        for stack in &mut self.stacks {
            let before = stack.len();
            stack.retain(|_, e| e.ts >= horizon);
            removed += before - stack.len();
        }
        removed
    }

    /// Enumerates candidate selections ending at accept-eligible entries by
    /// following predecessor pointers. Paths are state-valid by construction
    /// (edges record actual transitions); the caller re-validates bindings,
    /// predicates, windows, and negations.
    pub fn reconstruct(&self, plan: &NfaPlan) -> Vec<Vec<AisRef>> {
        let n = plan.positive_len();
        if n == 0 || self.stacks.len() <= n {
            return Vec::new();
        }
        let mut out = Vec::new();
        for (key, _entry) in self.stacks[n].iter() {
            let start: AisRef = (n, key.0, key.1);
            let mut path = vec![start];
            self.walk_back(&start, &mut path, &mut out);
        }
        out
    }

    fn walk_back(&self, at: &AisRef, path: &mut Vec<AisRef>, out: &mut Vec<Vec<AisRef>>) {
        let entry = match self.entry(at) {
            Some(e) => e,
            None => return,
        };
        if entry.is_start && at.0 == 1 {
            let mut sel = path.clone();
            sel.reverse();
            out.push(sel);
        }
        for pred in &entry.preds {
            path.push(*pred);
            self.walk_back(pred, path, out);
            path.pop();
        }
    }
}
