//! Lineage formulas over event-alternative literals and exact marginals by
//! Shannon expansion.
//!
//! A lineage is a disjunction of conjunctions; a literal `(var, alt, +)`
//! asserts that event `var` occurred as alternative `alt`, a negative
//! literal asserts it did not occur as that alternative (non-occurrence or a
//! different alternative both satisfy it). Alternatives of one event are
//! mutually exclusive, which the expansion respects by branching over an
//! event's choices rather than over boolean literals.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::event::EventId;

use super::ProbError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub var: EventId,
    pub alt: u32,
    pub positive: bool,
}

impl Literal {
    pub fn pos(var: EventId, alt: u32) -> Self {
        Literal {
            var,
            alt,
            positive: true,
        }
    }
    pub fn neg(var: EventId, alt: u32) -> Self {
        Literal {
            var,
            alt,
            positive: false,
        }
    }
}

/// A conjunction of literals, kept sorted and deduplicated. `None` from
/// [`Conjunct::normalized`] marks a contradiction (unsatisfiable conjunct).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Conjunct(pub Vec<Literal>);

impl Conjunct {
    pub fn normalized(mut lits: Vec<Literal>) -> Option<Conjunct> {
        lits.sort_unstable();
        lits.dedup();
        // contradictions: two distinct positive alts of one var, or a
        // positive alt together with its own negation
        let mut pos_alt: BTreeMap<EventId, u32> = BTreeMap::new();
        for l in &lits {
            if l.positive {
                if let Some(prev) = pos_alt.insert(l.var, l.alt) {
                    if prev != l.alt {
                        return None;
                    }
                }
            }
        }
        for l in &lits {
            if !l.positive {
                if pos_alt.get(&l.var) == Some(&l.alt) {
                    return None;
                }
            }
        }
        // a negative literal on a var whose positive choice is a different
        // alt is implied; drop it
        lits.retain(|l| l.positive || pos_alt.get(&l.var).map_or(true, |a| *a == l.alt));
        Some(Conjunct(lits))
    }

    pub fn vars(&self) -> impl Iterator<Item = EventId> + '_ {
        self.0.iter().map(|l| l.var)
    }
}

/// Disjunction of conjunctions over event-alternative literals.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Lineage {
    pub conjuncts: Vec<Conjunct>,
}

impl Lineage {
    pub fn none() -> Self {
        Lineage {
            conjuncts: Vec::new(),
        }
    }

    /// The always-true lineage (one empty conjunct).
    pub fn always() -> Self {
        Lineage {
            conjuncts: vec![Conjunct::default()],
        }
    }

    pub fn single(lits: Vec<Literal>) -> Self {
        match Conjunct::normalized(lits) {
            Some(c) => Lineage { conjuncts: vec![c] },
            None => Lineage::none(),
        }
    }

    pub fn is_false(&self) -> bool {
        self.conjuncts.is_empty()
    }

    pub fn or(mut self, other: Lineage) -> Lineage {
        self.conjuncts.extend(other.conjuncts);
        self.normalize();
        self
    }

    /// Conjunction by distribution: (A or B) and (C or D) expands to DNF.
    pub fn and(&self, other: &Lineage) -> Lineage {
        let mut out = Vec::new();
        for a in &self.conjuncts {
            for b in &other.conjuncts {
                let mut lits = a.0.clone();
                lits.extend(b.0.iter().copied());
                if let Some(c) = Conjunct::normalized(lits) {
                    out.push(c);
                }
            }
        }
        let mut l = Lineage { conjuncts: out };
        l.normalize();
        l
    }

    pub fn and_literal(&self, lit: Literal) -> Lineage {
        self.and(&Lineage::single(vec![lit]))
    }

    fn normalize(&mut self) {
        self.conjuncts.sort();
        self.conjuncts.dedup();
    }

    /// Distinct event ids referenced by the formula.
    pub fn distinct_vars(&self) -> BTreeSet<EventId> {
        self.conjuncts.iter().flat_map(|c| c.vars()).collect()
    }
}

/// Alternative probabilities per event id, the probability-space index
/// behind a lineage (input events plus rule-firing variables).
pub type VarProbs = BTreeMap<EventId, Vec<f64>>;

/// Exact probability that at least one conjunct is satisfied, by Shannon
/// expansion over the distinct event ids of the lineage. Branches per event
/// cover each referenced alternative plus one residual branch (all other
/// alternatives and non-occurrence together). Memoized on the simplified
/// formula.
pub fn ce_marginal(lineage: &Lineage, probs: &VarProbs, cap: usize) -> Result<f64, ProbError> {
    let vars = lineage.distinct_vars();
    if vars.len() > cap {
        return Err(ProbError::LineageTooLarge {
            vars: vars.len(),
            cap,
        });
    }
    let mut memo: HashMap<Lineage, f64> = HashMap::new();
    Ok(shannon(lineage, probs, &mut memo))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Assignment {
    Alt(u32),
    /// Any alternative not referenced by the formula, or non-occurrence.
    Other,
}

fn shannon(dnf: &Lineage, probs: &VarProbs, memo: &mut HashMap<Lineage, f64>) -> f64 {
    if dnf.conjuncts.is_empty() {
        return 0.0;
    }
    if dnf.conjuncts.iter().any(|c| c.0.is_empty()) {
        return 1.0;
    }
    if let Some(&v) = memo.get(dnf) {
        return v;
    }

    // branch on the most frequently referenced event
    let mut counts: BTreeMap<EventId, usize> = BTreeMap::new();
    for c in &dnf.conjuncts {
        for l in &c.0 {
            *counts.entry(l.var).or_insert(0) += 1;
        }
    }
    let (&var, _) = counts
        .iter()
        .max_by_key(|(id, n)| (**n, std::cmp::Reverse(**id)))
        .expect("nonempty formula has a variable");

    let referenced: BTreeSet<u32> = dnf
        .conjuncts
        .iter()
        .flat_map(|c| c.0.iter())
        .filter(|l| l.var == var)
        .map(|l| l.alt)
        .collect();
    let alt_probs = probs.get(&var).cloned().unwrap_or_default();

    let mut total = 0.0;
    let mut other_mass = 1.0;
    for &alt in &referenced {
        let p = alt_probs.get(alt as usize).copied().unwrap_or(0.0);
        other_mass -= p;
        if p > 0.0 {
            let reduced = restrict(dnf, var, Assignment::Alt(alt));
            total += p * shannon(&reduced, probs, memo);
        }
    }
    if other_mass > 0.0 {
        let reduced = restrict(dnf, var, Assignment::Other);
        total += other_mass * shannon(&reduced, probs, memo);
    }

    memo.insert(dnf.clone(), total);
    total
}

/// Simplifies the formula under a fixed choice for `var`.
fn restrict(dnf: &Lineage, var: EventId, choice: Assignment) -> Lineage {
    let mut out = Vec::new();
    'conj: for c in &dnf.conjuncts {
        let mut lits = Vec::with_capacity(c.0.len());
        for l in &c.0 {
            if l.var != var {
                lits.push(*l);
                continue;
            }
            let satisfied = match (choice, l.positive) {
                (Assignment::Alt(a), true) => a == l.alt,
                (Assignment::Alt(a), false) => a != l.alt,
                (Assignment::Other, true) => false,
                (Assignment::Other, false) => true,
            };
            if !satisfied {
                continue 'conj;
            }
        }
        out.push(Conjunct(lits));
    }
    let mut l = Lineage { conjuncts: out };
    l.normalize();
    l
}
