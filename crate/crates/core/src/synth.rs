//! Seeded synthetic stream and rule generation, plus the in-memory
//! benchmark loop used by the bench harness and the performance checks.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{Engine, EngineConfig};
use crate::event::{Alternative, AttrValue, ProbEvent, Timestamp};
use crate::pattern::RuleSet;
use crate::plan::compile;

/// Generator specification: event-type alphabet, relevance rate, probability
/// range, and seed. Equal specs produce byte-identical streams.
#[derive(Debug, Clone, Serialize)]
pub struct GenSpec {
    pub events: usize,
    /// Total alphabet size; irrelevant types are drawn from it.
    pub types: usize,
    /// Fraction of events drawn from the relevant types (selectivity).
    pub relevant_fraction: f64,
    /// Event types the rule set consumes, cycled through for relevant events.
    pub relevant_types: Vec<String>,
    pub prob_min: f64,
    pub prob_max: f64,
    /// Events per timestamp tick.
    pub events_per_tick: u64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            events: 100_000,
            types: 26,
            relevant_fraction: 0.01,
            relevant_types: vec!["a".into(), "b".into(), "c".into()],
            prob_min: 0.5,
            prob_max: 1.0,
            events_per_tick: 1,
            seed: 42,
        }
    }
}

/// Generates a deterministic probabilistic stream for the spec.
pub fn generate_stream(spec: &GenSpec) -> Vec<ProbEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.events);
    for i in 0..spec.events {
        let ts = Timestamp(i as u64 / spec.events_per_tick.max(1));
        let relevant = rng.gen_bool(spec.relevant_fraction.clamp(0.0, 1.0));
        let event_type = if relevant && !spec.relevant_types.is_empty() {
            let k = rng.gen_range(0..spec.relevant_types.len());
            spec.relevant_types[k].clone()
        } else {
            format!("noise{}", rng.gen_range(0..spec.types.max(1)))
        };
        let prob = if spec.prob_min >= spec.prob_max {
            spec.prob_min
        } else {
            rng.gen_range(spec.prob_min..=spec.prob_max)
        };
        out.push(ProbEvent {
            id: i as u64,
            event_type,
            ts,
            alternatives: vec![Alternative {
                attrs: vec![("v".to_string(), AttrValue::Int(rng.gen_range(0..100)))],
                prob,
            }],
        });
    }
    out
}

/// Throughput/latency measurements from one in-memory run.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub events: usize,
    pub matches: usize,
    pub elapsed_secs: f64,
    pub events_per_sec: f64,
    pub latency_mean_us: f64,
    pub latency_p99_us: f64,
    pub peak_live_runs: usize,
    pub seed: u64,
    pub time_unit: String,
}

/// Drives a pre-generated stream through a fresh engine, measuring
/// wall-clock throughput and per-event latency (I/O excluded by
/// construction). Latency percentiles are computed over every event.
pub fn bench_run(
    rules: &RuleSet,
    cfg: EngineConfig,
    events: Vec<ProbEvent>,
    seed: u64,
) -> Result<BenchReport, crate::engine::EngineError> {
    let plans = compile(rules).expect("bench rules compile");
    let time_unit = cfg.time_unit.clone();
    let mut engine = Engine::new(plans, cfg);
    let n = events.len();
    let mut latencies: Vec<u64> = Vec::with_capacity(n);
    let mut matches = 0usize;

    let start = Instant::now();
    for ev in events {
        let t0 = Instant::now();
        matches += engine.ingest(ev)?.len();
        latencies.push(t0.elapsed().as_nanos() as u64);
    }
    matches += engine.flush()?.len();
    let elapsed = start.elapsed().as_secs_f64();

    latencies.sort_unstable();
    let mean_ns = if latencies.is_empty() {
        0.0
    } else {
        latencies.iter().sum::<u64>() as f64 / latencies.len() as f64
    };
    let p99_ns = if latencies.is_empty() {
        0.0
    } else {
        latencies[((latencies.len() as f64 * 0.99) as usize).min(latencies.len() - 1)] as f64
    };
    Ok(BenchReport {
        events: n,
        matches,
        elapsed_secs: elapsed,
        events_per_sec: if elapsed > 0.0 { n as f64 / elapsed } else { 0.0 },
        latency_mean_us: mean_ns / 1000.0,
        latency_p99_us: p99_ns / 1000.0,
        peak_live_runs: engine.peak_live_runs(),
        seed,
        time_unit,
    })
}

/// Random pattern-and-stream generation for differential testing.
pub mod randgen {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::event::{Alternative, AttrValue, ProbEvent, Timestamp};

    /// Options for random rule generation.
    #[derive(Debug, Clone)]
    pub struct RuleGen {
        pub max_depth: usize,
        pub allow_kleene: bool,
        /// Guarantee at least one iteration node in every rule.
        pub force_kleene: bool,
        pub allow_negation: bool,
        pub types: Vec<&'static str>,
    }

    impl Default for RuleGen {
        fn default() -> Self {
            RuleGen {
                max_depth: 3,
                allow_kleene: false,
                force_kleene: false,
                allow_negation: true,
                types: vec!["a", "b", "c", "d"],
            }
        }
    }

    #[derive(Default)]
    struct VarPool {
        attr_vars: Vec<String>,
        time_vars: Vec<String>,
        counter: usize,
    }

    impl VarPool {
        fn fresh_attr(&mut self) -> String {
            let v = format!("X{}", self.counter);
            self.counter += 1;
            self.attr_vars.push(v.clone());
            v
        }
        fn fresh_time(&mut self) -> String {
            let v = format!("T{}", self.counter);
            self.counter += 1;
            self.time_vars.push(v.clone());
            v
        }
        fn attr(&mut self, rng: &mut ChaCha8Rng) -> String {
            if !self.attr_vars.is_empty() && rng.gen_bool(0.4) {
                self.attr_vars[rng.gen_range(0..self.attr_vars.len())].clone()
            } else {
                self.fresh_attr()
            }
        }
    }

    /// Produces a random rule in DSL text form; always parseable and
    /// compilable by construction.
    pub fn random_rule(rng: &mut ChaCha8Rng, opts: &RuleGen) -> String {
        let mut pool = VarPool::default();
        let mut body = gen_node(rng, opts, opts.max_depth, &mut pool, true);
        if opts.force_kleene && !body.contains('*') {
            let star = gen_atom(rng, opts, &mut pool);
            body = format!("{star}*; ({body})");
        }
        // the head time is anchored on a dedicated trailing atom so it is
        // bound in every disjunct
        let t = pool.fresh_time();
        let prob_prefix = if rng.gen_bool(0.3) {
            format!("0.{}::", rng.gen_range(1..=9))
        } else {
            String::new()
        };
        let mut rule = format!("{prob_prefix}ce({t}) ::= ({body}); stop({t})");
        // optional time-arithmetic constraint over bound time variables
        if !pool.time_vars.is_empty() && rng.gen_bool(0.3) {
            let tv = &pool.time_vars[rng.gen_range(0..pool.time_vars.len())];
            let bound = rng.gen_range(1..=6);
            rule.push_str(&format!(" where {{{t} - {tv} <= {bound}}}"));
        }
        // optional window over the whole body (relative or absolute)
        if rng.gen_bool(0.25) {
            let (head, rest) = rule.split_once(" ::= ").expect("rule shape");
            let (lo, hi) = if rng.gen_bool(0.5) {
                (0, rng.gen_range(4..=12))
            } else {
                (rng.gen_range(1..=3), rng.gen_range(8..=16))
            };
            rule = format!("{head} ::= ({rest}) within [{lo}, {hi}]");
        }
        rule
    }

    fn gen_atom(rng: &mut ChaCha8Rng, opts: &RuleGen, pool: &mut VarPool) -> String {
        let ty = opts.types[rng.gen_range(0..opts.types.len())];
        match rng.gen_range(0..6) {
            0 | 1 => format!("{ty}({}, _)", pool.attr(rng)),
            2 => format!("{ty}(_, {})", pool.fresh_time()),
            3 => format!("{ty}(x{}, _)", rng.gen_range(0..3)),
            4 => format!("{ty}({}, {})", pool.attr(rng), pool.fresh_time()),
            _ => format!("{ty}(_, _)"),
        }
    }

    fn gen_node(
        rng: &mut ChaCha8Rng,
        opts: &RuleGen,
        depth: usize,
        pool: &mut VarPool,
        seq_ctx: bool,
    ) -> String {
        if depth == 0 {
            return gen_atom(rng, opts, pool);
        }
        match rng.gen_range(0..10) {
            0..=2 => gen_atom(rng, opts, pool),
            3 | 4 => {
                let k = rng.gen_range(2..=3);
                let parts: Vec<String> = (0..k)
                    .map(|_| gen_node(rng, opts, depth - 1, pool, true))
                    .collect();
                format!("({})", parts.join("; "))
            }
            5 => {
                let k = rng.gen_range(2..=3);
                let parts: Vec<String> = (0..k)
                    .map(|_| gen_node(rng, opts, depth - 1, pool, false))
                    .collect();
                format!("({})", parts.join(" | "))
            }
            6 => {
                let parts: Vec<String> = (0..2).map(|_| gen_atom(rng, opts, pool)).collect();
                format!("({})", parts.join(" and "))
            }
            7 if opts.allow_kleene => {
                format!("{}*", gen_atom(rng, opts, pool))
            }
            8 if opts.allow_negation && seq_ctx => {
                // gap negation between two positive atoms; the negated atom
                // may reference a bound attribute variable
                let a = gen_atom(rng, opts, pool);
                let ty = opts.types[rng.gen_range(0..opts.types.len())];
                let neg_arg = if !pool.attr_vars.is_empty() && rng.gen_bool(0.5) {
                    pool.attr_vars[rng.gen_range(0..pool.attr_vars.len())].clone()
                } else {
                    "_".to_string()
                };
                let b = gen_atom(rng, opts, pool);
                format!("({a}; not {ty}({neg_arg}, _); {b})")
            }
            9 if opts.allow_negation => {
                // bound-time negation at a positive atom's instant
                let t = pool.fresh_time();
                let ty = opts.types[rng.gen_range(0..opts.types.len())];
                let pos_ty = opts.types[rng.gen_range(0..opts.types.len())];
                format!("({pos_ty}(_, {t}) and not {ty}(_, {t}))")
            }
            _ => gen_atom(rng, opts, pool),
        }
    }

    /// Random probabilistic stream over the generator's alphabet plus the
    /// `stop` terminator the random rules anchor on.
    pub fn random_stream(
        rng: &mut ChaCha8Rng,
        max_events: usize,
        crisp: bool,
    ) -> Vec<ProbEvent> {
        let n = rng.gen_range(1..=max_events);
        let mut out = Vec::with_capacity(n + 1);
        let mut ts = 0u64;
        for i in 0..n {
            ts += rng.gen_range(0..=2);
            let ty = ["a", "b", "c", "d"][rng.gen_range(0..4)];
            let prob = if crisp {
                1.0
            } else {
                (rng.gen_range(1..=9) as f64) / 10.0
            };
            // occasionally a two-alternative annotated disjunction
            let alts = if !crisp && rng.gen_bool(0.25) {
                let p2 = ((rng.gen_range(1..=9) as f64) / 10.0).min(1.0 - prob).max(0.0);
                let mut v = vec![Alternative {
                    attrs: vec![("x".into(), AttrValue::Str(format!("x{}", rng.gen_range(0..3))))],
                    prob,
                }];
                if p2 > 0.0 {
                    v.push(Alternative {
                        attrs: vec![(
                            "x".into(),
                            AttrValue::Str(format!("x{}", rng.gen_range(0..3))),
                        )],
                        prob: p2,
                    });
                }
                v
            } else {
                vec![Alternative {
                    attrs: vec![("x".into(), AttrValue::Str(format!("x{}", rng.gen_range(0..3))))],
                    prob,
                }]
            };
            out.push(ProbEvent {
                id: i as u64,
                event_type: ty.to_string(),
                ts: Timestamp(ts),
                alternatives: alts,
            });
        }
        // terminator the random rules end on
        out.push(ProbEvent {
            id: n as u64,
            event_type: "stop".into(),
            ts: Timestamp(ts + 1),
            alternatives: vec![Alternative {
                attrs: Vec::new(),
                prob: 1.0,
            }],
        });
        out
    }

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }
}
