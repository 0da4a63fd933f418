//! Subcommand implementations: recognize, oracle, score, bench, validate.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use probcer_core::engine::{Engine, EngineConfig, MatchRecord};
use probcer_core::event::{ProbEvent, Timestamp};
use probcer_core::pattern::{parse_rules, RuleSet};
use probcer_core::plan::{compile, dump_hierarchy, HierarchyPlan};
use probcer_core::prob::{
    map_query, merge_exact_marginals, merge_noisy_or_marginals, oracle_marginal, Cpt,
    OracleModel, ProbModel,
};
use probcer_core::synth::{bench_run, generate_stream, GenSpec};

use crate::io::{self, match_line, read_events, read_scored};
use crate::metrics::{score, MetricsReport};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Independent,
    Markov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportMode {
    PerMatch,
    Marginal,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegationMode {
    Prob,
    Hard,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub rules: PathBuf,
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub model: ModelKind,
    pub cpt: Option<PathBuf>,
    pub decay: Option<f64>,
    pub threshold: f64,
    pub report: ReportMode,
    pub approx_hierarchy: bool,
    pub run_cap: usize,
    pub lineage_cap: usize,
    pub negation: NegationMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rules: PathBuf::new(),
            input: PathBuf::new(),
            output: None,
            model: ModelKind::Independent,
            cpt: None,
            decay: None,
            threshold: 0.0,
            report: ReportMode::PerMatch,
            approx_hierarchy: false,
            run_cap: 100_000,
            lineage_cap: 25,
            negation: NegationMode::Prob,
        }
    }
}

fn load_rules(path: &Path) -> CliResult<RuleSet> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config("IO_ERROR", format!("{}: {e}", path.display())))?;
    parse_rules(&text).map_err(|e| CliError::config(e.code(), e.to_string()))
}

fn load_cpt(path: &Path) -> CliResult<Cpt> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config("IO_ERROR", format!("{}: {e}", path.display())))?;
    Cpt::from_json(&text).map_err(|e| CliError::config("CPT_ERROR", e.to_string()))
}

fn compile_rules(rules: &RuleSet) -> CliResult<HierarchyPlan> {
    compile(rules).map_err(|e| CliError::config(e.code(), e.to_string()))
}

fn build_model(cfg: &RunConfig) -> CliResult<ProbModel> {
    let mut model = match cfg.model {
        ModelKind::Independent => ProbModel::independent(),
        ModelKind::Markov => {
            let path = cfg.cpt.as_ref().ok_or_else(|| {
                CliError::config("CONFIG", "the markov model needs --cpt FILE")
            })?;
            ProbModel::markov(load_cpt(path)?)
        }
    };
    if let Some(d) = cfg.decay {
        if !(d > 0.0 && d <= 1.0) {
            return Err(CliError::config("CONFIG", format!("decay {d} not in (0,1]")));
        }
        model = model.with_decay(d);
    }
    Ok(model)
}

fn validate_run_config(cfg: &RunConfig) -> CliResult<()> {
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(CliError::config(
            "CONFIG",
            format!("threshold {} not in [0,1]", cfg.threshold),
        ));
    }
    if matches!(cfg.report, ReportMode::Marginal | ReportMode::Map) {
        if cfg.model == ModelKind::Markov {
            return Err(CliError::config(
                "CONFIG",
                "exact marginal and MAP reports are defined under the independent model; \
                 use --report per-match with --model markov",
            ));
        }
        if cfg.decay.is_some() {
            return Err(CliError::config(
                "CONFIG",
                "decay applies to per-match reporting only",
            ));
        }
    }
    Ok(())
}

fn engine_config(cfg: &RunConfig, model: ProbModel) -> EngineConfig {
    EngineConfig {
        run_cap: cfg.run_cap,
        // run pruning is sound for per-match output; marginal mode thresholds
        // filter final instance marginals instead
        prune_epsilon: if cfg.report == ReportMode::PerMatch {
            cfg.threshold
        } else {
            0.0
        },
        lineage_cap: cfg.lineage_cap,
        model,
        approx_hierarchy: cfg.approx_hierarchy,
        hard_negation: cfg.negation == NegationMode::Hard,
        track_lineage: cfg.report == ReportMode::Marginal && !cfg.approx_hierarchy,
        ..EngineConfig::default()
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RunSummary {
    pub events: usize,
    pub matches: usize,
    pub lines: usize,
}

/// Reads the stream, drives recognition, writes one JSON line per reported
/// CE to the output, and returns a summary.
pub fn run_recognize(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<RunSummary> {
    validate_run_config(cfg)?;
    let rules = load_rules(&cfg.rules)?;
    let plans = compile_rules(&rules)?;
    let model = build_model(cfg)?;
    let mut engine = Engine::new(plans, engine_config(cfg, model));

    let file = fs::File::open(&cfg.input)
        .map_err(|e| CliError::config("IO_ERROR", format!("{}: {e}", cfg.input.display())))?;
    let events = read_events(BufReader::new(file))?;
    let n_events = events.len();

    let mut lines = 0usize;
    let mut all_records: Vec<MatchRecord> = Vec::new();
    let emit = |records: Vec<MatchRecord>,
                    out: &mut dyn Write,
                    lines: &mut usize,
                    all: &mut Vec<MatchRecord>|
     -> CliResult<()> {
        match cfg.report {
            ReportMode::PerMatch => {
                for r in &records {
                    if r.prob >= cfg.threshold {
                        writeln!(out, "{}", match_line(r))
                            .map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
                        *lines += 1;
                    }
                }
                all.extend(records);
            }
            _ => all.extend(records),
        }
        Ok(())
    };

    for ev in events {
        let records = engine.ingest(ev).map_err(CliError::from_engine)?;
        emit(records, out, &mut lines, &mut all_records)?;
    }
    let records = engine.flush().map_err(CliError::from_engine)?;
    emit(records, out, &mut lines, &mut all_records)?;

    match cfg.report {
        ReportMode::PerMatch => {}
        ReportMode::Marginal => {
            let marginals = if cfg.approx_hierarchy {
                merge_noisy_or_marginals(
                    all_records.iter().map(|r| (r.instance_key(), r.prob)),
                )
            } else {
                merge_exact_marginals(
                    all_records.iter().map(|r| (r.instance_key(), &r.lineage)),
                    engine.var_probs(),
                    cfg.lineage_cap,
                )
                .map_err(CliError::from_prob)?
            };
            for (key, p) in marginals {
                if p >= cfg.threshold {
                    writeln!(out, "{}", io::marginal_line(&key, p))
                        .map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
                    lines += 1;
                }
            }
        }
        ReportMode::Map => {
            let mut by_type: BTreeMap<&str, Vec<&MatchRecord>> = BTreeMap::new();
            for r in &all_records {
                by_type.entry(r.ce_type.as_str()).or_default().push(r);
            }
            for (_ty, records) in by_type {
                let best = map_query(
                    &records,
                    |r| r.prob,
                    |r| r.last_event_ts,
                    |r| r.selected.iter().map(|(id, _)| *id).collect(),
                )
                .map_err(CliError::from_prob)?;
                if best.prob >= cfg.threshold {
                    writeln!(out, "{}", match_line(best))
                        .map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
                    lines += 1;
                }
            }
        }
    }
    Ok(RunSummary {
        events: n_events,
        matches: all_records.len(),
        lines,
    })
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub rules: PathBuf,
    pub input: PathBuf,
    pub ce: Option<String>,
    pub model: ModelKind,
    pub cpt: Option<PathBuf>,
}

/// Enumerates every event history and prints each CE instance with its
/// exact marginal.
pub fn run_oracle(cfg: &OracleConfig, out: &mut dyn Write) -> CliResult<()> {
    let rules = load_rules(&cfg.rules)?;
    // surface compile errors here too: the oracle should reject what the
    // engine rejects
    compile_rules(&rules)?;
    let cpt;
    let model = match cfg.model {
        ModelKind::Independent => OracleModel::Independent,
        ModelKind::Markov => {
            let path = cfg.cpt.as_ref().ok_or_else(|| {
                CliError::config("CONFIG", "the markov model needs --cpt FILE")
            })?;
            cpt = load_cpt(path)?;
            OracleModel::Markov(&cpt)
        }
    };
    let file = fs::File::open(&cfg.input)
        .map_err(|e| CliError::config("IO_ERROR", format!("{}: {e}", cfg.input.display())))?;
    let events = read_events(BufReader::new(file))?;
    let report = oracle_marginal(&events, &rules, cfg.ce.as_deref(), model)
        .map_err(CliError::from_prob)?;
    writeln!(out, "{}", serde_json::json!({ "histories": report.histories as u64 }))
        .map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
    for (key, p) in &report.marginals {
        writeln!(out, "{}", io::marginal_line(key, *p))
            .map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
    }
    Ok(())
}

/// Scores a prediction file against gold labels.
pub fn run_score(
    predicted: &Path,
    gold: &Path,
    threshold: f64,
    out: &mut dyn Write,
) -> CliResult<MetricsReport> {
    let p = fs::File::open(predicted)
        .map_err(|e| CliError::config("IO_ERROR", format!("{}: {e}", predicted.display())))?;
    let g = fs::File::open(gold)
        .map_err(|e| CliError::config("IO_ERROR", format!("{}: {e}", gold.display())))?;
    let predicted = read_scored(BufReader::new(p), "predicted")?;
    let gold = read_scored(BufReader::new(g), "gold")?;
    let report = score(&predicted, &gold, threshold);
    let mut value = serde_json::to_value(&report)
        .map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
    for field in ["precision", "recall", "f_measure"] {
        if let Some(v) = value.get(field).and_then(|v| v.as_f64()) {
            value[field] = serde_json::json!(io::round_sig(v));
        }
    }
    writeln!(out, "{value}").map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub rules: PathBuf,
    pub gen: GenSpec,
    pub threshold: f64,
    pub run_cap: usize,
}

/// Synthesizes a seeded stream, measures throughput and per-event latency
/// over an in-memory run, and prints machine-readable JSON.
pub fn run_bench(cfg: &BenchConfig, out: &mut dyn Write) -> CliResult<()> {
    let rules = load_rules(&cfg.rules)?;
    compile_rules(&rules)?;
    let mut gen = cfg.gen.clone();
    // the relevant types are whatever the rules consume
    gen.relevant_types = rules
        .rules
        .iter()
        .flat_map(|r| r.body.atoms().into_iter().map(|a| a.event_type.clone()))
        .filter(|t| !rules.is_ce_type(t))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let events = generate_stream(&gen);
    let engine_cfg = EngineConfig {
        run_cap: cfg.run_cap,
        prune_epsilon: cfg.threshold,
        track_lineage: false,
        ..EngineConfig::default()
    };
    let report = bench_run(&rules, engine_cfg, events, gen.seed)
        .map_err(CliError::from_engine)?;
    let mut value = serde_json::to_value(&report)
        .map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
    for field in ["elapsed_secs", "events_per_sec", "latency_mean_us", "latency_p99_us"] {
        if let Some(v) = value.get(field).and_then(|v| v.as_f64()) {
            value[field] = serde_json::json!(io::round_sig(v));
        }
    }
    writeln!(out, "{value}").map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
    Ok(())
}

/// Parses and compiles a rule file, printing diagnostics and optionally the
/// deterministic plan dump.
pub fn run_validate(rules_path: &Path, dump: bool, out: &mut dyn Write) -> CliResult<()> {
    let rules = load_rules(rules_path)?;
    for w in &rules.warnings {
        writeln!(out, "{w}").map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
    }
    let plans = compile_rules(&rules)?;
    writeln!(
        out,
        "ok: {} rules, {} plans, {} levels",
        rules.rules.len(),
        plans.plans.len(),
        plans.max_level() + 1
    )
    .map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
    if dump {
        write!(out, "{}", dump_hierarchy(&plans))
            .map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
    }
    Ok(())
}

/// Recognize over an in-memory stream; library-level entry used by tests.
pub fn recognize_events(
    rules_text: &str,
    events: Vec<ProbEvent>,
    engine_cfg: EngineConfig,
) -> CliResult<(Vec<MatchRecord>, Engine)> {
    let rules =
        parse_rules(rules_text).map_err(|e| CliError::config(e.code(), e.to_string()))?;
    let plans = compile_rules(&rules)?;
    let mut engine = Engine::new(plans, engine_cfg);
    let mut out = Vec::new();
    for ev in events {
        out.extend(engine.ingest(ev).map_err(CliError::from_engine)?);
    }
    out.extend(engine.flush().map_err(CliError::from_engine)?);
    Ok((out, engine))
}

/// Timestamp helper shared by tests.
pub fn ts(v: u64) -> Timestamp {
    Timestamp(v)
}
