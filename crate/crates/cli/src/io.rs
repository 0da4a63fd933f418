//! JSON-lines stream input and CE output serialization.
//!
//! Input events: `{"type":"hasBall","ts":4,"alts":[{"args":{"player":"p2"},
//! "prob":0.7}]}` with the shorthand `{"type":…,"ts":…,"args":…,"prob":…}`
//! for single-alternative events (prob defaults to 1.0). Output: one JSON
//! line per reported CE. Gold files reuse the output shape minus prob.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use probcer_core::engine::MatchRecord;
use probcer_core::event::{validate_event, AttrValue, ProbEvent, RawEvent};
use probcer_core::prob::CeInstanceKey;
use serde::Deserialize;

use crate::{CliError, CliResult};

/// Rounds to 9 significant digits; all floating output goes through this so
/// golden files are stable at the testing tolerance.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let digits = 9 - 1 - x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits);
    (x * factor).round() / factor
}

fn json_prob(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(round_sig(x))
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

fn attr_to_json(v: &AttrValue) -> serde_json::Value {
    match v {
        AttrValue::Str(s) => serde_json::Value::String(s.clone()),
        AttrValue::Int(i) => serde_json::json!(i),
        AttrValue::Float(f) => json_prob(*f),
        AttrValue::Bool(b) => serde_json::json!(b),
    }
}

/// Reads and validates a JSONL event stream; ids default to line order.
pub fn read_events<R: BufRead>(reader: R) -> CliResult<Vec<ProbEvent>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEvent = serde_json::from_str(&line).map_err(|e| {
            CliError::stream(
                "MALFORMED_EVENT",
                format!("line {}: {e}", lineno + 1),
            )
        })?;
        let ev = validate_event(&raw, out.len() as u64)
            .map_err(|e| CliError::stream(e.code(), format!("line {}: {e}", lineno + 1)))?;
        out.push(ev);
    }
    Ok(out)
}

/// One output line for a reported match.
pub fn match_line(m: &MatchRecord) -> String {
    let args: serde_json::Map<String, serde_json::Value> = m
        .attrs
        .iter()
        .map(|(k, v)| (k.clone(), attr_to_json(v)))
        .collect();
    let events: Vec<u64> = m.selected.iter().map(|(id, _)| *id).collect();
    let mut obj = serde_json::Map::new();
    obj.insert("type".into(), serde_json::json!(m.ce_type));
    obj.insert("ts".into(), serde_json::json!(m.ts.0));
    obj.insert("args".into(), serde_json::Value::Object(args));
    obj.insert("prob".into(), json_prob(m.prob));
    obj.insert("events".into(), serde_json::json!(events));
    if m.promoted_id != 0 {
        obj.insert("id".into(), serde_json::json!(m.promoted_id));
    }
    serde_json::Value::Object(obj).to_string()
}

/// One output line for an instance marginal.
pub fn marginal_line(key: &CeInstanceKey, prob: f64) -> String {
    let args: serde_json::Map<String, serde_json::Value> = key
        .attrs
        .iter()
        .map(|(k, v)| (k.clone(), attr_to_json(v)))
        .collect();
    serde_json::json!({
        "type": key.ce_type,
        "ts": key.ts.0,
        "args": args,
        "prob": json_prob(prob),
    })
    .to_string()
}

/// A parsed output/gold line for scoring.
#[derive(Debug, Clone, Deserialize)]
pub struct ScoredLine {
    #[serde(rename = "type")]
    pub ce_type: String,
    pub ts: u64,
    #[serde(default)]
    pub args: BTreeMap<String, AttrValue>,
    #[serde(default)]
    pub prob: Option<f64>,
}

impl ScoredLine {
    pub fn key(&self) -> (String, Vec<(String, AttrValue)>, u64) {
        (
            self.ce_type.clone(),
            self.args.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            self.ts,
        )
    }
}

pub fn read_scored<R: BufRead>(reader: R, what: &str) -> CliResult<Vec<ScoredLine>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::config("IO_ERROR", e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ScoredLine = serde_json::from_str(&line).map_err(|e| {
            CliError::config(
                "MALFORMED_LINE",
                format!("{what} line {}: {e}", lineno + 1),
            )
        })?;
        out.push(parsed);
    }
    Ok(out)
}

pub fn write_lines<W: Write>(mut w: W, lines: &[String]) -> CliResult<()> {
    for l in lines {
        writeln!(w, "{l}").map_err(|e| CliError::stream("IO_ERROR", e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_digit_rounding() {
        assert_eq!(round_sig(0.481950000123), 0.48195);
        assert_eq!(round_sig(0.0), 0.0);
        assert_eq!(round_sig(1.0), 1.0);
        assert_eq!(round_sig(0.6843690000004), 0.684369);
        assert_eq!(format!("{}", round_sig(0.5508000000000001)), "0.5508");
    }

    #[test]
    fn event_parsing_shorthand_and_alts() {
        let input = "\
{\"type\":\"hasBall\",\"ts\":4,\"args\":{\"player\":\"p2\"},\"prob\":0.7}\n\
{\"type\":\"e\",\"ts\":5,\"alts\":[{\"args\":{\"x\":1},\"prob\":0.5},{\"args\":{\"x\":2},\"prob\":0.2}]}\n\
{\"type\":\"crisp\",\"ts\":6,\"args\":{}}\n";
        let events = read_events(input.as_bytes()).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].id, 0);
        assert!((events[0].non_occurrence() - 0.3).abs() < 1e-12);
        assert_eq!(events[1].alternatives.len(), 2);
        assert!(events[2].is_crisp());
    }

    #[test]
    fn invalid_events_carry_codes() {
        let e = read_events("{\"type\":\"x\"}\n".as_bytes()).unwrap_err();
        assert_eq!(e.code, "MISSING_FIELD");
        let e = read_events("{nope}\n".as_bytes()).unwrap_err();
        assert_eq!(e.code, "MALFORMED_EVENT");
        let e = read_events(
            "{\"type\":\"x\",\"ts\":0,\"alts\":[{\"args\":{\"a\":1},\"prob\":0.7},{\"args\":{\"a\":2},\"prob\":0.5}]}\n"
                .as_bytes(),
        )
        .unwrap_err();
        assert_eq!(e.code, "PROB_SUM_EXCEEDED");
    }
}
