//! Accuracy metrics against gold labels: precision, recall, F-measure over
//! (type, attributes, timestamp) instance matching.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::io::ScoredLine;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub precision_defined: bool,
    pub recall: f64,
    pub recall_defined: bool,
    pub f_measure: f64,
}

/// Multiset instance matching: a prediction with prob >= threshold that
/// matches a gold line on (type, attrs, ts) is a true positive; unmatched
/// predictions are false positives, unmatched gold lines false negatives.
pub fn score(predicted: &[ScoredLine], gold: &[ScoredLine], threshold: f64) -> MetricsReport {
    type Key = (String, Vec<(String, probcer_core::event::AttrValue)>, u64);
    let mut pred_counts: BTreeMap<Key, usize> = BTreeMap::new();
    let mut total_pred = 0usize;
    for p in predicted {
        if p.prob.unwrap_or(1.0) >= threshold {
            *pred_counts.entry(p.key()).or_insert(0) += 1;
            total_pred += 1;
        }
    }
    let mut gold_counts: BTreeMap<Key, usize> = BTreeMap::new();
    for g in gold {
        *gold_counts.entry(g.key()).or_insert(0) += 1;
    }
    let total_gold: usize = gold_counts.values().sum();

    let mut tp = 0usize;
    for (key, n) in &gold_counts {
        if let Some(m) = pred_counts.get(key) {
            tp += n.min(m);
        }
    }
    let fp = total_pred - tp;
    let fnn = total_gold - tp;

    let precision_defined = total_pred > 0;
    let recall_defined = total_gold > 0;
    let precision = if precision_defined {
        tp as f64 / total_pred as f64
    } else {
        0.0
    };
    let recall = if recall_defined {
        tp as f64 / total_gold as f64
    } else {
        0.0
    };
    let f_measure = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    MetricsReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fnn,
        precision,
        precision_defined,
        recall,
        recall_defined,
        f_measure,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::read_scored;

    fn lines(text: &str) -> Vec<ScoredLine> {
        read_scored(text.as_bytes(), "test").unwrap()
    }

    #[test]
    fn identity_scores_perfectly() {
        let x = lines(
            "{\"type\":\"a\",\"ts\":1,\"args\":{\"a0\":\"p\"},\"prob\":0.5}\n\
             {\"type\":\"b\",\"ts\":2,\"args\":{},\"prob\":0.9}\n",
        );
        let r = score(&x, &x, 0.0);
        assert_eq!(r.true_positives, 2);
        assert_eq!((r.precision, r.recall, r.f_measure), (1.0, 1.0, 1.0));
    }

    #[test]
    fn undefined_precision_is_flagged() {
        let gold = lines("{\"type\":\"a\",\"ts\":1,\"args\":{}}\n");
        let r = score(&[], &gold, 0.0);
        assert!(!r.precision_defined);
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.recall, 0.0);
        assert!(r.recall_defined);
    }

    #[test]
    fn formula_case() {
        // 2 TP, 1 FP, 1 FN -> P = R = F = 2/3
        let pred = lines(
            "{\"type\":\"a\",\"ts\":1,\"args\":{}}\n\
             {\"type\":\"a\",\"ts\":2,\"args\":{}}\n\
             {\"type\":\"x\",\"ts\":9,\"args\":{}}\n",
        );
        let gold = lines(
            "{\"type\":\"a\",\"ts\":1,\"args\":{}}\n\
             {\"type\":\"a\",\"ts\":2,\"args\":{}}\n\
             {\"type\":\"y\",\"ts\":9,\"args\":{}}\n",
        );
        let r = score(&pred, &gold, 0.0);
        assert_eq!(r.true_positives, 2);
        assert_eq!(r.false_positives, 1);
        assert_eq!(r.false_negatives, 1);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f_measure - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_filters_predictions() {
        let pred = lines("{\"type\":\"a\",\"ts\":1,\"args\":{},\"prob\":0.4}\n");
        let gold = lines("{\"type\":\"a\",\"ts\":1,\"args\":{}}\n");
        let r = score(&pred, &gold, 0.5);
        assert_eq!(r.true_positives, 0);
        assert!(!r.precision_defined);
        assert_eq!(r.false_negatives, 1);
    }
}
