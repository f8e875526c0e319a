//! Detection scoring and per-epoch series extracted from round traces.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::engine::RoundTrace;

/// Weight at or below which a client counts as detected.
pub const DETECTION_EPSILON: f64 = 1e-4;

/// Confusion counts with "malicious" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// `num / den`, with `0 / 0 = 0`.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl DetectionReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        let accuracy = ratio((tp + tn) as f64, (tp + fp + fn_ + tn) as f64);
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            accuracy,
        }
    }

    pub fn n_clients(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Flags client `i` iff `w[i] <= epsilon` and scores the flags against the
/// true malicious set. Ids outside `w` are ignored.
pub fn detection_confusion(w: &[f64], malicious: &BTreeSet<usize>, epsilon: f64) -> DetectionReport {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (i, &wi) in w.iter().enumerate() {
        match (wi <= epsilon, malicious.contains(&i)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    DetectionReport::from_counts(tp, fp, fn_, tn)
}

/// `(epoch, test accuracy)` in epoch order.
pub fn accuracy_curve(traces: &[RoundTrace]) -> Vec<(usize, f64)> {
    traces.iter().map(|t| (t.epoch, t.test_accuracy)).collect()
}

/// One row of client weights per epoch.
pub fn weight_matrix(traces: &[RoundTrace]) -> Vec<Vec<f64>> {
    traces.iter().map(|t| t.weights.as_slice().to_vec()).collect()
}

/// First epoch whose weights put every malicious client at or below
/// `epsilon`; `None` if that never happens or the set is empty.
pub fn first_suppression_epoch(traces: &[RoundTrace], malicious: &BTreeSet<usize>, epsilon: f64) -> Option<usize> {
    if malicious.is_empty() {
        return None;
    }
    traces
        .iter()
        .find(|t| {
            malicious
                .iter()
                .all(|&c| t.weights.as_slice().get(c).is_some_and(|&w| w <= epsilon))
        })
        .map(|t| t.epoch)
}
