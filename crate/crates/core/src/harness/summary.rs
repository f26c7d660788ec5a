use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use super::MetricRecord;

/// Which records of a level enter its summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowPolicy {
    /// Every record of the level.
    #[default]
    FullLevel,
    /// Only the last `n` records of the level.
    Tail(usize),
}

/// Window statistics in one unit. `variance` and `mse` are in squared units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceStats {
    pub true_mi: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
}

impl SliceStats {
    fn scaled(&self, s: f64) -> Self {
        Self {
            true_mi: self.true_mi * s,
            mean_estimate: self.mean_estimate * s,
            bias: self.bias * s,
            variance: self.variance * s * s,
            mse: self.mse * s * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummarySlice {
    pub level: usize,
    pub samples: usize,
    pub nats: SliceStats,
    pub bits: SliceStats,
}

/// Per-level bias/variance/MSE. Records are grouped by their `level`;
/// variance is the population variance over the window.
pub fn summarize(records: &[MetricRecord], policy: WindowPolicy) -> Vec<SummarySlice> {
    let mut levels: Vec<usize> = records.iter().map(|r| r.level).collect();
    levels.sort_unstable();
    levels.dedup();
    let mut out = Vec::with_capacity(levels.len());
    for level in levels {
        let all: Vec<&MetricRecord> = records.iter().filter(|r| r.level == level).collect();
        let window = match policy {
            WindowPolicy::FullLevel => &all[..],
            WindowPolicy::Tail(n) => &all[all.len().saturating_sub(n)..],
        };
        if window.is_empty() {
            log::warn!("level {level} has no records in the window; skipped");
            continue;
        }
        let n = window.len() as f64;
        let truth = window[0].true_mi_nats;
        let mean = window.iter().map(|r| r.estimate_nats).sum::<f64>() / n;
        let variance = window.iter().map(|r| (r.estimate_nats - mean).powi(2)).sum::<f64>() / n;
        let mse = window.iter().map(|r| (r.estimate_nats - r.true_mi_nats).powi(2)).sum::<f64>() / n;
        let nats = SliceStats {
            true_mi: truth,
            mean_estimate: mean,
            bias: mean - truth,
            variance,
            mse,
        };
        out.push(SummarySlice {
            level,
            samples: window.len(),
            nats,
            bits: nats.scaled(1.0 / LN_2),
        });
    }
    out
}

/// `mean_estimate / true_mi`, or `None` when the truth is zero.
pub fn estimate_ratio(slice: &SummarySlice) -> Option<f64> {
    let t = slice.nats.true_mi;
    (t != 0.0 && t.is_finite()).then(|| slice.nats.mean_estimate / t)
}
