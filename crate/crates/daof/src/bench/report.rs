//! Report data model serialized to `report.json`.

use serde::{Deserialize, Serialize};

/// Five-number summary (plus mean) of a per-run distribution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl FiveNumber {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        let mut vals: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        let quantile = |q: f64| -> f64 {
            let pos = q * (vals.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            vals[lo] * (1.0 - frac) + vals[hi] * frac
        };
        Some(Self {
            min: vals[0],
            q1: quantile(0.25),
            median: quantile(0.5),
            q3: quantile(0.75),
            max: vals[vals.len() - 1],
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterReport {
    pub name: String,
    /// Pooled per-state RMSE over all non-divergent runs.
    pub per_state_rmse: Vec<f64>,
    /// Per-run per-state RMSE; divergent runs carry NaN entries.
    pub per_run_rmse: Vec<Vec<f64>>,
    /// Median-of-means single-sample estimator latency.
    pub latency_ms: f64,
    pub divergence_count: usize,
    /// Per-state five-number summaries of the per-run RMSE distribution.
    pub box_stats: Vec<Option<FiveNumber>>,
}

impl FilterReport {
    pub fn build(
        name: String,
        per_state_rmse: Vec<f64>,
        per_run_rmse: Vec<Vec<f64>>,
        latency_ms: f64,
        divergence_count: usize,
    ) -> Self {
        let n = per_state_rmse.len();
        let box_stats = (0..n)
            .map(|i| {
                let samples: Vec<f64> = per_run_rmse.iter().map(|r| r[i]).collect();
                FiveNumber::from_samples(&samples)
            })
            .collect();
        Self {
            name,
            per_state_rmse,
            per_run_rmse,
            latency_ms,
            divergence_count,
            box_stats,
        }
    }

    pub fn aggregate_rmse(&self) -> f64 {
        self.per_state_rmse.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: String,
    pub runs: usize,
    pub steps: usize,
    pub seed: u64,
    pub config_hash: String,
    pub timing_precision: String,
    pub state_dim: usize,
    pub filters: Vec<FilterReport>,
}

impl BenchReport {
    pub fn filter(&self, name: &str) -> Option<&FilterReport> {
        self.filters.iter().find(|f| f.name == name)
    }
}
