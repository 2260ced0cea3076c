//! Metrics aggregation and report files.
//!
//! Two machine-readable artifacts are written per evaluation: `metrics.json`,
//! which contains only seed-deterministic fields and is byte-identical across
//! reruns of the same config, and `timing.json`, which carries wall-clock
//! runtimes and is explicitly excluded from the determinism contract. The
//! human-readable `report.txt` shows both.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::math::{mean, sample_std};
use crate::Result;

/// Deterministic per-split results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub task: String,
    pub split_id: u32,
    pub hamming_error: f64,
    pub zero_one_error: f64,
    /// Posterior samples used for prediction (post burn-in).
    pub n_samples: u64,
    /// Chain iterations run for this split (0 for file-based evaluation).
    pub iterations: u64,
}

/// Aggregate over splits; std is the sample standard deviation (n-1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub hamming_mean: f64,
    pub hamming_std: f64,
    pub zero_one_mean: f64,
    pub zero_one_std: f64,
}

/// Full report: deterministic metrics plus wall-clock runtimes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub splits: Vec<SplitMetrics>,
    pub aggregate: AggregateMetrics,
    /// Runtime per split, parallel to `splits`.
    pub runtime_seconds: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MetricsFile {
    splits: Vec<SplitMetrics>,
    aggregate: AggregateMetrics,
}

#[derive(Serialize, Deserialize)]
struct TimingFile {
    runtime_seconds: Vec<f64>,
    total_runtime_seconds: f64,
}

pub fn aggregate(splits: &[SplitMetrics]) -> AggregateMetrics {
    let hamming: Vec<f64> = splits.iter().map(|s| s.hamming_error).collect();
    let zero_one: Vec<f64> = splits.iter().map(|s| s.zero_one_error).collect();
    AggregateMetrics {
        hamming_mean: mean(&hamming),
        hamming_std: sample_std(&hamming),
        zero_one_mean: mean(&zero_one),
        zero_one_std: sample_std(&zero_one),
    }
}

impl MetricsReport {
    pub fn new(splits: Vec<SplitMetrics>, runtime_seconds: Vec<f64>) -> Self {
        let aggregate = aggregate(&splits);
        MetricsReport { splits, aggregate, runtime_seconds }
    }

    /// Writes metrics.json (deterministic), timing.json, and report.txt.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let metrics = MetricsFile { splits: self.splits.clone(), aggregate: self.aggregate.clone() };
        fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(&metrics)?)?;
        let timing = TimingFile {
            runtime_seconds: self.runtime_seconds.clone(),
            total_runtime_seconds: self.runtime_seconds.iter().sum(),
        };
        fs::write(dir.join("timing.json"), serde_json::to_vec_pretty(&timing)?)?;
        fs::write(dir.join("report.txt"), self.human_readable())?;
        Ok(())
    }

    pub fn human_readable(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>6} {:>10} {:>10} {:>9} {:>11} {:>9}",
            "task", "split", "hamming", "zero-one", "samples", "iterations", "runtime");
        for (s, rt) in self.splits.iter().zip(
            self.runtime_seconds.iter().chain(std::iter::repeat(&f64::NAN)),
        ) {
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:>10.4} {:>10.4} {:>9} {:>11} {:>8.1}s",
                s.task, s.split_id, s.hamming_error, s.zero_one_error, s.n_samples, s.iterations, rt
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            out,
            "aggregate over {} split(s): hamming {:.4} +/- {:.4}, zero-one {:.4} +/- {:.4}",
            self.splits.len(),
            a.hamming_mean,
            a.hamming_std,
            a.zero_one_mean,
            a.zero_one_std
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(h: f64, z: f64) -> SplitMetrics {
        SplitMetrics {
            task: "t".into(),
            split_id: 0,
            hamming_error: h,
            zero_one_error: z,
            n_samples: 1,
            iterations: 10,
        }
    }

    #[test]
    fn constant_errors_have_zero_std() {
        let splits: Vec<SplitMetrics> = (0..5).map(|_| split(0.1, 0.4)).collect();
        let agg = aggregate(&splits);
        assert_eq!(agg.hamming_mean, 0.1);
        assert_eq!(agg.hamming_std, 0.0);
        assert_eq!(agg.zero_one_mean, 0.4);
    }

    #[test]
    fn aggregate_mean_is_arithmetic_mean() {
        let splits = vec![split(0.1, 0.2), split(0.3, 0.6)];
        let agg = aggregate(&splits);
        assert!((agg.hamming_mean - 0.2).abs() < 1e-12);
        assert!((agg.zero_one_mean - 0.4).abs() < 1e-12);
    }

    #[test]
    fn metrics_file_is_deterministic_but_timing_is_separate() {
        let dir = tempfile::tempdir().unwrap();
        let report1 = MetricsReport::new(vec![split(0.25, 0.5)], vec![1.23]);
        report1.write(dir.path()).unwrap();
        let bytes1 = fs::read(dir.path().join("metrics.json")).unwrap();
        let report2 = MetricsReport::new(vec![split(0.25, 0.5)], vec![99.9]);
        report2.write(dir.path()).unwrap();
        let bytes2 = fs::read(dir.path().join("metrics.json")).unwrap();
        assert_eq!(bytes1, bytes2, "metrics.json must not depend on runtime");
        assert!(dir.path().join("timing.json").exists());
        assert!(dir.path().join("report.txt").exists());
    }
}
