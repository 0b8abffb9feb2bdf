//! Grid search over local batch size, local epochs, participation schedule
//! and noise schedule.
//!
//! Cells are ranked by final test accuracy among those whose privacy loss
//! stayed within the threshold; equal accuracies favour fewer communication
//! rounds.

use std::cmp::Ordering;
use std::path::Path;

use dpfed_core::data::Dataset;
use dpfed_core::federation::{run_federated, Schedule, Sequential, StopReason, TrainingHistory};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::format_float;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub batch_sizes: Vec<usize>,
    pub local_epochs: Vec<usize>,
    pub m_schedules: Vec<Schedule<usize>>,
    pub sigma_schedules: Vec<Schedule<f64>>,
}

impl SweepGrid {
    /// Parses `;`-separated lists (schedules themselves contain commas).
    pub fn parse(batch_sizes: &str, epochs: &str, m: &str, sigma: &str) -> Result<Self> {
        fn list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>> {
            s.split(';')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| {
                    p.parse()
                        .map_err(|_| Error::Config(format!("bad {what} grid entry {p:?}")))
                })
                .collect()
        }
        Ok(Self {
            batch_sizes: list("batch size", batch_sizes)?,
            local_epochs: list("epochs", epochs)?,
            m_schedules: list("m schedule", m)?,
            sigma_schedules: list("sigma schedule", sigma)?,
        })
    }

    pub fn len(&self) -> usize {
        self.batch_sizes.len()
            * self.local_epochs.len()
            * self.m_schedules.len()
            * self.sigma_schedules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The Cartesian product, batch size varying slowest. Cell `i` runs with
    /// seed `base.seed + i`.
    pub fn cells(&self, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
        if self.is_empty() {
            return Err(Error::Config("sweep grid has no cells".into()));
        }
        let mut cells = Vec::with_capacity(self.len());
        for &b in &self.batch_sizes {
            for &e in &self.local_epochs {
                for m in &self.m_schedules {
                    for s in &self.sigma_schedules {
                        cells.push(ExperimentConfig {
                            batch_size: b,
                            local_epochs: e,
                            m_schedule: Some(m.clone()),
                            sigma_schedule: s.clone(),
                            seed: base.seed.wrapping_add(cells.len() as u64),
                            ..base.clone()
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub index: usize,
    pub config: ExperimentConfig,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub rounds: u32,
    pub cc: u64,
    pub delta: Option<f64>,
    pub stop_reason: StopReason,
}

impl CellResult {
    pub fn from_history(index: usize, config: ExperimentConfig, h: &TrainingHistory) -> Self {
        Self {
            index,
            best_accuracy: h.best_accuracy().unwrap_or(0.0),
            final_accuracy: h.final_accuracy().unwrap_or(0.0),
            rounds: h.rounds.last().map_or(0, |r| r.round),
            cc: h.communication_cost(),
            delta: h.rounds.last().and_then(|r| r.delta),
            stop_reason: h.stop_reason,
            config,
        }
    }

    fn within_budget(&self) -> bool {
        !self.config.dp
            || self
                .delta
                .map_or(true, |d| d <= self.config.delta_threshold)
    }
}

/// Admissible cells first, then higher final accuracy, then fewer rounds,
/// then grid order.
pub fn rank(results: &mut [CellResult]) {
    results.sort_by(|a, b| {
        b.within_budget()
            .cmp(&a.within_budget())
            .then(b.final_accuracy.total_cmp(&a.final_accuracy))
            .then(a.rounds.cmp(&b.rounds))
            .then(a.index.cmp(&b.index))
            .then(Ordering::Equal)
    });
}

/// Runs every cell, `workers` at a time, and returns the ranked results.
pub fn run_sweep(
    cells: &[ExperimentConfig],
    train: &Dataset,
    test: &Dataset,
    workers: usize,
) -> Result<Vec<CellResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start workers: {e}")))?;
    let mut results = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| {
                let h = run_federated(&cfg.federated(), train, test, &Sequential)?;
                log::info!(
                    "cell {i}: acc {:.4} after {} rounds ({})",
                    h.final_accuracy().unwrap_or(0.0),
                    h.rounds.len(),
                    h.stop_reason
                );
                Ok(CellResult::from_history(i, cfg.clone(), &h))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    rank(&mut results);
    Ok(results)
}

pub const SUMMARY_COLUMNS: [&str; 13] = [
    "rank",
    "cell",
    "batch_size",
    "local_epochs",
    "m_schedule",
    "sigma_schedule",
    "seed",
    "best_accuracy",
    "final_accuracy",
    "rounds",
    "cc",
    "delta",
    "stop_reason",
];

/// Writes ranked results, one row per cell.
pub fn write_summary(results: &[CellResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    w.write_record(SUMMARY_COLUMNS).map_err(Error::csv(path))?;
    for (rank, r) in results.iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            r.index.to_string(),
            r.config.batch_size.to_string(),
            r.config.local_epochs.to_string(),
            r.config.m_schedule().to_string(),
            if r.config.dp {
                r.config.sigma_schedule.to_string()
            } else {
                String::new()
            },
            r.config.seed.to_string(),
            format_float(r.best_accuracy),
            format_float(r.final_accuracy),
            r.rounds.to_string(),
            r.cc.to_string(),
            r.delta.map(format_float).unwrap_or_default(),
            r.stop_reason.to_string(),
        ])
        .map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}
