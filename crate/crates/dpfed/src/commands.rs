//! The work behind each subcommand, independent of argument parsing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dpfed_core::data::{label_histogram, shard_non_iid, Dataset};
use dpfed_core::dp::MomentsAccountant;
use dpfed_core::federation::{run_federated, Schedule, TrainingHistory};

use crate::accountant_io::render_accountant;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::executor::ThreadPoolExecutor;
use crate::metrics::{format_float, write_metrics, write_metrics_jsonl};
use crate::model_io::write_model;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_JSONL_FILE: &str = "metrics.jsonl";
pub const CONFIG_ECHO_FILE: &str = "config.echo.txt";
pub const MODEL_FILE: &str = "model.bin";
pub const ACCOUNTANT_FILE: &str = "accountant.txt";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Trains with the given configuration, client work spread over `workers`
/// threads.
pub fn train(
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    workers: usize,
) -> Result<TrainingHistory> {
    let fed = config.federated();
    fed.validate()?;
    let executor = ThreadPoolExecutor::new(workers);
    Ok(run_federated(&fed, train, test, &executor)?)
}

/// Writes the metrics, the final model, the effective configuration and (for
/// private runs) the accountant state into `out`.
pub fn write_run_outputs(
    out: &Path,
    config: &ExperimentConfig,
    history: &TrainingHistory,
    jsonl: bool,
) -> Result<()> {
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let echo = out.join(CONFIG_ECHO_FILE);
    fs::write(&echo, config.render()).map_err(Error::io(&echo))?;
    write_metrics(&history.rounds, &out.join(METRICS_FILE))?;
    if jsonl {
        write_metrics_jsonl(&history.rounds, &out.join(METRICS_JSONL_FILE))?;
    }
    write_model(&history.final_params, &out.join(MODEL_FILE))?;
    if let Some(acct) = &history.accountant {
        let path = out.join(ACCOUNTANT_FILE);
        fs::write(&path, render_accountant(acct)).map_err(Error::io(&path))?;
    }
    Ok(())
}

/// One-paragraph description of a finished run.
pub fn describe_run(history: &TrainingHistory) -> String {
    let mut s = format!(
        "stopped: {}\nrounds: {}\ncommunication cost: {}\n",
        history.stop_reason,
        history.rounds.len(),
        history.communication_cost()
    );
    if let Some(acc) = history.final_accuracy() {
        writeln!(s, "final accuracy: {acc:.4}").unwrap();
    }
    if let Some(acc) = history.best_accuracy() {
        writeln!(s, "best accuracy: {acc:.4}").unwrap();
    }
    if let Some(d) = history.rounds.last().and_then(|r| r.delta) {
        writeln!(s, "delta: {d:.3e}").unwrap();
    }
    s
}

pub fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

/// One line of the standalone accountant table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccountantRow {
    pub round: u32,
    pub q: f64,
    pub z: f64,
    pub delta: f64,
}

/// Composes `rounds` rounds with per-round sampling ratio and noise
/// multiplier taken from the schedules, reporting delta after each.
pub fn accountant_table(
    q: &Schedule<f64>,
    z: &Schedule<f64>,
    rounds: u32,
    epsilon: f64,
    lambda_max: u32,
) -> Result<(Vec<AccountantRow>, MomentsAccountant)> {
    let mut acct = MomentsAccountant::new(epsilon, lambda_max)?;
    let mut rows = Vec::with_capacity(rounds as usize);
    for t in 1..=rounds {
        let (qt, zt) = (q.value_at(t), z.value_at(t));
        if !(0.0..=1.0).contains(&qt) {
            return Err(Error::Config(format!("sampling ratio {qt} outside [0, 1]")));
        }
        acct.accumulate(qt, zt)?;
        rows.push(AccountantRow {
            round: t,
            q: qt,
            z: zt,
            delta: acct.current_delta(),
        });
    }
    Ok((rows, acct))
}

pub fn render_accountant_table(rows: &[AccountantRow], csv: bool) -> String {
    let mut out = String::new();
    if csv {
        out.push_str("round,q,z,delta\n");
        for r in rows {
            writeln!(
                out,
                "{},{},{},{}",
                r.round,
                format_float(r.q),
                format_float(r.z),
                format_float(r.delta)
            )
            .unwrap();
        }
    } else {
        writeln!(
            out,
            "{:>6}  {:>8}  {:>8}  {:>12}",
            "round", "q", "z", "delta"
        )
        .unwrap();
        for r in rows {
            writeln!(
                out,
                "{:>6}  {:>8.4}  {:>8.4}  {:>12.4e}",
                r.round, r.q, r.z, r.delta
            )
            .unwrap();
        }
    }
    out
}

/// How concentrated the clients' labels are.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSummary {
    pub clients: usize,
    pub min_points: usize,
    pub max_points: usize,
    /// Number of clients per count of distinct labels held.
    pub distinct_labels: BTreeMap<usize, usize>,
    /// Per-client label counts.
    pub histograms: Vec<Vec<usize>>,
}

pub fn inspect_partition(dataset: &Dataset, clients: usize, seed: u64) -> Result<PartitionSummary> {
    let partition = shard_non_iid(dataset, clients, seed)?;
    let histograms = (0..clients)
        .map(|k| label_histogram(&partition, dataset, k))
        .collect::<dpfed_core::Result<Vec<_>>>()?;
    let mut distinct_labels = BTreeMap::new();
    let mut min_points = usize::MAX;
    let mut max_points = 0;
    for h in &histograms {
        let points: usize = h.iter().sum();
        min_points = min_points.min(points);
        max_points = max_points.max(points);
        *distinct_labels
            .entry(h.iter().filter(|&&c| c > 0).count())
            .or_insert(0) += 1;
    }
    Ok(PartitionSummary {
        clients,
        min_points,
        max_points,
        distinct_labels,
        histograms,
    })
}

pub fn render_partition_summary(s: &PartitionSummary, csv: bool) -> String {
    let mut out = String::new();
    if csv {
        let classes = s.histograms.first().map_or(0, Vec::len);
        out.push_str("client,points,distinct");
        for c in 0..classes {
            write!(out, ",label_{c}").unwrap();
        }
        out.push('\n');
        for (k, h) in s.histograms.iter().enumerate() {
            let points: usize = h.iter().sum();
            let distinct = h.iter().filter(|&&c| c > 0).count();
            write!(out, "{k},{points},{distinct}").unwrap();
            for c in h {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
    } else {
        writeln!(out, "clients: {}", s.clients).unwrap();
        writeln!(
            out,
            "points per client: {} to {}",
            s.min_points, s.max_points
        )
        .unwrap();
        writeln!(out, "distinct labels  clients").unwrap();
        for (d, n) in &s.distinct_labels {
            writeln!(out, "{d:>15}  {n:>7}").unwrap();
        }
    }
    out
}
