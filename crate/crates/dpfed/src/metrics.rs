//! Per-round metrics as CSV, with an optional JSON-lines mirror.
//!
//! Floats are written in scientific notation with 17 significant digits, so
//! reading a file back reproduces every value exactly. Fields that do not
//! apply to a round (accuracy between evaluations, DP fields of a non-private
//! run) are left empty in CSV and `null` in JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dpfed_core::telemetry::RoundMetrics;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 10] = [
    "round",
    "accuracy",
    "delta",
    "clip_bound",
    "v_c",
    "u_s",
    "m_t",
    "sigma_t",
    "cc_cumulative",
    "degenerate",
];

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn record(m: &RoundMetrics) -> [String; 10] {
    [
        m.round.to_string(),
        format_opt(m.accuracy),
        format_opt(m.delta),
        format_opt(m.clip_bound),
        format_float(m.v_c),
        format_float(m.u_s),
        m.m_t.to_string(),
        format_opt(m.sigma_t),
        m.cc_cumulative.to_string(),
        u8::from(m.degenerate).to_string(),
    ]
}

/// Writes a header line followed by one row per round.
pub fn write_metrics(rounds: &[RoundMetrics], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    w.write_record(COLUMNS).map_err(Error::csv(path))?;
    for m in rounds {
        w.write_record(record(m)).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Config(format!("{}:{line}: bad {name} value {s:?}", path.display())))
}

fn parse_opt(path: &Path, line: u64, name: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(path, line, name, s).map(Some)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    let header = r.headers().map_err(Error::csv(path))?.clone();
    if header.iter().ne(COLUMNS) {
        return Err(Error::Config(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(Error::csv(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| &rec[i];
        out.push(RoundMetrics {
            round: parse_field(path, line, COLUMNS[0], f(0))?,
            accuracy: parse_opt(path, line, COLUMNS[1], f(1))?,
            delta: parse_opt(path, line, COLUMNS[2], f(2))?,
            clip_bound: parse_opt(path, line, COLUMNS[3], f(3))?,
            v_c: parse_field(path, line, COLUMNS[4], f(4))?,
            u_s: parse_field(path, line, COLUMNS[5], f(5))?,
            m_t: parse_field(path, line, COLUMNS[6], f(6))?,
            sigma_t: parse_opt(path, line, COLUMNS[7], f(7))?,
            cc_cumulative: parse_field(path, line, COLUMNS[8], f(8))?,
            degenerate: parse_field::<u8>(path, line, COLUMNS[9], f(9))? != 0,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct JsonRound {
    round: u32,
    accuracy: Option<f64>,
    delta: Option<f64>,
    clip_bound: Option<f64>,
    v_c: f64,
    u_s: f64,
    m_t: usize,
    sigma_t: Option<f64>,
    cc_cumulative: u64,
    degenerate: bool,
}

impl From<&RoundMetrics> for JsonRound {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round,
            accuracy: m.accuracy,
            delta: m.delta,
            clip_bound: m.clip_bound,
            v_c: m.v_c,
            u_s: m.u_s,
            m_t: m.m_t,
            sigma_t: m.sigma_t,
            cc_cumulative: m.cc_cumulative,
            degenerate: m.degenerate,
        }
    }
}

impl From<JsonRound> for RoundMetrics {
    fn from(j: JsonRound) -> Self {
        Self {
            round: j.round,
            accuracy: j.accuracy,
            delta: j.delta,
            clip_bound: j.clip_bound,
            v_c: j.v_c,
            u_s: j.u_s,
            m_t: j.m_t,
            sigma_t: j.sigma_t,
            cc_cumulative: j.cc_cumulative,
            degenerate: j.degenerate,
        }
    }
}

/// One JSON object per line with the same fields as the CSV.
pub fn write_metrics_jsonl(rounds: &[RoundMetrics], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    for m in rounds {
        serde_json::to_writer(&mut w, &JsonRound::from(m))
            .map_err(|e| Error::io(path)(e.into()))?;
        w.write_all(b"\n").map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<RoundMetrics>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str::<JsonRound>(l)
                .map(RoundMetrics::from)
                .map_err(|e| Error::io(path)(e.into()))
        })
        .collect()
}
