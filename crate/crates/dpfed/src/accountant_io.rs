//! Text form of the moments accountant state:
//!
//! ```text
//! epsilon = 8
//! rounds = 11
//! lambda_max = 32
//! delta = 1.2e-4
//! 1 2.0000000000000000e-2
//! 2 ...
//! ```
//!
//! `delta` is informational and recomputed on load; every remaining line holds
//! an order and its cumulative log-moment.

use std::fmt::Write as _;

use dpfed_core::dp::MomentsAccountant;

use crate::error::{Error, Result};
use crate::metrics::format_float;

pub fn render_accountant(acct: &MomentsAccountant) -> String {
    let mut out = String::new();
    writeln!(out, "epsilon = {}", acct.epsilon()).unwrap();
    writeln!(out, "rounds = {}", acct.rounds()).unwrap();
    writeln!(out, "lambda_max = {}", acct.lambda_max()).unwrap();
    writeln!(out, "delta = {}", format_float(acct.current_delta())).unwrap();
    for (i, a) in acct.log_moments().iter().enumerate() {
        writeln!(out, "{} {}", i + 1, format_float(*a)).unwrap();
    }
    out
}

pub fn parse_accountant(text: &str) -> Result<MomentsAccountant> {
    let bad = |line: &str| Error::Config(format!("bad accountant line {line:?}"));
    let mut epsilon = None;
    let mut rounds = None;
    let mut lambda_max = None;
    let mut moments = Vec::new();
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        if let Some((key, value)) = line.split_once('=') {
            let value = value.trim();
            match key.trim() {
                "epsilon" => epsilon = Some(value.parse::<f64>().map_err(|_| bad(line))?),
                "rounds" => rounds = Some(value.parse::<u32>().map_err(|_| bad(line))?),
                "lambda_max" => lambda_max = Some(value.parse::<usize>().map_err(|_| bad(line))?),
                "delta" => {}
                _ => return Err(bad(line)),
            }
        } else {
            let (order, alpha) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| bad(line))?;
            let order: usize = order.parse().map_err(|_| bad(line))?;
            if order != moments.len() + 1 {
                return Err(Error::Config(format!(
                    "accountant orders must run 1, 2, ...; found {order} at position {}",
                    moments.len() + 1
                )));
            }
            moments.push(alpha.trim().parse::<f64>().map_err(|_| bad(line))?);
        }
    }
    let missing = |k: &str| Error::Config(format!("accountant text lacks `{k}`"));
    let epsilon = epsilon.ok_or_else(|| missing("epsilon"))?;
    let rounds = rounds.ok_or_else(|| missing("rounds"))?;
    if let Some(l) = lambda_max {
        if l != moments.len() {
            return Err(Error::Config(format!(
                "lambda_max = {l} but {} log-moments listed",
                moments.len()
            )));
        }
    }
    Ok(MomentsAccountant::from_parts(epsilon, moments, rounds)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut acct = MomentsAccountant::new(8.0, 32).unwrap();
        acct.accumulate(0.3, 1.1).unwrap();
        acct.accumulate(0.6, 0.9).unwrap();
        let text = render_accountant(&acct);
        assert_eq!(text.lines().count(), 4 + 32);
        let back = parse_accountant(&text).unwrap();
        assert_eq!(back.log_moments(), acct.log_moments());
        assert_eq!(back.rounds(), 2);
        assert_eq!(back.epsilon(), 8.0);
        assert_eq!(back.current_delta(), acct.current_delta());
    }

    #[test]
    fn rejects_malformed_text() {
        assert!(parse_accountant("rounds = 0\n1 0.0").is_err());
        assert!(parse_accountant("epsilon = 8\nrounds = 0\n2 0.0").is_err());
        assert!(parse_accountant("epsilon = 8\nrounds = 0\n1 -1.0").is_err());
        assert!(parse_accountant("epsilon = 8\nrounds = 0\nlambda_max = 2\n1 0.0").is_err());
        assert!(parse_accountant("epsilon = 8\nrounds = 0\nspin = up").is_err());
    }
}
