//! Monte-Carlo batches: many independently seeded sessions, one CSV row each.

use std::fs;
use std::io;
use std::path::Path;

use qkd_core::{privacy, run_session, SessionConfig, SessionError, SessionReport, Verdict};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigErrors, Sweep};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub base: SessionConfig,
    pub trials: usize,
    pub seed_base: u64,
    pub sweep: Option<Sweep>,
}

/// One CSV row. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub variant: String,
    pub adversary: String,
    pub n_photons: usize,
    pub sifted_fraction: f64,
    pub qber_true: f64,
    pub qber_est: f64,
    pub leak_t: usize,
    pub r_final: usize,
    pub keys_match: bool,
    pub auth_verdict: String,
    pub eve_key_match: bool,
}

impl TrialRow {
    pub fn from_report(trial: usize, r: &SessionReport) -> Self {
        Self {
            trial,
            seed: r.seed,
            variant: r.variant.to_string(),
            adversary: r.adversary.to_string(),
            n_photons: r.n_photons,
            sifted_fraction: r.sifted_fraction,
            qber_true: r.qber_true,
            qber_est: r.qber_est,
            leak_t: r.leak_t,
            r_final: r.r_final,
            keys_match: r.keys_match,
            auth_verdict: r.auth_verdict.to_string(),
            eve_key_match: r.eve_key_match,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single trial.
    pub stddev: f64,
}

impl Stat {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        if xs.is_empty() {
            return Self { mean: 0.0, stddev: 0.0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stddev = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, stddev }
    }
}

/// Aggregates over one batch, all recomputable from its rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub trials: usize,
    pub seed_base: u64,
    pub qber_true: Stat,
    pub sifted_fraction: Stat,
    pub leak_t: Stat,
    pub r_final: Stat,
    pub abort_rate: f64,
    pub keys_match_rate: f64,
    pub eve_key_match_rate: f64,
    /// `2^-s / ln 2` for the batch's safety margin.
    pub eve_info_bound: f64,
}

impl BatchSummary {
    pub fn from_rows(rows: &[TrialRow], seed_base: u64, safety_s: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let rate = |pred: fn(&TrialRow) -> bool| rows.iter().filter(|r| pred(r)).count() as f64 / n;
        Self {
            trials: rows.len(),
            seed_base,
            qber_true: Stat::of(rows.iter().map(|r| r.qber_true)),
            sifted_fraction: Stat::of(rows.iter().map(|r| r.sifted_fraction)),
            leak_t: Stat::of(rows.iter().map(|r| r.leak_t as f64)),
            r_final: Stat::of(rows.iter().map(|r| r.r_final as f64)),
            abort_rate: rate(|r| r.auth_verdict == Verdict::Abort.as_str()),
            keys_match_rate: rate(|r| r.keys_match),
            eve_key_match_rate: rate(|r| r.eve_key_match),
            eve_info_bound: privacy::eve_info_bound(safety_s),
        }
    }
}

/// Result of one batch (one sweep point, or the whole batch without a sweep).
#[derive(Debug, Clone)]
pub struct BatchResult {
    /// `field=value` for sweep points.
    pub label: Option<String>,
    pub config: SessionConfig,
    pub rows: Vec<TrialRow>,
    pub reports: Vec<SessionReport>,
    pub summary: BatchSummary,
}

/// Runs `trials` sessions with seeds `seed_base + i` on the rayon pool.
/// Halted sessions contribute their partial report. Rows come back in
/// trial order.
pub fn run_trials(base: &SessionConfig, trials: usize, seed_base: u64) -> Vec<SessionReport> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let cfg = SessionConfig {
                seed: seed_base.wrapping_add(i as u64),
                ..base.clone()
            };
            match run_session(&cfg) {
                Ok(r) => r,
                Err(SessionError::Halted { report, .. }) => *report,
                Err(SessionError::InvalidConfig(e)) => panic!("config validated earlier: {e}"),
            }
        })
        .collect()
}

fn run_one(label: Option<String>, config: SessionConfig, trials: usize, seed_base: u64) -> BatchResult {
    let reports = run_trials(&config, trials, seed_base);
    let rows: Vec<TrialRow> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| TrialRow::from_report(i, r))
        .collect();
    let summary = BatchSummary::from_rows(&rows, seed_base, config.safety_s);
    BatchResult {
        label,
        config,
        rows,
        reports,
        summary,
    }
}

/// Runs the batch, once per sweep value if a sweep is given.
pub fn run_batch(spec: &BatchSpec) -> Result<Vec<BatchResult>, ConfigErrors> {
    if spec.trials == 0 {
        return Err(qkd_core::pipeline::ConfigError::new("trials", "must be >= 1").into());
    }
    let points: Vec<(Option<String>, SessionConfig)> = match &spec.sweep {
        None => vec![(None, spec.base.clone())],
        Some(sweep) => sweep
            .values
            .iter()
            .map(|v| {
                let cfg = config::apply_overrides(spec.base.clone(), [(sweep.field.as_str(), v.as_str())])?;
                Ok((Some(format!("{}={v}", sweep.field)), cfg))
            })
            .collect::<Result<_, ConfigErrors>>()?,
    };
    if let Err(errs) = spec.base.validate() {
        return Err(ConfigErrors(errs));
    }
    Ok(points
        .into_iter()
        .map(|(label, cfg)| run_one(label, cfg, spec.trials, spec.seed_base))
        .collect())
}

pub fn write_csv(path: &Path, rows: &[TrialRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}

pub fn read_csv(path: &Path) -> io::Result<Vec<TrialRow>> {
    csv::Reader::from_path(path)?
        .deserialize()
        .map(|r| r.map_err(io::Error::from))
        .collect()
}

/// Writes `trials.csv` and `summary.json` into `dir` (one subdirectory per
/// sweep point).
pub fn write_results(dir: &Path, results: &[BatchResult]) -> io::Result<()> {
    for res in results {
        let sub = match &res.label {
            Some(label) => dir.join(label),
            None => dir.to_path_buf(),
        };
        fs::create_dir_all(&sub)?;
        write_csv(&sub.join("trials.csv"), &res.rows)?;
        fs::write(sub.join("config.toml"), config::render(&res.config))?;
        fs::write(
            sub.join("summary.json"),
            serde_json::to_string_pretty(&res.summary)? + "\n",
        )?;
    }
    Ok(())
}
