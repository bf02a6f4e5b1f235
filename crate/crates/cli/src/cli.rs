//! Argument parsing and subcommand dispatch for `qkdsim`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use qkd_core::pipeline::{self, ConfigError};
use qkd_core::{SessionConfig, SessionError, Verdict};
use rayon::prelude::*;
use serde::Serialize;

use crate::batch::{self, BatchSpec};
use crate::config::{self, ConfigErrors, Sweep};
use crate::demo;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ABORT: i32 = 2;
pub const EXIT_HALTED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qkdsim", version, about = "BB84 key distribution simulator with identity verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one session and write its report and transcript.
    Run(Common),
    /// Run a seeded batch of sessions and write per-trial CSV plus a summary.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Repeat the batch for each value of one numeric field,
        /// e.g. `intercept_fraction=0,0.25,0.5`.
        #[arg(long, value_name = "FIELD=V1,V2,...")]
        sweep: Option<String>,
    },
    /// Impersonation against BASELINE and AUTH_BEFORE_PA with the same seed.
    AttackDemo {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds to run.
        #[arg(long, default_value_t = 1)]
        trials: usize,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key = value config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out", value_name = "DIR")]
    out: PathBuf,
    /// Output subdirectory name; derived from the settings if omitted.
    #[arg(long)]
    id: Option<String>,
    #[command(flatten)]
    fields: FieldFlags,
}

macro_rules! field_flags {
    ($($field:ident),* $(,)?) => {
        /// One flag per config field, named exactly like the field.
        #[derive(Debug, Args)]
        struct FieldFlags {
            $(
                #[arg(long = stringify!($field), value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl FieldFlags {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

// order matters: adversary before intercept_fraction
field_flags!(
    n_photons,
    flip_prob,
    loss_prob,
    adversary,
    intercept_fraction,
    variant,
    safety_s,
    sample_fraction,
    auth_rule,
    ka_len,
    tag_len,
    nonce_len,
    block_size,
    agree_rounds_needed,
    max_rounds,
    seed,
);

impl Common {
    fn session_config(&self) -> Result<SessionConfig, ConfigErrors> {
        let base = match &self.config {
            Some(path) => config::load(path)?,
            None => SessionConfig::default(),
        };
        config::apply_overrides(base, self.fields.pairs())
    }
}

fn path_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(common: &Common) -> anyhow::Result<i32> {
    let cfg = common.session_config()?;
    let id = common.id.clone().unwrap_or_else(|| {
        path_safe(&format!("run-{}-{}-seed{}", cfg.variant, cfg.adversary, cfg.seed))
    });
    let dir = common.out.join(id);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), config::render(&cfg))?;

    let (mut report, code) = match pipeline::run_session_detailed(&cfg) {
        Ok(out) => {
            let log_path = dir.join("transcript.log");
            fs::write(&log_path, out.transcript.to_log())?;
            if let Some(eb) = &out.eve_bob_transcript {
                fs::write(dir.join("transcript-eve-bob.log"), eb.to_log())?;
            }
            let mut report = out.report;
            report.transcript_path = Some(log_path.display().to_string());
            let code = if report.auth_verdict == Verdict::Abort { EXIT_ABORT } else { EXIT_OK };
            (report, code)
        }
        Err(SessionError::Halted { cause, report }) => {
            eprintln!("session halted: {cause}");
            (*report, EXIT_HALTED)
        }
        Err(SessionError::InvalidConfig(e)) => return Err(ConfigErrors::from(e).into()),
    };
    if let Some(side) = report.bob_side.as_mut() {
        side.transcript_path = dir
            .join("transcript-eve-bob.log")
            .exists()
            .then(|| dir.join("transcript-eve-bob.log").display().to_string());
    }
    write_json(&dir.join("report.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!("wrote {}", dir.display());
    Ok(code)
}

#[derive(Serialize)]
struct SweepPoint<'a> {
    point: &'a str,
    summary: &'a batch::BatchSummary,
}

fn cmd_montecarlo(common: &Common, trials: usize, sweep: Option<&str>) -> anyhow::Result<i32> {
    let cfg = common.session_config()?;
    let sweep: Option<Sweep> = sweep.map(str::parse).transpose().map_err(ConfigErrors::from)?;
    let spec = BatchSpec {
        seed_base: cfg.seed,
        base: cfg,
        trials,
        sweep,
    };
    let results = batch::run_batch(&spec)?;
    let id = common.id.clone().unwrap_or_else(|| {
        path_safe(&format!(
            "mc-{}-{}-seed{}-trials{}",
            spec.base.variant, spec.base.adversary, spec.seed_base, trials
        ))
    });
    let dir = common.out.join(id);
    batch::write_results(&dir, &results).with_context(|| format!("writing {}", dir.display()))?;
    if spec.sweep.is_some() {
        let points: Vec<SweepPoint> = results
            .iter()
            .map(|r| SweepPoint {
                point: r.label.as_deref().unwrap_or(""),
                summary: &r.summary,
            })
            .collect();
        write_json(&dir.join("sweep.json"), &points)?;
        println!("{}", serde_json::to_string_pretty(&points)?);
    } else {
        println!("{}", serde_json::to_string_pretty(&results[0].summary)?);
    }
    eprintln!("wrote {}", dir.display());
    Ok(EXIT_OK)
}

#[derive(Serialize, serde::Deserialize, Debug, Clone, PartialEq)]
pub struct DemoRow {
    pub seed: u64,
    pub baseline_keys_match: bool,
    pub baseline_eve_key_match: bool,
    pub improved_auth_verdict: String,
    pub improved_r_final: usize,
    pub improved_eve_key_match: bool,
    pub as_expected: bool,
}

fn cmd_attack_demo(common: &Common, trials: usize) -> anyhow::Result<i32> {
    let cfg = common.session_config()?;
    if trials == 0 {
        return Err(ConfigErrors::from(ConfigError::new("trials", "must be >= 1")).into());
    }
    let pairs: Vec<demo::DemoPair> = (0..trials)
        .into_par_iter()
        .map(|i| {
            demo::attack_demo(&SessionConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..cfg.clone()
            })
        })
        .collect::<Result<_, _>>()?;
    let id = common
        .id
        .clone()
        .unwrap_or_else(|| path_safe(&format!("attack-demo-seed{}-trials{trials}", cfg.seed)));
    let dir = common.out.join(id);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("demo.json"), &pairs[0])?;
    let mut w = csv::Writer::from_path(dir.join("demo.csv"))?;
    for p in &pairs {
        w.serialize(DemoRow {
            seed: p.seed,
            baseline_keys_match: p.baseline.keys_match,
            baseline_eve_key_match: p.baseline.eve_key_match,
            improved_auth_verdict: p.improved.auth_verdict.to_string(),
            improved_r_final: p.improved.r_final,
            improved_eve_key_match: p.improved.eve_key_match,
            as_expected: p.as_expected(),
        })?;
    }
    w.flush()?;

    print!("{}", demo::render(&pairs[0]));
    if trials > 1 {
        let expected = pairs.iter().filter(|p| p.as_expected()).count();
        let accepted = pairs
            .iter()
            .filter(|p| p.improved.auth_verdict == Verdict::Accept)
            .count();
        println!("expected pair in {expected}/{trials} seeds; auth-before-pa accepted Eve in {accepted}/{trials}");
    }
    eprintln!("wrote {}", dir.display());
    Ok(EXIT_OK)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(common) => cmd_run(common),
        Command::Montecarlo { common, trials, sweep } => cmd_montecarlo(common, *trials, sweep.as_deref()),
        Command::AttackDemo { common, trials } => cmd_attack_demo(common, *trials),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_CONFIG
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_cover_every_field() {
        let cli = Cli::try_parse_from(["qkdsim", "run", "--n_photons", "100", "--block_size", "auto", "--seed", "3"]).unwrap();
        let Command::Run(common) = cli.command else { panic!() };
        assert_eq!(common.fields.pairs(), [("n_photons", "100"), ("block_size", "auto"), ("seed", "3")]);
        for field in config::FIELDS {
            let flag = format!("--{field}");
            assert!(Cli::try_parse_from(["qkdsim", "run", flag.as_str(), "1"]).is_ok(), "{field}");
        }
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["qkdsim", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(run(["qkdsim", "run", "--tag_len"]), EXIT_CONFIG);
        assert_eq!(run(["qkdsim", "--help"]), EXIT_OK);
    }

    #[test]
    fn path_safe_keeps_ids_readable() {
        assert_eq!(path_safe("run-baseline-intercept:0.5-seed1"), "run-baseline-intercept_0.5-seed1");
    }
}
