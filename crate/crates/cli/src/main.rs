use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dmimo_isac::estimator::{detect_targets, PreparedEchoes, SensingModel};
use dmimo_isac::harness::config::SelectionConfig;
use dmimo_isac::harness::io::{save_echoes, load_echoes, write_cost_map, write_coverage_csv, write_sweep_csv};
use dmimo_isac::harness::{
    estimate, prepare_trial, run_trial, sweep, trial_coverage_map, trial_echoes, Axis, Metric, ScenarioConfig, SweepSpec,
};
use dmimo_isac::validate;

#[derive(Parser, Debug)]
#[command(name = "dmimo-isac", version, about = "Distributed-MIMO sensing and communication simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario TOML; the 12-AP reference deployment when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for multi-trial commands (all cores when omitted).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One full trial: record, timings, echoes and cost map.
    Simulate {
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Non-coherent cost map raster of one trial.
    Scan {
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Scan these echoes instead of synthesizing them.
        #[arg(long)]
        echoes: Option<PathBuf>,
    },
    /// Runs the estimator on a stored echo set. The geometry comes from the
    /// configuration and trial index the echoes were generated with.
    Estimate {
        #[arg(long)]
        echoes: PathBuf,
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Prints the transmit/receive assignment of one deployment.
    Select {
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[arg(long, value_enum)]
        strategy: Option<Strategy>,
    },
    /// PEB coverage map of one deployment.
    Coverage {
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Probe points; the configured count when omitted.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Sweeps one axis and writes a summary table.
    Sweep {
        /// One of m_r, rho, p_t_dbm, n.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Trials per value; the configured count when omitted.
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated: sum_se, peb_coherent, peb_noncoherent, coverage,
        /// position_error, detections.
        #[arg(long, value_delimiter = ',', default_value = "sum_se,peb_coherent,peb_noncoherent")]
        metrics: Vec<String>,
        /// Run the sweep once per strategy instead of the configured one.
        #[arg(long, value_enum, value_delimiter = ',')]
        strategies: Vec<Strategy>,
        #[arg(long, default_value = "sweep.csv")]
        file: String,
    },
    /// Oracle and invariant suite on small random instances.
    Validate,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Strategy {
    CommCentric,
    SensingCentric,
}

impl Strategy {
    fn selection(self) -> SelectionConfig {
        match self {
            Strategy::CommCentric => SelectionConfig::CommCentric { effective_noise: None },
            Strategy::SensingCentric => SelectionConfig::SensingCentric,
        }
    }
}

fn load_config(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn workers(common: &Common) -> usize {
    common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let common = &cli.common;
    let out = &common.out;
    if !matches!(cli.command, Command::Validate | Command::Select { .. }) {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    match cli.command {
        Command::Simulate { trial } => {
            let cfg = load_config(common)?;
            let result = run_trial(&cfg, trial)?;
            write_text(out, "config.toml", &cfg.to_toml()?)?;
            write_text(out, "record.json", &result.record.to_json()?)?;
            write_text(out, "timings.json", &serde_json::to_string_pretty(&result.timings)?)?;
            save_echoes(&out.join("echoes.dmec"), &result.echoes)?;
            let mut w = create(out, "cost_map.txt")?;
            write_cost_map(&mut w, &result.cost_map)?;
            w.flush()?;
            let r = &result.record;
            println!("trial {trial}: {} detections, sum SE {:.3} bit/s/Hz", r.detections, r.se.sum_se);
            for (s, err) in r.estimation.position_errors.iter().enumerate() {
                let err = err.map_or_else(|| "missed".to_string(), |e| format!("{e:.3e} m"));
                println!(
                    "  target {s}: error {err}, coherent PEB {:.3e} m, non-coherent PEB {:.3e} m",
                    r.peb_coherent[s], r.peb_noncoherent[s]
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Scan { trial, echoes } => {
            let cfg = load_config(common)?;
            let prepared = prepare_trial(&cfg, trial)?;
            let echoes = match echoes {
                Some(path) => load_echoes(&path)?,
                None => trial_echoes(&cfg, trial, &prepared)?,
            };
            let model = SensingModel::new(&prepared.scenario, &prepared.frame)?;
            let (map, confirmation) = detect_targets(
                &model,
                &PreparedEchoes::new(&echoes),
                &prepared.scenario.region,
                &cfg.grid,
                &cfg.cfar,
                &cfg.confirm,
            );
            let mut w = create(out, "cost_map.txt")?;
            write_cost_map(&mut w, &map)?;
            w.flush()?;
            println!(
                "{}×{} map, {} CFAR peaks, {} confirmed",
                map.nx,
                map.ny,
                map.detections.len(),
                confirmation.detections.len()
            );
            for d in &confirmation.detections {
                println!("  ({:.1}, {:.1})", d.position.x, d.position.y);
            }
        }
        Command::Estimate { echoes, trial } => {
            let cfg = load_config(common)?;
            let prepared = prepare_trial(&cfg, trial)?;
            let echoes = load_echoes(&echoes).with_context(|| format!("reading {}", echoes.display()))?;
            let receivers = prepared.scenario.receivers().len();
            if echoes.num_receivers() != receivers || echoes.length() != cfg.frame_length {
                bail!(
                    "echo set is {}×{} (receivers × instants) but the configuration gives {}×{}",
                    echoes.num_receivers(),
                    echoes.length(),
                    receivers,
                    cfg.frame_length
                );
            }
            let est = estimate(&cfg, &prepared, &echoes)?;
            write_text(out, "estimate.json", &serde_json::to_string_pretty(&est.report)?)?;
            let mut w = create(out, "cost_map.txt")?;
            write_cost_map(&mut w, &est.cost_map)?;
            w.flush()?;
            for p in &est.report.refined_positions {
                println!("({:.6}, {:.6})", p.x, p.y);
            }
        }
        Command::Select { trial, strategy } => {
            let mut cfg = load_config(common)?;
            if let Some(s) = strategy {
                cfg.selection = s.selection();
            }
            let prepared = prepare_trial(&cfg, trial)?;
            println!("{}", serde_json::to_string_pretty(&prepared.assignment)?);
        }
        Command::Coverage { trial, samples } => {
            let mut cfg = load_config(common)?;
            if let Some(n) = samples {
                cfg.coverage.samples = n;
            }
            let prepared = prepare_trial(&cfg, trial)?;
            let map = trial_coverage_map(&cfg, trial, &prepared)?;
            let mut w = create(out, "coverage.csv")?;
            write_coverage_csv(&mut w, &map)?;
            w.flush()?;
            println!(
                "f_SC = {:.4} at threshold {:.3e} m over {} points",
                map.coverage,
                map.threshold,
                map.points.len()
            );
        }
        Command::Sweep {
            axis,
            values,
            trials,
            metrics,
            strategies,
            file,
        } => {
            let cfg = load_config(common)?;
            let spec = SweepSpec {
                axis: Axis::parse(&axis)?,
                values,
                trials: trials.unwrap_or(cfg.trials),
                metrics: metrics.iter().map(|m| Metric::parse(m)).collect::<Result<_, _>>()?,
            };
            let configs: Vec<ScenarioConfig> = if strategies.is_empty() {
                vec![cfg]
            } else {
                strategies
                    .iter()
                    .map(|s| ScenarioConfig {
                        selection: s.selection(),
                        ..cfg.clone()
                    })
                    .collect()
            };
            let mut w = create(out, &file)?;
            for (i, c) in configs.iter().enumerate() {
                let rows = sweep(c, &spec, workers(common))?;
                write_sweep_csv(&mut w, &rows, i == 0)?;
                for r in &rows {
                    println!(
                        "{}={} {} {}: mean {:.4e} [{:.4e}, {:.4e}] (n={})",
                        r.axis, r.value, r.selection, r.metric, r.mean, r.ci_low, r.ci_high, r.n
                    );
                }
            }
            w.flush()?;
        }
        Command::Validate => {
            let outcomes = validate::run_all()?;
            for o in &outcomes {
                println!("{o}");
            }
            return Ok(outcomes.iter().all(|o| o.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
