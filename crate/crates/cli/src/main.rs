//! Command-line driver: figure data, single runs and simulation sweeps.

mod meta;
mod plan;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adhoc_csi::linkcalc::{
    avg_imperfect_throughput, fixed_rate_throughput, ideal_adaptive_throughput, CurveRow,
};
use adhoc_csi::mac::{cts_delay, rts_csi_age};
use adhoc_csi::predictor::{analytic_mse, outdated_mse};
use adhoc_csi::sim::{self, RunMetrics, TRACE_HEADER};
use adhoc_csi::{CsiQuality, CsiScheme, MacTiming, Metric, PredictorConfig, RateClass, ScenarioConfig};
use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use plan::{write_outputs, ExperimentPlan, FigureTag};

#[derive(Parser)]
#[command(name = "adhoc-csi", version, about = "Rate and relay adaptation: analysis curves and network simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed-rate and ideal adaptive throughput against average SNR.
    Fig2(Fig2Args),
    /// Optimal and suboptimal throughput against CSI error at one SNR.
    Fig3(Fig3Args),
    /// Prediction error of both CSI schemes against Doppler.
    Fig5(Fig5Args),
    /// The (v_max, L, scheme) network sweep.
    Fig6(SweepArgs),
    /// One simulation run.
    Run(RunArgs),
    /// A custom sweep plan.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Fig2Args {
    #[arg(long, default_value_t = 0.0)]
    snr_min_db: f64,
    #[arg(long, default_value_t = 30.0)]
    snr_max_db: f64,
    #[arg(long, default_value_t = 0.5)]
    snr_step_db: f64,
    /// Relays for the adaptive curve.
    #[arg(long = "L", default_value_t = 1)]
    l: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Fig3Args {
    #[arg(long, default_value_t = 15.0)]
    avg_snr_db: f64,
    /// NMSE grid, each in [0, 1).
    #[arg(long, value_delimiter = ',', default_values_t = default_nmse_grid())]
    nmse: Vec<f64>,
    #[arg(long = "L", default_value_t = 1)]
    l: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Fig5Args {
    /// Doppler grid in Hz.
    #[arg(long, value_delimiter = ',', default_values_t = default_fd_grid())]
    fd: Vec<f64>,
    #[arg(long = "L", default_value_t = 4)]
    l: usize,
    #[arg(long, default_value_t = 30.0)]
    pilot_snr_db: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Start from the 50-node, 500 m, 1000 s scenario.
    #[arg(long)]
    full: bool,
    /// Flat `key = value` scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one scenario key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write the MAC event trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_delimiter = ',')]
    vmax: Option<Vec<f64>>,
    #[arg(long = "L", value_delimiter = ',')]
    l: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<CsiScheme>>,
    /// Seeds 1..=N.
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

fn default_nmse_grid() -> Vec<f64> {
    vec![
        1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99,
    ]
}

fn default_fd_grid() -> Vec<f64> {
    vec![10.0, 25.0, 50.0, 75.0, 100.0, 150.0, 200.0, 250.0, 300.0]
}

/// Errors the user can fix by changing the invocation.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// A sweep that finished with some runs missing.
#[derive(Debug)]
struct Partial(usize);

impl std::fmt::Display for Partial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} run(s) failed", self.0)
    }
}

impl std::error::Error for Partial {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fig2(a) => fig2(a),
        Command::Fig3(a) => fig3(a),
        Command::Fig5(a) => fig5(a),
        Command::Fig6(a) => sweep(a, FigureTag::Fig6),
        Command::Run(a) => run_one(a),
        Command::Sweep(a) => sweep(a, FigureTag::Custom),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) if e.is::<Partial>() => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn snr_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(min.is_finite() && max.is_finite() && step > 0.0) || min > max {
        return Err(usage(format!(
            "empty SNR range: need min <= max and step > 0 (got {min}..{max} step {step})"
        )));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| min + k as f64 * step).collect())
}

fn fig2(a: Fig2Args) -> Result<()> {
    let grid = snr_grid(a.snr_min_db, a.snr_max_db, a.snr_step_db)?;
    if a.l == 0 {
        return Err(usage("L must be at least 1"));
    }
    let n_bits = ScenarioConfig::desk().n_bits();
    let rows: Vec<Vec<CurveRow>> = grid
        .par_iter()
        .map(|&db| -> Result<Vec<CurveRow>> {
            let avg = 10f64.powf(db / 10.0);
            let mut rows = Vec::with_capacity(5);
            for r in RateClass::ALL {
                rows.push(CurveRow::from_result(db, 1, 0.0, &fixed_rate_throughput(r, avg, n_bits)?));
            }
            rows.push(CurveRow::from_result(db, a.l, 0.0, &ideal_adaptive_throughput(avg, a.l, n_bits)?));
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let params = format!("fig2 snr={}..{} step={} L={} n_bits={n_bits}", a.snr_min_db, a.snr_max_db, a.snr_step_db, a.l);
    let mut text = meta::header("fig2", &params, &[], &[("tag", FigureTag::Fig2.to_string())]);
    text.push_str(CurveRow::HEADER);
    text.push('\n');
    for r in rows.iter().flatten() {
        text.push_str(&r.csv());
        text.push('\n');
    }
    emit(a.out.as_deref(), &text)
}

fn fig3(a: Fig3Args) -> Result<()> {
    if a.nmse.is_empty() || a.nmse.iter().any(|x| !(0.0..1.0).contains(x)) {
        return Err(usage("every nmse value must lie in [0, 1)"));
    }
    if a.l == 0 {
        return Err(usage("L must be at least 1"));
    }
    let n_bits = ScenarioConfig::desk().n_bits();
    let avg = 10f64.powf(a.avg_snr_db / 10.0);
    let metrics = [Metric::Optimal, Metric::Suboptimal, Metric::SuboptimalRealized];
    let jobs: Vec<(f64, Metric)> = a.nmse.iter().flat_map(|&e| metrics.map(|m| (e, m))).collect();
    let rows: Vec<CurveRow> = jobs
        .par_iter()
        .map(|&(nmse, m)| -> Result<CurveRow> {
            let q = CsiQuality::from_nmse(nmse)?;
            Ok(CurveRow::from_result(a.avg_snr_db, a.l, nmse, &avg_imperfect_throughput(avg, a.l, q, m, n_bits)?))
        })
        .collect::<Result<_>>()?;
    let params = format!("fig3 snr={} L={} nmse={:?} n_bits={n_bits}", a.avg_snr_db, a.l, a.nmse);
    let mut text = meta::header("fig3", &params, &[], &[("tag", FigureTag::Fig3.to_string())]);
    text.push_str(CurveRow::HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    emit(a.out.as_deref(), &text)
}

fn fig5(a: Fig5Args) -> Result<()> {
    if a.fd.is_empty() || a.fd.iter().any(|f| !(*f > 0.0)) {
        return Err(usage("every Doppler value must be positive"));
    }
    if a.l == 0 {
        return Err(usage("L must be at least 1"));
    }
    let t = MacTiming::default();
    let age = rts_csi_age(a.l, &t);
    let base = PredictorConfig {
        pilot_snr_db: a.pilot_snr_db,
        ..PredictorConfig::default()
    };
    let mut text = meta::header(
        "fig5",
        &format!("fig5 fd={:?} L={} pilot_snr_db={}", a.fd, a.l, a.pilot_snr_db),
        &[],
        &[("tag", FigureTag::Fig5.to_string())],
    );
    text.push_str("fd_hz,scheme,relay,tau_s,nmse\n");
    for &fd in &a.fd {
        text.push_str(&format!("{fd},RTS_CSI,0,{age:.6e},{:.9e}\n", outdated_mse(fd, age)));
        for l in 1..=a.l {
            let tau = cts_delay(a.l, l, &t)?;
            let mse = analytic_mse(fd, &base.with_horizon(tau))?;
            text.push_str(&format!("{fd},CTS_CSI,{l},{tau:.6e},{mse:.9e}\n"));
        }
    }
    emit(a.out.as_deref(), &text)
}

fn scenario(s: &ScenarioArgs) -> Result<ScenarioConfig> {
    let mut c = if s.full { ScenarioConfig::full() } else { ScenarioConfig::desk() };
    if let Some(path) = &s.config {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        c.apply_text(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    for kv in &s.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        c.apply_text(&format!("{} = {}", k.trim(), v.trim()))
            .map_err(|e| usage(format!("--set {kv}: {e}")))?;
    }
    Ok(c)
}

fn run_one(a: RunArgs) -> Result<()> {
    let mut cfg = scenario(&a.scenario)?;
    cfg.trace = a.trace.is_some();
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let out = sim::run(&cfg).map_err(|e| anyhow!(e))?;
    let mut canon = cfg.clone();
    canon.trace = false;
    let header = meta::header("run", &canon.to_text(), &[cfg.seed], &[]);
    if let Some(path) = &a.trace {
        let mut t = format!("{header}{TRACE_HEADER}\n");
        for line in &out.trace {
            t.push_str(line);
            t.push('\n');
        }
        fs::write(path, t).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let text = format!("{header}{}\n{}\n", RunMetrics::CSV_HEADER, out.metrics.csv_row());
    emit(a.out.as_deref(), &text)
}

fn sweep(a: SweepArgs, tag: FigureTag) -> Result<()> {
    let base = scenario(&a.scenario)?;
    let (dv, dl, ds) = match tag {
        FigureTag::Fig6 => (vec![1.0, 5.0, 10.0, 15.0, 20.0], vec![3, 4], CsiScheme::ALL.to_vec()),
        _ => (vec![base.v_max], vec![base.l], vec![base.csi_scheme]),
    };
    let seeds = match (a.seeds, a.seed_list) {
        (_, Some(list)) => list,
        (Some(n), None) => (1..=n).collect(),
        (None, None) => (1..=10).collect(),
    };
    let plan = ExperimentPlan {
        tag,
        v_max: a.vmax.unwrap_or(dv),
        l: a.l.unwrap_or(dl),
        schemes: a.schemes.unwrap_or(ds),
        seeds,
        out_dir: a.out_dir,
        base,
    };
    plan.validate().map_err(|e| usage(format!("{e:#}")))?;
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcome = plan.execute(jobs)?;
    let header = meta::header(
        &tag.to_string().to_lowercase(),
        &plan.canonical_text(),
        &plan.seeds,
        &[("tag", tag.to_string())],
    );
    let (runs, agg) = write_outputs(&plan, &outcome, &header)?;
    eprintln!("wrote {} and {}", runs.display(), agg.display());
    for (cell, seed, why) in &outcome.failures {
        eprintln!(
            "failed: vmax={} L={} scheme={} seed={seed}: {why}",
            cell.v_max, cell.l, cell.scheme
        );
    }
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(Partial(outcome.failures.len()).into())
    }
}
