use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ftipc_core::harness::{run_matched, run_simulation, ComparisonReport, Mode, RunConfig, TimeSeries};
use ftipc_core::numerics::psd_estimate;
use ftipc_core::supervisor::{bank_keys, offline_tune};
use ftipc_core::{LoadCaseId, PretunedBank, NUM_BLADES};

/// Fault-tolerant individual pitch control simulator.
#[derive(Parser)]
#[command(name = "ftipc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune the pretuned bank offline, one entry per stuck blade.
    Tune(TuneArgs),
    /// Run a single simulation and write its series and report.
    Run(RunArgs),
    /// Matched baseline / controller-only / proposed runs over several seeds.
    Compare(CompareArgs),
    /// Power spectral density of the blade loads in a recorded series.
    Psd(PsdArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults are used for absent keys.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    load_case: Option<LoadCaseId>,
    /// Directory holding bank files.
    #[arg(long)]
    bank_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(lc) = self.load_case {
            cfg.load_case = lc;
        }
        if let Some(dir) = &self.bank_dir {
            cfg.tune.bank_dir = dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    common: Common,
    /// Stuck blade to tune for (1-based); all blades when omitted.
    #[arg(long)]
    blade: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV time series output.
    #[arg(long)]
    series: Option<PathBuf>,
    /// JSON report output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Seeds `first..first+seeds`.
    #[arg(long, default_value_t = 1)]
    first_seed: u64,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Tune missing bank entries instead of failing.
    #[arg(long)]
    tune_missing: bool,
    /// JSON report output (array of per-seed comparisons).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PsdArgs {
    /// Series written by `run`.
    series: PathBuf,
    /// Welch segment length in rotor periods.
    #[arg(long, default_value_t = 4)]
    segment_periods: usize,
    /// Analyse only the last `window` seconds.
    #[arg(long)]
    window: Option<f64>,
    /// Spectrum CSV (`freq_hz,psd1,psd2,psd3`); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Tune(a) => tune(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::Psd(a) => psd(a),
    }
}

fn tune_blade(cfg: &RunConfig, blade: usize) -> Result<()> {
    let entry = offline_tune(cfg, blade).with_context(|| format!("tuning for stuck blade {blade}"))?;
    let path = entry.save(&cfg.tune.bank_dir)?;
    println!(
        "blade {blade}  {}  stuck {:.2}°  settled after {} periods (increment {:.2e})  -> {}",
        entry.load_case,
        entry.stuck_angle,
        entry.converged_period,
        entry.final_increment,
        path.display()
    );
    Ok(())
}

fn tune(a: TuneArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    std::fs::create_dir_all(&cfg.tune.bank_dir)?;
    match a.blade {
        Some(b) if !(1..=NUM_BLADES).contains(&b) => bail!("blade must lie in 1..={NUM_BLADES}"),
        Some(b) => tune_blade(&cfg, b),
        None => (1..=NUM_BLADES).try_for_each(|b| tune_blade(&cfg, b)),
    }
}

fn load_bank(cfg: &RunConfig, tune_missing: bool) -> Result<PretunedBank> {
    let mut bank = PretunedBank::for_config(cfg)?;
    let Some(fault) = cfg.resolved_fault() else {
        return Ok(bank);
    };
    if bank.get(fault.blade).is_none() {
        if !tune_missing {
            let hash = bank_keys(cfg).into_iter().find(|(b, _)| *b == fault.blade).map(|(_, h)| h).unwrap_or_default();
            bail!(
                "no bank entry for blade {} ({}, config {hash}) in {}; run `ftipc tune` first",
                fault.blade,
                cfg.load_case,
                cfg.tune.bank_dir.display()
            );
        }
        std::fs::create_dir_all(&cfg.tune.bank_dir)?;
        tune_blade(cfg, fault.blade)?;
        bank = PretunedBank::for_config(cfg)?;
    }
    Ok(bank)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if cfg.mode == Mode::OfflineTune {
        bail!("use `ftipc tune` for offline tuning");
    }
    let bank = if cfg.mode == Mode::Proposed {
        let bank = PretunedBank::for_config(&cfg)?;
        if bank.is_empty() {
            log::warn!("bank in {} has no entry for this configuration; faults will not switch", cfg.tune.bank_dir.display());
        }
        Some(Arc::new(bank))
    } else {
        None
    };
    let (series, report) = run_simulation(&cfg, bank)?;
    if let Some(path) = a.series.or(cfg.output.series.clone()) {
        series.save(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = a.report.or(cfg.output.report.clone()) {
        write_text(&path, &report.to_json()?)?;
    }
    println!("{report}");
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    if cfg.fault.is_none() {
        bail!("comparison needs a fault in the configuration");
    }
    let bank = Arc::new(load_bank(&cfg, a.tune_missing)?);
    let mut reports: Vec<ComparisonReport> = Vec::new();
    for seed in a.first_seed..a.first_seed + a.seeds {
        let runs = run_matched(&RunConfig { seed, ..cfg.clone() }, bank.clone())?;
        println!("{}", runs.comparison);
        reports.push(runs.comparison);
    }
    print_summary(&reports);
    if let Some(path) = a.report.or(cfg.output.report.clone()) {
        write_text(&path, &serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(())
}

fn print_summary(reports: &[ComparisonReport]) {
    let n = reports.len() as f64;
    let avg = |f: &dyn Fn(&ComparisonReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let conv = |c: Option<usize>| c.map_or(f64::NAN, |v| v as f64);
    println!("summary over {} seeds", reports.len());
    println!("mode        cumulative %   PSD 1P ratio   convergence [per]");
    println!(
        "sprc_only   {:>12.1}   {:>12.4}   {:>17.1}",
        avg(&|r| r.sprc_only_reduction.cumulative),
        avg(&|r| r.sprc_only_psd_ratio),
        avg(&|r| conv(r.sprc_only_convergence))
    );
    println!(
        "proposed    {:>12.1}   {:>12.4}   {:>17.1}",
        avg(&|r| r.proposed_reduction.cumulative),
        avg(&|r| r.proposed_psd_ratio),
        avg(&|r| conv(r.proposed_convergence))
    );
}

fn psd(a: PsdArgs) -> Result<()> {
    let series = TimeSeries::load_file(&a.series).with_context(|| format!("reading {}", a.series.display()))?;
    let meta = &series.meta;
    let n = series.len();
    let start = match a.window {
        Some(w) => n.saturating_sub((w / meta.ts).round() as usize),
        None => 0,
    };
    let seg = a.segment_periods * meta.period;
    let fs = 1.0 / meta.ts;
    let spectra = (0..NUM_BLADES).map(|l| psd_estimate(&series.load(l, start..n), fs, seg)).collect::<Result<Vec<_>, _>>()?;
    let f1p = 1.0 / (meta.period as f64 * meta.ts);
    for (l, s) in spectra.iter().enumerate() {
        eprintln!("blade {}  1P ({f1p:.4} Hz) {:.4e}  peak at {:.4} Hz", l + 1, s.value_at(f1p), s.peak_frequency());
    }
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "freq_hz,psd1,psd2,psd3")?;
    for i in 0..spectra[0].freqs.len() {
        writeln!(out, "{},{},{},{}", spectra[0].freqs[i], spectra[0].power[i], spectra[1].power[i], spectra[2].power[i])?;
    }
    out.flush()?;
    Ok(())
}
