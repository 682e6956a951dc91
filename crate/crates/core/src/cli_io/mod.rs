//! Command-line driver, ingestion, configuration files and on-disk artifacts.
//!
//! Directory layout shared by the commands:
//! - a data directory holds `data.{bin,json}`, `covariates.{bin,json}` and,
//!   for simulated data, `truth.{bin,json}` and `events.csv`;
//! - a fit directory holds `trace.{bin,json}` (or `trace_seed<S>.*` per
//!   chain when several seeds are configured);
//! - every command writes the resolved configuration to `config.txt` next
//!   to its outputs and echoes it on stdout.

pub mod config;
pub mod ingest;
pub mod report;
pub mod store;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Months, NaiveDate};
use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::evaluate::{per_draw_auc, summarize};
use crate::experiments::{run_experiment, sensitivity_grid, ExperimentSpec, GridAxis};
use crate::model::{CovariateSet, NetworkSeries};
use crate::sampler::{run_chain, HyperConfig};
use crate::simulate::{holdout, simulate};

use config::RunConfig;
use report::Labels;
use store::StoredTrace;

#[derive(Debug, Parser)]
#[command(name = "dlsn", version, about = "Dynamic directed latent space network model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `dgp.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Bin an event log (and optional node covariates) into a data directory.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        covariates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Gibbs sampler on a data directory.
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `seed`/`seeds` with a single chain.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Posterior probabilities of the held-out cells.
    Predict {
        /// Trace stem, e.g. `fit/trace`.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the CSV report tables for a trace.
    Summarize {
        #[arg(long)]
        trace: PathBuf,
        /// Full data directory; enables the AUC columns.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        ess_cells: usize,
        /// Also report per-draw AUCs.
        #[arg(long)]
        per_draw: bool,
    },
    /// Run a named experiment, or a sensitivity grid over one axis.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `h_star=2,5,10`, `rho=...`, `k=...` or `size=30x20,...`.
        #[arg(long)]
        grid: Option<String>,
    },
}

/// Files written by the current command; removed again unless kept.
struct Outputs {
    files: Vec<PathBuf>,
    keep: bool,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            files: Vec::new(),
            keep: false,
        })
    }

    /// Registers an artifact stem before writing it.
    fn stem(&mut self, stem: PathBuf) -> PathBuf {
        self.files.push(store::bin_path(&stem));
        self.files.push(store::json_path(&stem));
        stem
    }

    fn file(&mut self, path: PathBuf) -> PathBuf {
        self.files.push(path.clone());
        path
    }

    fn text(&mut self, path: PathBuf, body: &str) -> Result<()> {
        let path = self.file(path);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.keep {
            for f in &self.files {
                let _ = std::fs::remove_file(f);
            }
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn echo(cfg: &RunConfig) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "# resolved configuration");
    let _ = write!(out, "{}", cfg.to_text());
}

fn load_data(dir: &Path) -> Result<(NetworkSeries, Vec<String>, CovariateSet)> {
    let (data, bins) = store::read_series(&dir.join("data"))?;
    let cov = store::read_covariates(&dir.join("covariates"))?;
    Ok((data, bins, cov))
}

/// Synthetic series as an event log: one event per edge on the first day
/// of its quarter, quarters counted from 2000-01-01.
fn write_events_csv(path: &Path, data: &NetworkSeries) -> Result<()> {
    let base = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let labels = data.node_labels();
    let mut rec = |r: [&str; 3]| w.write_record(r).map_err(|e| Error::data(format!("{}: {e}", path.display())));
    rec(["source", "target", "date"])?;
    for t in 0..data.num_times() {
        let date = base + Months::new(3 * t as u32);
        let date = format!("{:04}-{:02}-{:02}", date.year(), date.month(), date.day());
        for i in 0..data.num_nodes() {
            for j in 0..data.num_nodes() {
                if data.get(i, j, t) == Some(1) {
                    rec([&labels[i], &labels[j], &date])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn synthetic_bins(n: usize) -> Vec<String> {
    (0..n).map(|t| format!("{}Q{}", 2000 + t / 4, t % 4 + 1)).collect()
}

fn cmd_simulate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.dgp.seed = s;
    }
    cfg.dgp.validate()?;
    echo(&cfg);
    let (data, cov, truth) = simulate(&cfg.dgp)?;
    let mut o = Outputs::new(out)?;
    let bins = synthetic_bins(data.num_times());
    store::write_series(&o.stem(out.join("data")), &data, &bins)?;
    store::write_covariates(&o.stem(out.join("covariates")), &cov)?;
    store::write_truth(&o.stem(out.join("truth")), &truth.pi, &truth.predictor, &cfg.dgp)?;
    write_events_csv(&o.file(out.join("events.csv")), &data)?;
    o.text(out.join("config.txt"), &cfg.to_text())?;
    println!(
        "simulated {} nodes x {} times, density {:.4}, seed {}",
        data.num_nodes(),
        data.num_times(),
        data.raw_values().iter().map(|&y| y as f64).sum::<f64>()
            / (data.num_nodes() * (data.num_nodes() - 1) * data.num_times()) as f64,
        cfg.dgp.seed
    );
    o.keep = true;
    Ok(())
}

fn cmd_ingest(config: &Path, events: &Path, covariates: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config)?;
    let spec = cfg
        .window
        .clone()
        .ok_or_else(|| Error::config("ingest needs window.start, window.end and window.nodes"))?;
    echo(&cfg);
    let (mut data, rep) = ingest::ingest_events(events, &spec)?;
    let mut bins = spec.bin_labels();
    let cov = match covariates {
        Some(path) => {
            let cov = ingest::ingest_covariates(path, &spec, cfg.lag)?;
            data = data.drop_leading(cfg.lag)?;
            bins.drain(..cfg.lag);
            cov
        }
        None => CovariateSet::empty(data.num_nodes(), data.num_times()),
    };
    let mut o = Outputs::new(out)?;
    store::write_series(&o.stem(out.join("data")), &data, &bins)?;
    store::write_covariates(&o.stem(out.join("covariates")), &cov)?;
    o.text(out.join("config.txt"), &cfg.to_text())?;
    println!(
        "read {} rows: kept {}, self-loops {}, outside whitelist {}, outside window {}; {} bins",
        rep.rows,
        rep.kept,
        rep.self_loops,
        rep.outside_whitelist,
        rep.outside_window,
        data.num_times()
    );
    o.keep = true;
    Ok(())
}

fn cmd_fit(config: Option<&Path>, data_dir: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.hyper.seed = s;
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    echo(&cfg);
    let (data, _bins, cov) = load_data(data_dir)?;
    let held = holdout(&data, cfg.holdout)?;
    let configs: Vec<HyperConfig> = cfg
        .seeds
        .iter()
        .map(|&s| HyperConfig {
            seed: s,
            ..cfg.hyper.clone()
        })
        .collect();
    let runs: Vec<Result<_>> = std::thread::scope(|sc| {
        let handles: Vec<_> = configs
            .iter()
            .map(|hc| {
                let (d, c) = (&held.data, &cov);
                sc.spawn(move || run_chain(d, c, hc))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::numerical("chain thread panicked"))))
            .collect()
    });
    let mut o = Outputs::new(out)?;
    for (hc, run) in configs.iter().zip(runs) {
        let run = run?;
        let stem = if configs.len() == 1 {
            out.join("trace")
        } else {
            out.join(format!("trace_seed{}", hc.seed))
        };
        let stored = StoredTrace {
            trace: run.trace,
            hidden: held.hidden.clone(),
            holdout: cfg.holdout.to_string(),
        };
        store::write_trace(&o.stem(stem), &stored)?;
        println!("seed {}: {} draws", hc.seed, stored.trace.draws);
    }
    o.text(out.join("config.txt"), &cfg.to_text())?;
    o.keep = true;
    Ok(())
}

fn cmd_predict(trace: &Path, data_dir: &Path, out: &Path) -> Result<()> {
    let stored = store::read_trace(trace)?;
    println!("# trace {} (seed {}, holdout {})", trace.display(), stored.trace.meta.config.seed, stored.holdout);
    let (data, bins, _) = load_data(data_dir)?;
    let labels = Labels::from_trace(&stored.trace, &bins);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut o = Outputs {
        files: Vec::new(),
        keep: false,
    };
    report::write_predictions(&o.file(out.to_path_buf()), &stored.trace, &data, &stored.hidden, &labels)?;
    o.keep = true;
    Ok(())
}

fn cmd_summarize(trace: &Path, data_dir: Option<&Path>, out: &Path, ess_cells: usize, per_draw: bool) -> Result<()> {
    if ess_cells == 0 {
        return Err(Error::config("--ess-cells must be positive"));
    }
    let stored = store::read_trace(trace)?;
    println!("# trace {} (seed {}, holdout {})", trace.display(), stored.trace.meta.config.seed, stored.holdout);
    let loaded = data_dir.map(load_data).transpose()?;
    let scoring = loaded.as_ref().map(|(d, _, _)| (d, stored.hidden.as_slice()));
    let summary = summarize(&stored.trace, scoring, ess_cells)?;
    let pd = match (per_draw, scoring) {
        (true, Some((d, h))) => Some(per_draw_auc(&stored.trace, d, h)?),
        _ => None,
    };
    let bins = loaded.as_ref().map(|(_, b, _)| b.clone()).unwrap_or_default();
    let labels = Labels::from_trace(&stored.trace, &bins);
    let mut o = Outputs::new(out)?;
    for name in ["summary", "tau", "trajectories", "ab", "pi", "reciprocity", "ess"] {
        o.file(out.join(format!("{name}.csv")));
    }
    report::write_summary(out, &summary, &labels, pd)?;
    if let Some(f) = summary.fit_auc {
        print!("fit_auc {f:.4}");
        if let Some(p) = summary.pred_auc {
            print!("  pred_auc {p:.4}");
        }
        println!();
    }
    o.keep = true;
    Ok(())
}

fn cmd_experiment(config: &Path, out: &Path, grid: Option<&str>) -> Result<bool> {
    let cfg = RunConfig::from_file(config)?;
    let spec = ExperimentSpec::from_config(&cfg);
    echo(&cfg);
    let mut o = Outputs::new(out)?;
    let ok = match grid {
        Some(g) => {
            let axis: GridAxis = g.parse()?;
            let table = sensitivity_grid(&spec, &axis)?;
            print!("{table}");
            let path = o.file(out.join("grid.csv"));
            let mut body = format!("{},fit_auc,pred_auc,error\n", table.axis);
            let cell = |x: Option<f64>| x.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into());
            for r in &table.rows {
                let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
                body.push_str(&format!("{},{},{},{err}\n", r.value, cell(r.fit_auc), cell(r.pred_auc)));
            }
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            table.rows.iter().all(|r| r.error.is_none())
        }
        None => {
            let rep = run_experiment(&spec)?;
            print!("{rep}");
            let mut body = String::from("metric,value\n");
            for (k, v) in &rep.metrics {
                body.push_str(&format!("{k},{v:.6}\n"));
            }
            o.text(out.join("metrics.csv"), &body)?;
            let mut body = String::from("metric,expected,measured,status\n");
            for c in &rep.checks {
                let m = c.measured.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into());
                let status = if c.pass { "PASS" } else { "FAIL" };
                body.push_str(&format!("{},{},{m},{status}\n", c.expectation.metric, c.expectation.bound));
            }
            o.text(out.join("checks.csv"), &body)?;
            rep.passed()
        }
    };
    o.text(out.join("config.txt"), &cfg.to_text())?;
    o.keep = true;
    Ok(ok)
}

/// Parses `argv` (program name first) and runs the command.
/// Returns 0 on success, 1 when an experiment's expectations fail, and the
/// error's exit code otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let res = match &cli.command {
        Command::Simulate { config, out, seed } => cmd_simulate(config.as_deref(), out, *seed).map(|_| true),
        Command::Ingest {
            config,
            events,
            covariates,
            out,
        } => cmd_ingest(config, events, covariates.as_deref(), out).map(|_| true),
        Command::Fit { config, data, out, seed } => cmd_fit(config.as_deref(), data, out, *seed).map(|_| true),
        Command::Predict { trace, data, out } => cmd_predict(trace, data, out).map(|_| true),
        Command::Summarize {
            trace,
            data,
            out,
            ess_cells,
            per_draw,
        } => cmd_summarize(trace, data.as_deref(), out, *ess_cells, *per_draw).map(|_| true),
        Command::Experiment { config, out, grid } => cmd_experiment(config, out, grid.as_deref()),
    };
    match res {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
