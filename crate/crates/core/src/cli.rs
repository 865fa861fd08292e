//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when the pipeline fails, 2 on usage,
//! configuration or I/O errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::band::Band;
use crate::config::{parse_config, FileConfig};
use crate::harness::{
    analyze, run_pipeline, run_reliability_campaign, Analysis, Dataset, ExperimentConfig, TrueFunction,
};
use crate::normbound::Method;
use crate::svg::{self, BandLayer};

pub const SEED_ENV: &str = "KBAND_SEED";

#[derive(Debug, Parser)]
#[command(name = "kband", version, about = "Distribution-free confidence bands for band-limited regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat key = value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// RNG seed; overrides the file, falls back to KBAND_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Evaluation grid size.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(2..))]
    pub grid: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand, PartialEq, Eq)]
pub enum Command {
    /// Draw a truth and a noisy dataset.
    Synth,
    /// Build one confidence band.
    Band {
        /// Two-column x,y CSV; synthesized from the config when absent.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Run a coverage campaign.
    Montecarlo {
        /// Overrides `trials` from the config.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Original and refined bands side by side.
    Compare {
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
}

pub fn parse_args<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Pipeline(#[from] crate::error::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Pipeline(_) => 1,
            CliError::Usage(_) | CliError::Io { .. } => 2,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Configuration after applying the file, `--seed`/`KBAND_SEED` and
/// `--grid`.
pub fn resolve_config(cli: &Cli) -> Result<FileConfig, CliError> {
    let mut fc = match &cli.config {
        Some(path) => parse_config(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        None => FileConfig::default(),
    };
    if let Some(seed) = cli.seed {
        fc.experiment.seed = seed;
    } else if !fc.seed_given {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            fc.experiment.seed = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got `{raw}`")))?;
        }
    }
    if let Some(grid) = cli.grid {
        fc.experiment.grid = grid as usize;
    }
    fc.experiment.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(fc)
}

pub fn truth_csv(f: &TrueFunction) -> String {
    let mut out = String::from("center,weight,eta,normalization\n");
    for (c, w) in f.centers.iter().zip(f.weights.iter()) {
        let _ = writeln!(out, "{c},{w},{},{}", f.eta, f.normalization);
    }
    out
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(summary) => {
            if !cli.quiet {
                print!("{summary}");
            }
            0
        }
        Err(e) => {
            eprintln!("kband: {e}");
            e.exit_code()
        }
    }
}

/// Does the work of [`run`] and returns the text summary.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let fc = resolve_config(cli)?;
    fs::create_dir_all(&cli.out).map_err(|source| CliError::Io { path: cli.out.clone(), source })?;
    let out = cli.out.as_path();
    let mut summary = String::new();
    match &cli.command {
        Command::Synth => {
            let cfg = &fc.experiment;
            let mut rng = cfg.trial_rng(0);
            let truth = crate::harness::synth_true_function(&mut rng, cfg.eta)?;
            let data = crate::harness::sample_dataset(&truth, cfg.n, &cfg.noise, &mut rng)?;
            let t = write(out, "truth.csv", &truth_csv(&truth))?;
            let d = write(out, "dataset.csv", &data.to_csv())?;
            let _ = writeln!(summary, "wrote {} and {}", t.display(), d.display());
        }
        Command::Band { data } => {
            let (analysis, truth, dataset) = band_run(&fc.experiment, data.as_deref(), out)?;
            let (band, label, nb) = match fc.method {
                Method::Original => (&analysis.band_original, "original", &analysis.tau),
                Method::Refined => (&analysis.band_refined, "refined", &analysis.tau0),
            };
            let csv = write(out, "band.csv", &band.to_csv())?;
            let layers = [BandLayer { band, color: "steelblue", label }];
            let plot = write(
                out,
                "band.svg",
                &svg::render(&format!("{label} band"), &layers, truth.as_ref(), Some(&dataset)),
            )?;
            let _ = writeln!(summary, "method {label}: tau {:.6e}", nb.tau);
            describe(&mut summary, label, band);
            let _ = writeln!(summary, "wrote {} and {}", csv.display(), plot.display());
        }
        Command::Compare { data } => {
            let (analysis, truth, dataset) = band_run(&fc.experiment, data.as_deref(), out)?;
            let (o, r) = (&analysis.band_original, &analysis.band_refined);
            write(out, "band_original.csv", &o.to_csv())?;
            write(out, "band_refined.csv", &r.to_csv())?;
            let mut widths = String::from("method,tau,mean_width,max_width\n");
            let _ = writeln!(widths, "original,{},{},{}", analysis.tau.tau, o.mean_width(), o.max_width());
            let _ = writeln!(widths, "refined,{},{},{}", analysis.tau0.tau, r.mean_width(), r.max_width());
            write(out, "width_summary.csv", &widths)?;
            let layers = [
                BandLayer { band: o, color: "orange", label: "original" },
                BandLayer { band: r, color: "steelblue", label: "refined" },
            ];
            write(out, "compare.svg", &svg::render("original vs refined", &layers, truth.as_ref(), Some(&dataset)))?;
            let _ = writeln!(summary, "tau {:.6e}, tau0 {:.6e}", analysis.tau.tau, analysis.tau0.tau);
            describe(&mut summary, "original", o);
            describe(&mut summary, "refined", r);
            let _ = writeln!(summary, "mean_width_ref <= mean_width_orig: {}", r.mean_width() <= o.mean_width());
            let _ = writeln!(
                summary,
                "wrote band_original.csv, band_refined.csv, width_summary.csv, compare.svg in {}",
                out.display()
            );
        }
        Command::Montecarlo { trials } => {
            let cfg = &fc.experiment;
            let trials = trials.unwrap_or(cfg.trials);
            if trials == 0 {
                return Err(CliError::Usage("trials must be positive".into()));
            }
            let campaign = run_reliability_campaign(cfg, trials)?;
            write(out, "campaign.csv", &campaign.to_csv())?;
            let text = campaign.summary_text();
            write(out, "campaign_summary.txt", &text)?;
            summary.push_str(&text);
        }
    }
    Ok(summary)
}

fn describe(summary: &mut String, label: &str, band: &Band) {
    let _ = writeln!(
        summary,
        "{label}: {} of {} points feasible, mean width {:.6e}, max width {:.6e}",
        band.status.iter().filter(|s| matches!(s, crate::band::PointStatus::Feasible)).count(),
        band.len(),
        band.mean_width(),
        band.max_width()
    );
}

/// Loads or synthesizes the dataset and runs the analysis. Synthesized
/// inputs are written next to the bands.
fn band_run(
    cfg: &ExperimentConfig,
    data: Option<&Path>,
    out: &Path,
) -> Result<(Analysis, Option<TrueFunction>, Dataset), CliError> {
    match data {
        Some(path) => {
            let dataset =
                Dataset::from_csv(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let cfg = ExperimentConfig { n: dataset.len(), ..cfg.clone() };
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let analysis = analyze(&cfg, &dataset, &mut cfg.trial_rng(0))?;
            Ok((analysis, None, dataset))
        }
        None => {
            let output = run_pipeline(cfg, &mut cfg.trial_rng(0))?;
            write(out, "truth.csv", &truth_csv(&output.truth))?;
            write(out, "dataset.csv", &output.dataset.to_csv())?;
            Ok((output.analysis, Some(output.truth), output.dataset))
        }
    }
}
