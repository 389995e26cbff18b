//! `qdpair` — simulate, correlate, reconstruct and report on an entangled
//! photon-pair source.
//!
//! Exit status: 0 success, 1 usage/config error, 2 data error,
//! 3 non-convergence (outputs are kept).

mod config;
mod correlate;
mod data;
mod error;
mod fit;
mod model_curve;
mod output;
mod report;
mod simulate;
mod tomo;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::BackgroundKind;
use crate::data::CorrelationFlags;
use crate::error::CliError;

/// Environment variable setting the worker thread count.
const THREADS_ENV: &str = "QDPAIR_THREADS";

#[derive(Parser)]
#[command(name = "qdpair", version, about = "Entangled photon-pair source: simulation and analysis")]
#[command(after_help = "Exit status: 0 ok, 1 usage/config, 2 data, 3 non-convergence.\n\
    Set QDPAIR_THREADS to choose the number of worker threads (default: all cores).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct CorrArgs {
    /// Histogram bin width, ps [config: correlation.bin_ps, default 8]
    #[arg(long = "bin")]
    bin_ps: Option<u64>,
    /// Correlation half-window, ps [config: correlation.window_ps, default 25000]
    #[arg(long = "window")]
    window_ps: Option<u64>,
    /// Start channel (XX detector); δτ = t_a − t_b [default 0]
    #[arg(long)]
    a_channel: Option<u16>,
    /// Stop channel (X detector) [default 1]
    #[arg(long)]
    b_channel: Option<u16>,
}

impl From<&CorrArgs> for CorrelationFlags {
    fn from(a: &CorrArgs) -> Self {
        CorrelationFlags {
            bin_ps: a.bin_ps,
            window_ps: a.window_ps,
            a_channel: a.a_channel,
            b_channel: a.b_channel,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a tomography run: 36 `.qtt` streams per iteration plus a manifest.
    Simulate {
        /// TOML run configuration (see configs/example.toml)
        #[arg(long)]
        config: PathBuf,
        /// Parent directory for `run_<id>/` [config: output_dir]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram every stream in a directory; writes `<basis>.csv` and `singles.csv`.
    Correlate {
        /// Directory with `.qtt` streams
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory [default: <in>/histograms]
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        corr: CorrArgs,
    },
    /// Time-resolved MLE tomography; writes `tomo.json`, `fig4a.csv`, `fig4b.csv`.
    Tomo {
        /// Iteration directory with 36 streams or histogram CSVs
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory [default: <in>/tomo]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Lower δτ edge, ps (δτ = t_XX − t_X, emission delay τ = −δτ) [default −808]
        #[arg(long, allow_hyphen_values = true)]
        tau_min: Option<i64>,
        /// Upper δτ edge, ps [default 24]
        #[arg(long, allow_hyphen_values = true)]
        tau_max: Option<i64>,
        /// τ-bin width, ps; a multiple of the histogram bin [default 8]
        #[arg(long)]
        tau_bin: Option<u64>,
        /// Poisson bootstrap resamples per bin; 0 omits sigmas [default 0]
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Accidental-coincidence subtraction [default auto: side regions when the period ≥ 5 ns]
        #[arg(long, value_enum)]
        background: Option<BackgroundKind>,
        /// Exciton lifetime for the T1-weighted 2n, ps [default: fitted]
        #[arg(long)]
        t1: Option<f64>,
        /// Two-photon jitter FWHM for the lifetime fit, ps [default 50]
        #[arg(long)]
        jitter_fwhm: Option<f64>,
        #[command(flatten)]
        corr: CorrArgs,
    },
    /// Fit a lifetime histogram, an FSS scan or a Rabi scan; writes `<kind>_fit.json` and a curve CSV.
    Fit {
        #[arg(value_enum)]
        kind: fit::FitKind,
        /// Input CSV
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory [default: next to the input]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Lifetime: fixed two-photon jitter FWHM, ps
        #[arg(long, default_value_t = 50.0)]
        jitter_fwhm: f64,
        /// Lifetime: lower δτ edge of the fit, ps
        #[arg(long, allow_hyphen_values = true, requires = "range_max")]
        range_min: Option<f64>,
        /// Lifetime: upper δτ edge of the fit, ps
        #[arg(long, allow_hyphen_values = true, requires = "range_min")]
        range_max: Option<f64>,
        /// Lifetime: repetition period used for the default fit range, ps
        #[arg(long)]
        rep_period: Option<f64>,
    },
    /// Stability report over the iterations of a run; writes `report.json`, `fig5a.csv`, `fig5b.csv`.
    Report {
        /// Run directory with `iter_*/` subdirectories
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory [default: <in>/report]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Consecutive iterations per 2n point [default 2]
        #[arg(long)]
        pairing: Option<usize>,
        /// Rate window, s [default: one combination]
        #[arg(long)]
        rate_window: Option<f64>,
        /// Lower δτ edge of the 2n window, ps [default −160]
        #[arg(long, allow_hyphen_values = true, requires = "tau_window_max")]
        tau_window_min: Option<i64>,
        /// Upper δτ edge of the 2n window, ps [default 0]
        #[arg(long, allow_hyphen_values = true, requires = "tau_window_min")]
        tau_window_max: Option<i64>,
        /// Bootstrap resamples per 2n point [default 0]
        #[arg(long)]
        bootstrap: Option<usize>,
        #[command(flatten)]
        corr: CorrArgs,
    },
    /// Theory curve 2n(τ) of the jitter-averaged cascade state (CSV `tau_ps,two_n`).
    ModelCurve {
        /// Output CSV
        #[arg(long, default_value = "fig4b_model.csv")]
        out: PathBuf,
        /// Take the cascade parameters from a run configuration
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fine-structure splitting, µeV [default 2.54]
        #[arg(long)]
        fss: Option<f64>,
        /// Exciton lifetime, ps [default 162]
        #[arg(long)]
        t1: Option<f64>,
        /// Biexciton lifetime, ps [default 120]
        #[arg(long)]
        t1_xx: Option<f64>,
        /// Two-photon jitter FWHM, ps [default 50]
        #[arg(long)]
        jitter_fwhm: Option<f64>,
        /// Lab axes rotation relative to the dot eigenbasis, degrees [default 0]
        #[arg(long, allow_hyphen_values = true)]
        rotation: Option<f64>,
        /// Largest emission delay, ps [default 5·T1]
        #[arg(long)]
        tau_max: Option<f64>,
        /// Grid step, ps
        #[arg(long, default_value_t = 1.0)]
        step: f64,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Simulate { config, out } => simulate::run(&config, out).map(|_| ()),
        Command::Correlate { input, out, corr } => correlate::run(&input, out, &(&corr).into()).map(|_| ()),
        Command::Tomo {
            input,
            out,
            tau_min,
            tau_max,
            tau_bin,
            bootstrap,
            background,
            t1,
            jitter_fwhm,
            corr,
        } => tomo::run(
            &input,
            out,
            &(&corr).into(),
            &tomo::TomoFlags {
                tau_min_ps: tau_min,
                tau_max_ps: tau_max,
                tau_bin_ps: tau_bin,
                bootstrap,
                background,
                t1_ps: t1,
                jitter_fwhm_ps: jitter_fwhm,
            },
        ),
        Command::Fit {
            kind,
            input,
            out,
            jitter_fwhm,
            range_min,
            range_max,
            rep_period,
        } => fit::run(
            kind,
            &input,
            out,
            &fit::FitFlags {
                jitter_fwhm_ps: jitter_fwhm,
                range_ps: range_min.zip(range_max),
                rep_period_ps: rep_period,
            },
        ),
        Command::Report {
            input,
            out,
            pairing,
            rate_window,
            tau_window_min,
            tau_window_max,
            bootstrap,
            corr,
        } => report::run(
            &input,
            out,
            &(&corr).into(),
            &report::ReportFlags {
                pairing,
                rate_window_s: rate_window,
                tau_window_ps: tau_window_min.zip(tau_window_max),
                bootstrap,
            },
        ),
        Command::ModelCurve {
            out,
            config,
            fss,
            t1,
            t1_xx,
            jitter_fwhm,
            rotation,
            tau_max,
            step,
        } => model_curve::run(
            &out,
            &model_curve::CurveFlags {
                config,
                fss_uev: fss,
                t1_ps: t1,
                t1_xx_ps: t1_xx,
                jitter_fwhm_ps: jitter_fwhm,
                rotation_deg: rotation,
                tau_max_ps: tau_max,
                step_ps: step,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qdpair: {e}");
            e.exit_code()
        }
    }
}
