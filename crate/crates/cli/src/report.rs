use std::path::{Path, PathBuf};

use qdpair::analysis::{stability_report, RunIteration, StabilityOptions};
use qdpair::correlator::{rate_series, ChannelSelect, RatePoint};
use qdpair::timetag::read_all;
use qdpair::tomography::{combination_index, TomoOptions};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{histogram_files, load_dataset, rep_period_ps, require_dir, streams_in, CorrelationFlags};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, out_dir, write_csv, write_json, Manifest};

#[derive(Clone, Debug)]
pub struct ReportFlags {
    pub pairing: Option<usize>,
    pub rate_window_s: Option<f64>,
    pub tau_window_ps: Option<(i64, i64)>,
    pub bootstrap: Option<usize>,
}

/// Iteration subdirectories (holding streams or histograms), sorted by name.
fn iteration_dirs(run_dir: &Path) -> CliResult<Vec<PathBuf>> {
    require_dir(run_dir)?;
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(run_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", run_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        if !streams_in(&d)?.is_empty() || !histogram_files(&d)?.is_empty() {
            out.push(d);
        }
    }
    Ok(out)
}

/// Per-channel rate series of one iteration on the run clock. Streams are
/// placed back to back in combination order; without streams, each
/// histogram's singles give one point per combination.
fn iteration_rates(
    dir: &Path,
    t_start: f64,
    combination_s: f64,
    window_s: f64,
    channels: (u16, u16),
) -> CliResult<(Vec<RatePoint>, Vec<RatePoint>)> {
    let streams = streams_in(dir)?;
    let mut per: Vec<(usize, Vec<RatePoint>, Vec<RatePoint>)> = streams
        .par_iter()
        .map(|p| -> CliResult<_> {
            let (header, records) = read_all(p)?;
            let (xx, x) = header
                .basis()
                .ok_or_else(|| CliError::Data(format!("{}: stream has no basis label", p.display())))?;
            let k = combination_index(xx, x);
            let offset = t_start + k as f64 * combination_s;
            let end = (combination_s * 1e12).round() as u64;
            let shift = |v: Vec<RatePoint>| {
                v.into_iter()
                    .map(|r| RatePoint {
                        t_center_s: r.t_center_s + offset,
                        rate_hz: r.rate_hz,
                    })
                    .collect::<Vec<_>>()
            };
            let a = rate_series(records.iter().copied(), ChannelSelect::One(channels.0), window_s, 0, end)?;
            let b = rate_series(records.iter().copied(), ChannelSelect::One(channels.1), window_s, 0, end)?;
            Ok((k, shift(a), shift(b)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    per.sort_by_key(|p| p.0);
    let mut xx = Vec::new();
    let mut x = Vec::new();
    for (_, a, b) in per {
        xx.extend(a);
        x.extend(b);
    }
    Ok((xx, x))
}

pub fn run(run_dir: &Path, out: Option<PathBuf>, corr: &CorrelationFlags, flags: &ReportFlags) -> CliResult {
    let dirs = iteration_dirs(run_dir)?;
    if dirs.is_empty() {
        return Err(CliError::Data(format!("no iteration directories in {}", run_dir.display())));
    }
    let cfg = RunConfig::find_in(run_dir)?;
    let stab = cfg.as_ref().map(|c| c.stability.clone()).unwrap_or_default();
    let tomo_cfg = cfg.as_ref().map(|c| c.tomography.clone()).unwrap_or_default();
    let pairing = flags.pairing.unwrap_or(stab.pairing);
    if dirs.len() < pairing {
        return Err(CliError::Data(format!(
            "{} iteration(s) in {}, pairing needs {pairing}",
            dirs.len(),
            run_dir.display()
        )));
    }
    let (_, ch_a, ch_b) = corr.resolve(cfg.as_ref());
    let period = rep_period_ps(&dirs[0], cfg.as_ref())?;

    let mut run = Vec::with_capacity(dirs.len());
    let mut window_used = None;
    for (i, d) in dirs.iter().enumerate() {
        let manifest = Manifest::read(d)?;
        let dataset = load_dataset(d, corr, cfg.as_ref())?;
        let combination_s = manifest.as_ref().map_or(dataset.duration_s(), |m| m.combination_duration_s);
        let t_start = manifest.as_ref().map_or(i as f64 * 36.0 * combination_s, |m| m.t_start_s);
        let window = flags.rate_window_s.or(stab.rate_window_s).unwrap_or(combination_s);
        window_used.get_or_insert(window);
        let (rates_xx, rates_x) = if streams_in(d)?.is_empty() {
            singles_rates(&dataset, t_start, combination_s)
        } else {
            iteration_rates(d, t_start, combination_s, window, (ch_a, ch_b))?
        };
        run.push(RunIteration {
            t_start_s: t_start,
            dataset,
            rates_xx,
            rates_x,
        });
        eprintln!("loaded {}", d.display());
    }

    let background = tomo_cfg.background.resolve(period);
    let opts = StabilityOptions {
        pairing,
        tau_window_ps: flags.tau_window_ps.unwrap_or(stab.tau_window_ps),
        rate_window_s: window_used.unwrap_or(1.0),
        tomo: TomoOptions {
            background,
            bootstrap_resamples: flags.bootstrap.unwrap_or(tomo_cfg.bootstrap),
            bootstrap_seed: tomo_cfg.bootstrap_seed,
            ..TomoOptions::default()
        },
    };
    let report = stability_report(&run, &opts)?;

    let out = out_dir(&out, run_dir, "report");
    ensure_dir(&out)?;
    write_json(&out.join("report.json"), &report)?;
    write_csv(
        &out.join("fig5a.csv"),
        &["t_s", "rate_xx_hz", "rate_x_hz", "rate_combined_hz"],
        report
            .rate_series_combined
            .iter()
            .zip(report.rate_series_xx.iter().zip(&report.rate_series_x))
            .map(|(c, (a, b))| vec![c.t_center_s, a.rate_hz, b.rate_hz, c.rate_hz]),
    )?;
    write_csv(
        &out.join("fig5b.csv"),
        &["t_s", "two_n", "sigma_2n", "counts"],
        report
            .negativity_series
            .iter()
            .map(|g| vec![g.t_s, g.two_n, g.sigma.unwrap_or(f64::NAN), g.counts]),
    )?;

    println!("iterations   {} (pairing {})", run.len(), pairing);
    println!("mean rate    {:.1} kHz", report.mean_rate * 1e-3);
    println!("max rate     {:.1} kHz", report.max_rate * 1e-3);
    println!("fluctuation  {:.2} % (max−min)/mean, {:.2} % rms", report.fluctuation * 100.0, report.fluctuation_rms * 100.0);
    println!("min 2n       {:.4}", report.min_2n);
    println!("mean 2n      {:.4}", report.mean_2n);
    Ok(())
}

fn singles_rates(ds: &qdpair::tomography::TomographyDataset, t_start: f64, combination_s: f64) -> (Vec<RatePoint>, Vec<RatePoint>) {
    let point = |k: usize, n: u64| RatePoint {
        t_center_s: t_start + (k as f64 + 0.5) * combination_s,
        rate_hz: if combination_s > 0.0 { n as f64 / combination_s } else { 0.0 },
    };
    ds.histograms()
        .iter()
        .enumerate()
        .map(|(k, h)| (point(k, h.singles_a), point(k, h.singles_b)))
        .unzip()
}
