use std::path::{Path, PathBuf};

use qdpair::analysis::{fit_lifetime, t1_weighted_negativity, NegativityPoint};
use qdpair::tomography::{
    reconstruct_time_resolved, Background, ReconstructionResult, SkippedBin, TomoOptions, TomographyDataset,
};
use serde::Serialize;

use crate::config::{BackgroundKind, RunConfig};
use crate::data::{load_dataset, rep_period_ps, CorrelationFlags};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, out_dir, write_csv, write_json};

#[derive(Clone, Debug)]
pub struct TomoFlags {
    pub tau_min_ps: Option<i64>,
    pub tau_max_ps: Option<i64>,
    pub tau_bin_ps: Option<u64>,
    pub bootstrap: Option<usize>,
    pub background: Option<BackgroundKind>,
    pub t1_ps: Option<f64>,
    pub jitter_fwhm_ps: Option<f64>,
}

#[derive(Serialize)]
struct Lifetime {
    t1_ps: f64,
    sigma_ps: Option<f64>,
    /// "fit" (summed histogram) or "flag".
    source: &'static str,
}

#[derive(Serialize)]
struct Weighted {
    value: f64,
    sigma: Option<f64>,
    window_ps: (f64, f64),
}

#[derive(Serialize)]
struct MaxBin {
    tau_ps: f64,
    tau_bin_ps: (i64, i64),
    two_n: f64,
    sigma: Option<f64>,
}

#[derive(Serialize)]
struct TomoReport {
    tau_range_ps: (i64, i64),
    tau_bin_ps: u64,
    background: Background,
    bootstrap_resamples: usize,
    /// False when `--bootstrap 0`: per-bin sigmas are omitted.
    sigmas_available: bool,
    lifetime: Option<Lifetime>,
    t1_weighted_2n: Option<Weighted>,
    max_2n: Option<MaxBin>,
    unconverged_bins: usize,
    results: Vec<ReconstructionResult>,
    skipped: Vec<SkippedBin>,
}

/// Time-resolved tomography of one iteration directory. Writes `tomo.json`,
/// `fig4b.csv` (2n vs emission delay) and `fig4a.csv` (ρ at the best bin).
pub fn run(input: &Path, out: Option<PathBuf>, corr: &CorrelationFlags, flags: &TomoFlags) -> CliResult {
    let cfg = RunConfig::find_in(input)?;
    let base = cfg.as_ref().map(|c| c.tomography.clone()).unwrap_or_default();
    let fit_cfg = cfg.as_ref().map(|c| c.fit.clone()).unwrap_or_default();
    let ds = load_dataset(input, corr, cfg.as_ref())?;
    let period = rep_period_ps(input, cfg.as_ref())?;

    let range = (
        flags.tau_min_ps.unwrap_or(base.tau_min_ps),
        flags.tau_max_ps.unwrap_or(base.tau_max_ps),
    );
    let bin = flags.tau_bin_ps.unwrap_or(base.tau_bin_ps);
    let resamples = flags.bootstrap.unwrap_or(base.bootstrap);
    let background = flags.background.unwrap_or(base.background).resolve(period);
    let opts = TomoOptions {
        background,
        min_counts: base.min_counts,
        bootstrap_resamples: resamples,
        bootstrap_seed: base.bootstrap_seed,
        ..TomoOptions::default()
    };
    let tr = reconstruct_time_resolved(&ds, range, bin, &opts)?;

    let jitter = flags.jitter_fwhm_ps.unwrap_or(fit_cfg.jitter_fwhm_ps);
    let lifetime = match flags.t1_ps {
        Some(t1) => Some(Lifetime {
            t1_ps: t1,
            sigma_ps: None,
            source: "flag",
        }),
        None => lifetime_from(&ds, jitter, fit_cfg.lifetime_range_ps, period),
    };
    // ascending emission delay (δτ bins run the other way)
    let series: Vec<NegativityPoint> = tr
        .results
        .iter()
        .rev()
        .map(|r| NegativityPoint {
            tau_ps: r.emission_delay_ps(),
            two_n: r.negativity_2n,
            counts: r.counts,
            sigma: r.sigma_2n,
        })
        .collect();
    let weighted = lifetime.as_ref().and_then(|l| {
        t1_weighted_negativity(&series, l.t1_ps).ok().map(|(value, sigma)| Weighted {
            value,
            sigma: (resamples > 0).then_some(sigma),
            window_ps: (0.0, l.t1_ps),
        })
    });
    let max_2n = tr.max_2n().map(|r| MaxBin {
        tau_ps: r.emission_delay_ps(),
        tau_bin_ps: r.tau_bin_ps,
        two_n: r.negativity_2n,
        sigma: r.sigma_2n,
    });
    let unconverged = tr.results.iter().filter(|r| !r.converged).count();

    let out = out_dir(&out, input, "tomo");
    ensure_dir(&out)?;
    write_csv(
        &out.join("fig4b.csv"),
        &["tau_ps", "two_n", "sigma_2n", "counts"],
        series
            .iter()
            .map(|p| vec![p.tau_ps, p.two_n, p.sigma.unwrap_or(f64::NAN), p.counts]),
    )?;
    if let Some(best) = tr.max_2n() {
        write_csv(
            &out.join("fig4a.csv"),
            &["row", "col", "re", "im"],
            (0..16).map(|k| {
                let z = best.rho.entry(k / 4, k % 4);
                vec![(k / 4) as f64, (k % 4) as f64, z.re, z.im]
            }),
        )?;
    }
    let report = TomoReport {
        tau_range_ps: range,
        tau_bin_ps: bin,
        background,
        bootstrap_resamples: resamples,
        sigmas_available: resamples > 0,
        lifetime,
        t1_weighted_2n: weighted,
        max_2n,
        unconverged_bins: unconverged,
        results: tr.results,
        skipped: tr.skipped,
    };
    write_json(&out.join("tomo.json"), &report)?;

    if let Some(m) = &report.max_2n {
        println!("max 2n      {:.4} at τ = {} ps", m.two_n, m.tau_ps);
    }
    if let (Some(w), Some(l)) = (&report.t1_weighted_2n, &report.lifetime) {
        println!("2n over T1  {:.4} (T1 = {:.1} ps, {})", w.value, l.t1_ps, l.source);
    }
    println!("bins        {} reconstructed, {} skipped", report.results.len(), report.skipped.len());
    if unconverged > 0 {
        return Err(CliError::NoConvergence(format!(
            "{unconverged} τ-bin(s) hit the iteration limit; results kept in {}",
            out.display()
        )));
    }
    Ok(())
}

/// Lifetime from the summed histogram, inside one repetition period.
fn lifetime_from(ds: &TomographyDataset, jitter: f64, range: Option<(f64, f64)>, period: Option<f64>) -> Option<Lifetime> {
    let range = range.unwrap_or_else(|| default_lifetime_range(period));
    let fit = fit_lifetime(&ds.summed(), jitter, range).ok()?;
    fit.converged.then(|| Lifetime {
        t1_ps: fit.param("T1"),
        sigma_ps: Some(fit.sigma("T1")),
        source: "fit",
    })
}

pub fn default_lifetime_range(period: Option<f64>) -> (f64, f64) {
    match period {
        Some(t) => (-(0.75 * t).min(1500.0), (0.25 * t).min(300.0)),
        None => (-1500.0, 300.0),
    }
}
