use std::path::{Path, PathBuf};

use qdpair::analysis::{fit_fss, fit_lifetime, fit_rabi, FitResult};
use qdpair::correlator::CoincidenceHistogram;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_csv, write_json};
use crate::tomo::default_lifetime_range;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// Coincidence-histogram CSV (as written by `correlate`).
    Lifetime,
    /// CSV `hwp_deg,energy_uev`.
    Fss,
    /// CSV `power_uw,counts`.
    Rabi,
}

#[derive(Clone, Debug)]
pub struct FitFlags {
    pub jitter_fwhm_ps: f64,
    pub range_ps: Option<(f64, f64)>,
    pub rep_period_ps: Option<f64>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    kind: FitKind,
    input: String,
    fit: &'a FitResult,
}

/// Two-column numeric CSV; a non-numeric first line is taken as a header,
/// `#` lines are comments.
pub fn read_xy(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<(f64, f64)> = match cols.as_slice() {
            [a, b, ..] => a.parse().ok().zip(b.parse().ok()),
            _ => None,
        };
        match parsed {
            Some(p) => out.push(p),
            // one header row before the data
            None if out.is_empty() && !header_seen => header_seen = true,
            None => {
                return Err(CliError::Data(format!(
                    "{}:{}: expected two numeric columns",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn run(kind: FitKind, input: &Path, out: Option<PathBuf>, flags: &FitFlags) -> CliResult {
    let (fit, data): (FitResult, Vec<(f64, f64)>) = match kind {
        FitKind::Lifetime => {
            let h = CoincidenceHistogram::read_csv(input)?;
            let range = flags.range_ps.unwrap_or_else(|| default_lifetime_range(flags.rep_period_ps));
            let data = (0..h.num_bins()).map(|b| (h.bin_center(b), h.counts[b] as f64)).collect();
            (fit_lifetime(&h, flags.jitter_fwhm_ps, range)?, data)
        }
        FitKind::Fss => {
            let s = read_xy(input)?;
            (fit_fss(&s)?, s)
        }
        FitKind::Rabi => {
            let s = read_xy(input)?;
            (fit_rabi(&s)?, s)
        }
    };
    let out = out.unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
    ensure_dir(&out)?;
    let (stem, curve, cols) = match kind {
        FitKind::Lifetime => ("lifetime", "lifetime_curve.csv", ["delta_tau_ps", "counts", "model"]),
        FitKind::Fss => ("fss", "fss_curve.csv", ["hwp_deg", "energy_uev", "model"]),
        FitKind::Rabi => ("rabi", "fig3d.csv", ["power_uw", "counts", "model"]),
    };
    let lookup = |x: f64| data.iter().find(|p| p.0 == x).map_or(f64::NAN, |p| p.1);
    write_csv(
        &out.join(curve),
        &cols,
        fit.model_curve.iter().map(|&(x, m)| vec![x, lookup(x), m]),
    )?;
    write_json(
        &out.join(format!("{stem}_fit.json")),
        &FitReport {
            kind,
            input: input.display().to_string(),
            fit: &fit,
        },
    )?;
    for (k, v) in &fit.params {
        println!("{k:<10} {v:.6} ± {:.6}", fit.sigmas[k]);
    }
    println!("{:<10} {:.4}", "chi2/dof", fit.reduced_chi2);
    for f in &fit.flags {
        eprintln!("warning: {f}");
    }
    if !fit.converged {
        return Err(CliError::NoConvergence(format!("{stem} fit; partial output kept in {}", out.display())));
    }
    Ok(())
}
