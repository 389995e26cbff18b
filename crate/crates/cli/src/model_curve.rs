use std::path::{Path, PathBuf};

use qdpair::quantum::{model_negativity_curve, CascadeModelParams};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::write_csv;

#[derive(Clone, Debug)]
pub struct CurveFlags {
    pub config: Option<PathBuf>,
    pub fss_uev: Option<f64>,
    pub t1_ps: Option<f64>,
    pub t1_xx_ps: Option<f64>,
    pub jitter_fwhm_ps: Option<f64>,
    pub rotation_deg: Option<f64>,
    pub tau_max_ps: Option<f64>,
    pub step_ps: f64,
}

/// Theory 2n(τ) of the jitter-averaged cascade state on `[0, tau_max]`.
pub fn run(out: &Path, flags: &CurveFlags) -> CliResult {
    let mut p = match &flags.config {
        Some(c) => RunConfig::load(c)?.0.simulation.cascade,
        None => CascadeModelParams::default(),
    };
    if let Some(v) = flags.fss_uev {
        p.fss_energy_uev = v;
    }
    if let Some(v) = flags.t1_ps {
        p.t1_x_ps = v;
    }
    if let Some(v) = flags.t1_xx_ps {
        p.t1_xx_ps = v;
    }
    if let Some(v) = flags.jitter_fwhm_ps {
        p.jitter_fwhm_2ph_ps = v;
    }
    if let Some(v) = flags.rotation_deg {
        p.basis_rotation_deg = v;
    }
    p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let tau_max = flags.tau_max_ps.unwrap_or(5.0 * p.t1_x_ps);
    if !(flags.step_ps > 0.0) || !(tau_max >= 0.0) {
        return Err(CliError::Usage("--step must be positive and --tau-max non-negative".into()));
    }
    let n = (tau_max / flags.step_ps + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=n).map(|k| k as f64 * flags.step_ps).collect();
    let curve = model_negativity_curve(&p, &grid)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        crate::output::ensure_dir(dir)?;
    }
    write_csv(out, &["tau_ps", "two_n"], curve.iter().map(|&(t, v)| vec![t, v]))?;
    eprintln!("{} points written to {}", curve.len(), out.display());
    Ok(())
}
