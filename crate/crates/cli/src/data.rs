//! Locating streams / histograms in a run directory.

use std::path::{Path, PathBuf};

use qdpair::correlator::{CoincidenceHistogram, CorrelationParams};
use qdpair::tomography::{assemble_dataset, dataset_from_streams, stream_files, TomographyDataset};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::Manifest;

pub const HIST_DIR: &str = "histograms";

/// Correlation settings: config values (if any) overridden by flags.
#[derive(Clone, Copy, Debug)]
pub struct CorrelationFlags {
    pub bin_ps: Option<u64>,
    pub window_ps: Option<u64>,
    pub a_channel: Option<u16>,
    pub b_channel: Option<u16>,
}

impl CorrelationFlags {
    pub fn resolve(&self, cfg: Option<&RunConfig>) -> (CorrelationParams, u16, u16) {
        let base = cfg.map(|c| c.correlation.clone()).unwrap_or_default();
        let params = CorrelationParams::new(
            self.bin_ps.unwrap_or(base.bin_ps),
            self.window_ps.unwrap_or(base.window_ps),
        );
        (
            params,
            self.a_channel.unwrap_or(base.a_channel),
            self.b_channel.unwrap_or(base.b_channel),
        )
    }
}

pub fn require_dir(dir: &Path) -> CliResult {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} is not a directory", dir.display())))
    }
}

pub fn streams_in(dir: &Path) -> CliResult<Vec<PathBuf>> {
    require_dir(dir)?;
    Ok(stream_files(dir)?)
}

/// Histogram CSVs in `dir/histograms/` or, failing that, `dir/`.
pub fn histogram_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    for d in [dir.join(HIST_DIR), dir.to_path_buf()] {
        if !d.is_dir() {
            continue;
        }
        let mut out: Vec<PathBuf> = std::fs::read_dir(&d)
            .map_err(|e| CliError::Data(format!("{}: {e}", d.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv") && is_basis_name(p))
            .collect();
        if !out.is_empty() {
            out.sort();
            return Ok(out);
        }
    }
    Ok(Vec::new())
}

fn is_basis_name(p: &Path) -> bool {
    p.file_stem()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.len() == 2 && s.chars().all(|c| "HVDARL".contains(c)))
}

/// The 36-combination dataset of one iteration directory: correlated from
/// `.qtt` streams when present (duration from the manifest), otherwise read
/// from histogram CSVs.
pub fn load_dataset(dir: &Path, flags: &CorrelationFlags, cfg: Option<&RunConfig>) -> CliResult<TomographyDataset> {
    let streams = streams_in(dir)?;
    if !streams.is_empty() {
        let (params, a, b) = flags.resolve(cfg);
        let duration = Manifest::read(dir)?.map(|m| m.combination_duration_s);
        return Ok(dataset_from_streams(&streams, a, b, params, duration)?);
    }
    let files = histogram_files(dir)?;
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "no .qtt streams or histogram CSVs in {}",
            dir.display()
        )));
    }
    let hists = files
        .iter()
        .map(|p| CoincidenceHistogram::read_csv(p).map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(assemble_dataset(hists)?)
}

/// Repetition period from the nearest manifest or config, ps.
pub fn rep_period_ps(dir: &Path, cfg: Option<&RunConfig>) -> CliResult<Option<f64>> {
    for d in [Some(dir), dir.parent()].into_iter().flatten() {
        if let Some(m) = Manifest::read(d)? {
            return Ok(Some(m.rep_period_ps()));
        }
    }
    Ok(cfg.map(|c| c.simulation.period_ps()))
}
