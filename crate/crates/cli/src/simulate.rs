use std::path::{Path, PathBuf};

use qdpair::io_util::write_atomic;
use qdpair::sim::{iteration_config, simulate_combination, tomography_configs};
use qdpair::timetag::{tomography_file_name, write_stream, VERSION};
use rayon::prelude::*;

use crate::config::{sha256_hex, RunConfig, CONFIG_COPY};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_json, FileEntry, Manifest, MANIFEST};

/// Writes `run_<id>/` with 36 streams per iteration, the manifest and a copy
/// of the config. Returns the run directory.
pub fn run(config_path: &Path, out: Option<PathBuf>) -> CliResult<PathBuf> {
    let (cfg, text) = RunConfig::load(config_path)?;
    let hash = sha256_hex(text.as_bytes());
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set output_dir".into()))?;
    let id = cfg.run_id.clone().unwrap_or_else(|| hash[..12].to_string());
    let run_dir = out.join(format!("run_{id}"));
    ensure_dir(&run_dir)?;
    write_atomic(&run_dir.join(CONFIG_COPY), text.as_bytes())?;

    let n = cfg.run.iterations;
    let multi = n > 1;
    let mut subdirs = Vec::new();
    let mut top_files = Vec::new();
    for i in 0..n {
        let (dir, sim) = if multi {
            let name = format!("iter_{i:03}");
            subdirs.push(name.clone());
            (run_dir.join(name), iteration_config(&cfg.simulation, i, cfg.iteration_period_s()))
        } else {
            (run_dir.clone(), cfg.simulation.clone())
        };
        ensure_dir(&dir)?;
        let files = write_iteration(&dir, &sim, cfg.combination_seconds())?;
        let manifest = Manifest {
            format_version: VERSION,
            config_sha256: hash.clone(),
            seed: sim.seed,
            iteration: Some(i),
            iterations: n,
            t_start_s: i as f64 * cfg.iteration_period_s(),
            rep_rate_ghz: sim.rep_rate_ghz,
            pulses_per_combination: sim.pulse_count,
            combination_duration_s: cfg.combination_seconds(),
            files: files.clone(),
            subdirectories: Vec::new(),
        };
        if multi {
            write_json(&dir.join(MANIFEST), &manifest)?;
        } else {
            top_files = files;
        }
        eprintln!("iteration {}/{n}: 36 streams written to {}", i + 1, dir.display());
    }
    let top = Manifest {
        format_version: VERSION,
        config_sha256: hash,
        seed: cfg.simulation.seed,
        iteration: if multi { None } else { Some(0) },
        iterations: n,
        t_start_s: 0.0,
        rep_rate_ghz: cfg.simulation.rep_rate_ghz,
        pulses_per_combination: cfg.simulation.pulse_count,
        combination_duration_s: cfg.combination_seconds(),
        files: top_files,
        subdirectories: subdirs,
    };
    write_json(&run_dir.join(MANIFEST), &top)?;
    println!("{}", run_dir.display());
    Ok(run_dir)
}

fn write_iteration(dir: &Path, sim: &qdpair::sim::SimConfig, seconds: f64) -> CliResult<Vec<FileEntry>> {
    let configs = tomography_configs(sim, seconds)?;
    configs
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let s = simulate_combination(c, k)?;
            let name = tomography_file_name(s.basis_xx, s.basis_x);
            let header = write_stream(dir.join(&name), s.header, &s.records)?;
            Ok(FileEntry {
                name,
                basis: header.label_str(),
                records: header.record_count,
            })
        })
        .collect::<Result<Vec<_>, qdpair::Error>>()
        .map_err(CliError::from)
}
