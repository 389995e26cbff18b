//! Run configuration (TOML). Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use qdpair::correlator::{DEFAULT_BIN_PS, DEFAULT_WINDOW_PS};
use qdpair::sim::SimConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Schema version written into every JSON output and accepted in configs.
pub const SCHEMA_VERSION: u32 = 1;

/// Name of the config copy stored in each run directory.
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    /// Run directories are named `run_<id>`; defaults to a config-hash prefix.
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub simulation: SimConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub correlation: CorrelationSection,
    #[serde(default)]
    pub tomography: TomographySection,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub fit: FitSection,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Tomography iterations; more than one writes `iter_NNN/` subdirectories.
    pub iterations: u64,
    /// Drift-clock spacing between iteration starts, s. Defaults to the
    /// length of one iteration (36 back-to-back combinations).
    pub iteration_period_s: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            iterations: 1,
            iteration_period_s: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationSection {
    pub bin_ps: u64,
    pub window_ps: u64,
    pub a_channel: u16,
    pub b_channel: u16,
}

impl Default for CorrelationSection {
    fn default() -> Self {
        CorrelationSection {
            bin_ps: DEFAULT_BIN_PS,
            window_ps: DEFAULT_WINDOW_PS,
            a_channel: 0,
            b_channel: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    /// Side regions when the pulse period leaves flat valleys between peaks
    /// (≥ [`AUTO_MIN_PERIOD_PS`]), none at faster clocks.
    Auto,
    None,
    SideRegions,
}

/// Below this repetition period the decay tails of neighbouring peaks fill
/// the valleys, so a valley level over-estimates the accidentals under the
/// zero-delay peak.
pub const AUTO_MIN_PERIOD_PS: f64 = 5000.0;

impl BackgroundKind {
    pub fn resolve(self, rep_period_ps: Option<f64>) -> qdpair::tomography::Background {
        use qdpair::tomography::Background;
        match self {
            BackgroundKind::None => Background::None,
            BackgroundKind::SideRegions => Background::side_regions(rep_period_ps),
            BackgroundKind::Auto => match rep_period_ps {
                Some(t) if t < AUTO_MIN_PERIOD_PS => Background::None,
                p => Background::side_regions(p),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographySection {
    pub tau_min_ps: i64,
    pub tau_max_ps: i64,
    pub tau_bin_ps: u64,
    pub bootstrap: usize,
    pub bootstrap_seed: u64,
    pub min_counts: f64,
    pub background: BackgroundKind,
}

impl Default for TomographySection {
    fn default() -> Self {
        TomographySection {
            tau_min_ps: -808,
            tau_max_ps: 24,
            tau_bin_ps: 8,
            bootstrap: 0,
            bootstrap_seed: 1,
            min_counts: 200.0,
            background: BackgroundKind::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    pub pairing: usize,
    pub tau_window_ps: (i64, i64),
    /// Rate window, s; defaults to one combination's duration.
    pub rate_window_s: Option<f64>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection {
            pairing: 2,
            tau_window_ps: (-160, 0),
            rate_window_s: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub jitter_fwhm_ps: f64,
    /// δτ range for the lifetime fit; defaults to a window inside one
    /// repetition period.
    pub lifetime_range_ps: Option<(f64, f64)>,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            jitter_fwhm_ps: 50.0,
            lifetime_range_ps: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    /// Loads `config.toml` from a run directory (or its parent) if present.
    pub fn find_in(dir: &Path) -> Result<Option<Self>, CliError> {
        for d in [Some(dir), dir.parent()].into_iter().flatten() {
            let p = d.join(CONFIG_COPY);
            if p.is_file() {
                return Ok(Some(Self::load(&p)?.0));
            }
        }
        Ok(None)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.simulation
            .validate()
            .map_err(|e| CliError::Usage(format!("simulation: {e}")))?;
        if self.run.iterations == 0 {
            return Err(CliError::Usage("run.iterations must be at least 1".into()));
        }
        if let Some(p) = self.run.iteration_period_s {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(CliError::Usage("run.iteration_period_s must be non-negative".into()));
            }
        }
        let c = &self.correlation;
        if c.bin_ps == 0 || c.window_ps == 0 {
            return Err(CliError::Usage("correlation.bin_ps and window_ps must be positive".into()));
        }
        let t = &self.tomography;
        if t.tau_bin_ps == 0 || t.tau_min_ps >= t.tau_max_ps {
            return Err(CliError::Usage("tomography τ range must be non-empty with a positive bin".into()));
        }
        if self.stability.pairing == 0 {
            return Err(CliError::Usage("stability.pairing must be at least 1".into()));
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(CliError::Usage("run_id may only contain letters, digits, '-' and '_'".into()));
            }
        }
        Ok(())
    }

    /// Seconds of acquisition per basis combination.
    pub fn combination_seconds(&self) -> f64 {
        self.simulation.duration_s()
    }

    pub fn iteration_period_s(&self) -> f64 {
        self.run
            .iteration_period_s
            .unwrap_or(36.0 * self.combination_seconds())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
