//! Time-resolved two-photon state tomography from the 36 basis-combination
//! coincidence histograms.
//!
//! Delays follow the histogram convention `δτ = t_XX − t_X`; a τ-bin
//! `[lo, hi)` in δτ corresponds to emission delays `τ = t_X − t_XX ∈ (−hi, −lo]`.

pub mod mle;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

pub use mle::{combination_index, combination_ket, mle_fit, MleFit, MleOptions};

use crate::correlator::{correlate_iter, CoincidenceHistogram, CorrelationParams};
use crate::error::{Error, Result};
use crate::quantum::{BasisState, DensityMatrix, Ket4};
use crate::timetag::StreamReader;

/// The 36 histograms, stored in [`combination_index`] order on one bin grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TomographyDataset {
    histograms: Vec<CoincidenceHistogram>,
}

fn pair_label(i: usize) -> String {
    format!("{}{}", BasisState::ALL[i / 6].label(), BasisState::ALL[i % 6].label())
}

/// Validates and orders a set of labeled histograms. Every one of the 36
/// combinations must appear exactly once, on identical bin grids and with
/// identical durations.
pub fn assemble_dataset(histograms: impl IntoIterator<Item = CoincidenceHistogram>) -> Result<TomographyDataset> {
    let mut slots: BTreeMap<usize, CoincidenceHistogram> = BTreeMap::new();
    for h in histograms {
        let label = h.label_str();
        let mut chars = label.chars();
        let key = match (
            chars.next().and_then(BasisState::from_label),
            chars.next().and_then(BasisState::from_label),
        ) {
            (Some(a), Some(b)) => combination_index(a, b),
            _ => return Err(Error::Dataset(format!("histogram label `{label}` is not a basis pair"))),
        };
        if slots.insert(key, h).is_some() {
            return Err(Error::Dataset(format!("duplicate combination {label}")));
        }
    }
    let missing: Vec<String> = (0..36).filter(|i| !slots.contains_key(i)).map(pair_label).collect();
    if !missing.is_empty() {
        return Err(Error::Dataset(format!("missing combinations: {}", missing.join(", "))));
    }
    let histograms: Vec<_> = slots.into_values().collect();
    let first = &histograms[0];
    for (i, h) in histograms.iter().enumerate() {
        if !h.same_grid(first) {
            return Err(Error::Dataset(format!(
                "{} has bin grid {} ps on [{}, {}), expected {} ps on [{}, {})",
                pair_label(i),
                h.bin_width_ps,
                h.tau_min_ps,
                h.tau_max_ps,
                first.bin_width_ps,
                first.tau_min_ps,
                first.tau_max_ps
            )));
        }
        if h.duration_s != first.duration_s {
            return Err(Error::Dataset(format!(
                "{} covers {} s, HH covers {} s",
                pair_label(i),
                h.duration_s,
                first.duration_s
            )));
        }
    }
    Ok(TomographyDataset { histograms })
}

impl TomographyDataset {
    pub fn histogram(&self, xx: BasisState, x: BasisState) -> &CoincidenceHistogram {
        &self.histograms[combination_index(xx, x)]
    }

    pub fn histograms(&self) -> &[CoincidenceHistogram] {
        &self.histograms
    }

    pub fn into_histograms(self) -> Vec<CoincidenceHistogram> {
        self.histograms
    }

    pub fn bin_width_ps(&self) -> u64 {
        self.histograms[0].bin_width_ps
    }

    pub fn tau_range_ps(&self) -> (i64, i64) {
        (self.histograms[0].tau_min_ps, self.histograms[0].tau_max_ps)
    }

    pub fn duration_s(&self) -> f64 {
        self.histograms[0].duration_s
    }

    /// Adds another dataset bin-for-bin (e.g. a further iteration).
    pub fn accumulate(&mut self, other: &TomographyDataset) -> Result<()> {
        if !self.histograms[0].same_grid(&other.histograms[0]) {
            return Err(Error::Dataset("cannot add datasets with different bin grids".into()));
        }
        for (a, b) in self.histograms.iter_mut().zip(&other.histograms) {
            a.accumulate(b)?;
        }
        Ok(())
    }

    /// Summed histogram over all combinations (for lifetime fits and
    /// per-bin weights).
    pub fn summed(&self) -> CoincidenceHistogram {
        let mut total = self.histograms[0].clone();
        for h in &self.histograms[1..] {
            for (a, b) in total.counts.iter_mut().zip(&h.counts) {
                *a += b;
            }
        }
        total
    }

    /// Per-combination counts in `[lo, hi)` minus `level[i]` per histogram
    /// bin, floored at zero.
    pub fn window_counts(&self, lo: i64, hi: i64, level: &[f64; 36]) -> [f64; 36] {
        let w = self.bin_width_ps() as i64;
        let nbins = ((hi - lo) / w) as f64;
        let mut out = [0.0; 36];
        for (i, h) in self.histograms.iter().enumerate() {
            out[i] = (h.counts_in(lo, hi) as f64 - level[i] * nbins).max(0.0);
        }
        out
    }

    pub fn background_levels(&self, bg: &Background) -> [f64; 36] {
        let mut out = [0.0; 36];
        for (o, h) in out.iter_mut().zip(&self.histograms) {
            *o = background_level(h, bg);
        }
        out
    }
}

/// Lists `*.qtt` files in `dir`, sorted by name.
pub fn stream_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "qtt") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Correlates every stream (in parallel, one task per file) and assembles the
/// dataset from the header labels. All histograms get `duration_s` when
/// given, otherwise the longest observed stream span.
pub fn dataset_from_streams(
    paths: &[PathBuf],
    ch_a: u16,
    ch_b: u16,
    params: CorrelationParams,
    duration_s: Option<f64>,
) -> Result<TomographyDataset> {
    let mut hists = paths
        .par_iter()
        .map(|p| -> Result<CoincidenceHistogram> {
            let reader = StreamReader::open(p)?;
            let label = reader.header().basis_label;
            let mut h = correlate_iter(reader, ch_a, ch_b, params)?;
            h.basis_label = label;
            Ok(h)
        })
        .collect::<Result<Vec<_>>>()?;
    let span = hists.iter().map(|h| h.duration_s).fold(0.0, f64::max);
    for h in hists.iter_mut() {
        h.duration_s = duration_s.unwrap_or(span);
    }
    assemble_dataset(hists)
}

/// Accidental-coincidence estimate subtracted before reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    None,
    /// Flat level from the regions halfway between pulse peaks,
    /// `(k + ½)·T ± halfwidth` for `|k + ½| ≥ 1.5` (the valleys next to the
    /// center peak hold its own decay tail). Without a period, or when no
    /// such region fits in the histogram, the outer 10 % of the range on each
    /// side is used.
    SideRegions {
        rep_period_ps: Option<f64>,
        halfwidth_ps: f64,
    },
}

impl Background {
    pub fn side_regions(rep_period_ps: Option<f64>) -> Self {
        Background::SideRegions {
            rep_period_ps,
            halfwidth_ps: rep_period_ps.map_or(0.0, |t| t / 4.0),
        }
    }
}

/// Mean counts per histogram bin in the background regions.
pub fn background_level(h: &CoincidenceHistogram, bg: &Background) -> f64 {
    let Background::SideRegions { rep_period_ps, halfwidth_ps } = *bg else {
        return 0.0;
    };
    let mean_over = |pred: &dyn Fn(f64) -> bool| -> Option<f64> {
        let (n, s) = (0..h.num_bins())
            .filter(|&b| pred(h.bin_center(b)))
            .fold((0usize, 0u64), |(n, s), b| (n + 1, s + h.counts[b]));
        (n > 0).then(|| s as f64 / n as f64)
    };
    if let Some(t) = rep_period_ps.filter(|t| *t > 0.0) {
        let lo = h.tau_min_ps as f64;
        let hi = h.tau_max_ps as f64;
        let in_valley = |c: f64| {
            let k = (c / t - 0.5).round();
            let center = (k + 0.5) * t;
            (k + 0.5).abs() >= 1.5
                && (c - center).abs() < halfwidth_ps
                && center - halfwidth_ps >= lo
                && center + halfwidth_ps <= hi
        };
        if let Some(level) = mean_over(&in_valley) {
            return level;
        }
    }
    let span = (h.tau_max_ps - h.tau_min_ps) as f64;
    let edge = 0.1 * span;
    let lo = h.tau_min_ps as f64 + edge;
    let hi = h.tau_max_ps as f64 - edge;
    mean_over(&|c: f64| c < lo || c >= hi).unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomoOptions {
    pub mle: MleOptions,
    pub background: Background,
    /// τ-bins with fewer (background-subtracted) counts are skipped.
    pub min_counts: f64,
    /// Poisson resamples per bin; 0 disables the bootstrap.
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    /// Relative exposure per combination; equal when `None`.
    pub exposure: Option<[f64; 36]>,
}

impl Default for TomoOptions {
    fn default() -> Self {
        TomoOptions {
            mle: MleOptions::default(),
            background: Background::side_regions(None),
            min_counts: 200.0,
            bootstrap_resamples: 0,
            bootstrap_seed: 1,
            exposure: None,
        }
    }
}

fn ser_rho<S: Serializer>(rho: &DensityMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    let flat: Vec<[f64; 2]> = (0..16)
        .map(|k| {
            let z = rho.entry(k / 4, k % 4);
            [z.re, z.im]
        })
        .collect();
    flat.serialize(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructionResult {
    /// δτ bin `[lo, hi)`, ps.
    pub tau_bin_ps: (i64, i64),
    /// Row-major `[re, im]` pairs.
    #[serde(serialize_with = "ser_rho")]
    pub rho: DensityMatrix,
    pub negativity_2n: f64,
    pub sigma_2n: Option<f64>,
    pub sigma_fidelity: Option<f64>,
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Background-subtracted counts summed over the 36 combinations.
    pub counts: f64,
}

impl ReconstructionResult {
    /// Center of the bin as an emission delay `τ = −δτ`, ps.
    pub fn emission_delay_ps(&self) -> f64 {
        -0.5 * (self.tau_bin_ps.0 + self.tau_bin_ps.1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedBin {
    pub tau_bin_ps: (i64, i64),
    pub counts: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeResolvedTomography {
    pub results: Vec<ReconstructionResult>,
    pub skipped: Vec<SkippedBin>,
}

impl TimeResolvedTomography {
    /// Highest per-bin negativity, with its bin.
    pub fn max_2n(&self) -> Option<&ReconstructionResult> {
        self.results
            .iter()
            .max_by(|a, b| a.negativity_2n.total_cmp(&b.negativity_2n))
    }
}

/// Reconstructs one 36-count set (MLE, optional bootstrap).
pub fn reconstruct_counts(
    counts: &[f64; 36],
    tau_bin_ps: (i64, i64),
    opts: &TomoOptions,
) -> Result<ReconstructionResult> {
    let exposure = opts.exposure.unwrap_or([1.0; 36]);
    let fit = mle_fit(counts, &exposure, &opts.mle)?;
    let (sigma_2n, sigma_fidelity) = if opts.bootstrap_resamples > 0 {
        let b = bootstrap_from_fit(counts, &exposure, &fit, opts.bootstrap_resamples, opts.bootstrap_seed, &opts.mle)?;
        (Some(b.sigma_2n), Some(b.sigma_fidelity))
    } else {
        (None, None)
    };
    Ok(ReconstructionResult {
        tau_bin_ps,
        negativity_2n: fit.negativity_2n(),
        rho: fit.rho,
        sigma_2n,
        sigma_fidelity,
        nll: fit.nll,
        iterations: fit.iterations,
        converged: fit.converged,
        counts: counts.iter().sum(),
    })
}

/// One MLE per τ-bin of width `bin_ps` tiling `tau_range` (δτ, ps). Bins run
/// in parallel; results keep bin order.
pub fn reconstruct_time_resolved(
    dataset: &TomographyDataset,
    tau_range: (i64, i64),
    bin_ps: u64,
    opts: &TomoOptions,
) -> Result<TimeResolvedTomography> {
    let w = dataset.bin_width_ps();
    if bin_ps == 0 || bin_ps % w != 0 {
        return Err(Error::invalid(format!(
            "τ-bin {bin_ps} ps is not a multiple of the histogram bin width {w} ps"
        )));
    }
    let (lo, hi) = tau_range;
    let (hmin, hmax) = dataset.tau_range_ps();
    if lo < hmin || hi > hmax {
        return Err(Error::invalid(format!(
            "τ range [{lo}, {hi}) exceeds histogram range [{hmin}, {hmax})"
        )));
    }
    if (lo - hmin) % w as i64 != 0 {
        return Err(Error::invalid(format!("τ range start {lo} ps is off the histogram bin grid")));
    }
    let n = if hi > lo { (hi - lo) as u64 / bin_ps } else { 0 };
    if n == 0 {
        return Err(Error::invalid(format!("τ range [{lo}, {hi}) holds no {bin_ps} ps bin")));
    }
    let levels = dataset.background_levels(&opts.background);
    let bins: Vec<(i64, i64, [f64; 36])> = (0..n as i64)
        .map(|k| {
            let a = lo + k * bin_ps as i64;
            let b = a + bin_ps as i64;
            (a, b, dataset.window_counts(a, b, &levels))
        })
        .collect();
    let outcomes = bins
        .par_iter()
        .map(|(a, b, c)| {
            let total: f64 = c.iter().sum();
            if total < opts.min_counts || total <= 0.0 {
                Ok(Err(SkippedBin {
                    tau_bin_ps: (*a, *b),
                    counts: total,
                }))
            } else {
                reconstruct_counts(c, (*a, *b), opts).map(Ok)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = TimeResolvedTomography {
        results: Vec::new(),
        skipped: Vec::new(),
    };
    for o in outcomes {
        match o {
            Ok(r) => out.results.push(r),
            Err(s) => out.skipped.push(s),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapResult {
    pub sigma_2n: f64,
    pub sigma_fidelity: f64,
    pub mean_2n: f64,
    pub resamples: usize,
}

/// Poisson-resamples each count, refits, and reports the spread of 2n and
/// of the fidelity to the point estimate's dominant eigenvector. Refits
/// start from the point estimate (the likelihood is convex in ρ).
/// Deterministic for a given seed.
pub fn bootstrap_uncertainty(
    counts: &[f64; 36],
    exposure: &[f64; 36],
    n_resamples: usize,
    seed: u64,
    opts: &MleOptions,
) -> Result<BootstrapResult> {
    let fit = mle_fit(counts, exposure, opts)?;
    bootstrap_from_fit(counts, exposure, &fit, n_resamples, seed, opts)
}

fn dominant_ket(rho: &DensityMatrix) -> Ket4 {
    let eig = rho.matrix().symmetric_eigen();
    let k = eig.eigenvalues.imax();
    eig.eigenvectors.column(k).into_owned()
}

fn bootstrap_from_fit(
    counts: &[f64; 36],
    exposure: &[f64; 36],
    fit: &MleFit,
    n_resamples: usize,
    seed: u64,
    opts: &MleOptions,
) -> Result<BootstrapResult> {
    if n_resamples < 100 {
        return Err(Error::invalid("bootstrap needs at least 100 resamples"));
    }
    let target = dominant_ket(&fit.rho);
    let samples = (0..n_resamples)
        .into_par_iter()
        .map(|k| -> Result<Option<(f64, f64)>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut re = [0.0; 36];
            for (r, &c) in re.iter_mut().zip(counts) {
                if c > 0.0 {
                    *r = Poisson::new(c).unwrap().sample(&mut rng);
                }
            }
            if re.iter().sum::<f64>() <= 0.0 {
                return Ok(None);
            }
            let f = mle::mle_fit_warm(&re, exposure, &fit.params, opts)?;
            let fid = target.dotc(&(f.rho.matrix() * target)).re;
            Ok(Some((f.negativity_2n(), fid)))
        })
        .collect::<Result<Vec<_>>>()?;
    let ok: Vec<(f64, f64)> = samples.into_iter().flatten().collect();
    if ok.len() < 2 {
        return Err(Error::invalid("bootstrap produced fewer than two usable resamples"));
    }
    let n = ok.len() as f64;
    let sd = |vals: &dyn Fn(&(f64, f64)) -> f64| {
        let m = ok.iter().map(vals).sum::<f64>() / n;
        let v = ok.iter().map(|s| (vals(s) - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt())
    };
    let (mean_2n, sigma_2n) = sd(&|s| s.0);
    let (_, sigma_fidelity) = sd(&|s| s.1);
    Ok(BootstrapResult {
        sigma_2n,
        sigma_fidelity,
        mean_2n,
        resamples: ok.len(),
    })
}

/// Fidelity of `rho` to the pure state `ket`.
pub fn ket_fidelity(rho: &DensityMatrix, ket: &Ket4) -> f64 {
    ket.dotc(&(rho.matrix() * ket)).re
}
