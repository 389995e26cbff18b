use rayon::prelude::*;
use serde::Serialize;

use crate::correlator::RatePoint;
use crate::error::{Error, Result};
use crate::tomography::{reconstruct_counts, TomoOptions, TomographyDataset};

/// One tomography iteration of a long run.
#[derive(Clone, Debug)]
pub struct RunIteration {
    /// Start of the iteration, seconds since the start of the run.
    pub t_start_s: f64,
    pub dataset: TomographyDataset,
    /// Windowed single-channel rates, times in run seconds. The two series
    /// must share their windows.
    pub rates_xx: Vec<RatePoint>,
    pub rates_x: Vec<RatePoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityOptions {
    /// Consecutive iterations merged into one reconstruction.
    pub pairing: usize,
    /// δτ range `[lo, hi)` (ps) integrated for each group's 2n.
    pub tau_window_ps: (i64, i64),
    /// Width of the rate windows, reported as-is.
    pub rate_window_s: f64,
    pub tomo: TomoOptions,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            pairing: 2,
            tau_window_ps: (-160, 0),
            rate_window_s: 1.0,
            tomo: TomoOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupNegativity {
    /// Mean start time of the grouped iterations, s.
    pub t_s: f64,
    pub first_iteration: usize,
    pub two_n: f64,
    pub sigma: Option<f64>,
    pub counts: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub window_s: f64,
    pub pairing: usize,
    pub rate_series_xx: Vec<RatePoint>,
    pub rate_series_x: Vec<RatePoint>,
    pub rate_series_combined: Vec<RatePoint>,
    pub negativity_series: Vec<GroupNegativity>,
    /// Combined (XX + X) rate statistics, Hz.
    pub mean_rate: f64,
    pub max_rate: f64,
    pub min_rate: f64,
    /// `(max − min)/mean` of the combined rate.
    pub fluctuation: f64,
    /// `std/mean` of the combined rate.
    pub fluctuation_rms: f64,
    pub min_2n: f64,
    pub mean_2n: f64,
}

/// Groups `pairing` consecutive iterations (a trailing partial group is
/// dropped), reconstructs one 2n per group from the background-subtracted
/// counts in the τ window, and summarizes the combined count rate.
pub fn stability_report(run: &[RunIteration], opts: &StabilityOptions) -> Result<StabilityReport> {
    if opts.pairing == 0 {
        return Err(Error::invalid("pairing must be at least 1"));
    }
    if run.len() < opts.pairing {
        return Err(Error::Dataset(format!(
            "{} iteration(s) available, pairing needs {}",
            run.len(),
            opts.pairing
        )));
    }
    let mut xx = Vec::new();
    let mut x = Vec::new();
    let mut combined = Vec::new();
    for (k, it) in run.iter().enumerate() {
        if it.rates_xx.len() != it.rates_x.len() {
            return Err(Error::Dataset(format!("iteration {k}: channel rate series differ in length")));
        }
        for (a, b) in it.rates_xx.iter().zip(&it.rates_x) {
            if (a.t_center_s - b.t_center_s).abs() > 1e-9 * a.t_center_s.abs().max(1.0) {
                return Err(Error::Dataset(format!("iteration {k}: channel rate windows are misaligned")));
            }
            combined.push(RatePoint {
                t_center_s: a.t_center_s,
                rate_hz: a.rate_hz + b.rate_hz,
            });
        }
        xx.extend_from_slice(&it.rates_xx);
        x.extend_from_slice(&it.rates_x);
        if !it.dataset.histograms()[0].same_grid(&run[0].dataset.histograms()[0]) {
            return Err(Error::Dataset(format!("iteration {k}: histogram grid differs from iteration 0")));
        }
    }
    if combined.is_empty() {
        return Err(Error::Dataset("no rate windows in the run".into()));
    }

    let groups: Vec<&[RunIteration]> = run.chunks_exact(opts.pairing).collect();
    let negativity_series = groups
        .par_iter()
        .enumerate()
        .map(|(g, group)| {
            let mut ds = group[0].dataset.clone();
            for it in &group[1..] {
                ds.accumulate(&it.dataset)?;
            }
            let levels = ds.background_levels(&opts.tomo.background);
            let (lo, hi) = opts.tau_window_ps;
            let counts = ds.window_counts(lo, hi, &levels);
            let r = reconstruct_counts(&counts, opts.tau_window_ps, &opts.tomo)?;
            Ok(GroupNegativity {
                t_s: group.iter().map(|it| it.t_start_s).sum::<f64>() / group.len() as f64,
                first_iteration: g * opts.pairing,
                two_n: r.negativity_2n,
                sigma: r.sigma_2n,
                counts: r.counts,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let rates: Vec<f64> = combined.iter().map(|p| p.rate_hz).collect();
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let (fluctuation, fluctuation_rms) = if mean > 0.0 {
        ((max - min) / mean, var.sqrt() / mean)
    } else {
        (0.0, 0.0)
    };
    let twon: Vec<f64> = negativity_series.iter().map(|g| g.two_n).collect();
    Ok(StabilityReport {
        window_s: opts.rate_window_s,
        pairing: opts.pairing,
        rate_series_xx: xx,
        rate_series_x: x,
        rate_series_combined: combined,
        mean_rate: mean,
        max_rate: max,
        min_rate: min,
        fluctuation,
        fluctuation_rms,
        min_2n: twon.iter().copied().fold(f64::INFINITY, f64::min),
        mean_2n: twon.iter().sum::<f64>() / twon.len() as f64,
        negativity_series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::CoincidenceHistogram;
    use crate::quantum::{bell_state, projector_probability, BasisState, BellState, DensityMatrix};
    use crate::tomography::{assemble_dataset, Background};

    fn dataset(rho: &DensityMatrix, n: f64) -> TomographyDataset {
        let hs = (0..36).map(|i| {
            let mut h = CoincidenceHistogram::for_window(8, 80);
            let b = h.bin_of(-8).unwrap();
            let (a, c) = (BasisState::ALL[i / 6], BasisState::ALL[i % 6]);
            h.counts[b] = (n * projector_probability(rho, a, c)).round() as u64;
            h.basis_label = [a.label() as u8, c.label() as u8];
            h.duration_s = 1.0;
            h
        });
        assemble_dataset(hs).unwrap()
    }

    fn run(k: usize, rate: impl Fn(f64) -> f64) -> Vec<RunIteration> {
        let ds = dataset(&bell_state(BellState::PhiPlus), 1e4);
        (0..k)
            .map(|i| {
                let t = i as f64 * 10.0;
                let pts = |f: f64| {
                    (0..10)
                        .map(|w| RatePoint {
                            t_center_s: t + w as f64 + 0.5,
                            rate_hz: f * rate(t + w as f64 + 0.5),
                        })
                        .collect::<Vec<_>>()
                };
                RunIteration {
                    t_start_s: t,
                    dataset: ds.clone(),
                    rates_xx: pts(0.5),
                    rates_x: pts(0.5),
                }
            })
            .collect()
    }

    fn opts() -> StabilityOptions {
        StabilityOptions {
            tau_window_ps: (-16, 0),
            tomo: TomoOptions {
                background: Background::None,
                ..TomoOptions::default()
            },
            ..StabilityOptions::default()
        }
    }

    #[test]
    fn flat_run() {
        let r = stability_report(&run(6, |_| 7e5), &opts()).unwrap();
        assert_eq!(r.negativity_series.len(), 3);
        assert_eq!(r.rate_series_combined.len(), 60);
        assert!((r.mean_rate - 7e5).abs() < 1e-6);
        assert_eq!(r.fluctuation, 0.0);
        assert!(r.min_2n > 0.999);
        assert_eq!(r.negativity_series[1].first_iteration, 2);
        assert_eq!(r.negativity_series[1].t_s, 25.0);
    }

    #[test]
    fn sinusoidal_rate_fluctuation() {
        // ±10 % modulation sampled densely: (max − min)/mean → 0.2, rms → 0.1/√2
        let rate = |t: f64| 7e5 * (1.0 + 0.1 * (2.0 * std::f64::consts::PI * t / 60.0).sin());
        let r = stability_report(&run(24, rate), &opts()).unwrap();
        assert!((r.fluctuation - 0.2).abs() < 0.005, "{}", r.fluctuation);
        assert!((r.fluctuation_rms - 0.1 / 2f64.sqrt()).abs() < 0.003);
        assert!(r.fluctuation >= 0.0);
    }

    #[test]
    fn too_few_iterations() {
        assert!(stability_report(&run(1, |_| 1.0), &opts()).is_err());
        let mut bad = run(2, |_| 1.0);
        bad[1].rates_x.pop();
        assert!(stability_report(&bad, &opts()).is_err());
    }
}
