//! Fits and derived figures of merit: exciton lifetime, fine-structure
//! splitting, Rabi π-pulse power, T1-weighted negativity and the long-run
//! stability report.

pub mod lm;
mod stability;

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

pub use stability::{stability_report, GroupNegativity, RunIteration, StabilityOptions, StabilityReport};

use crate::correlator::CoincidenceHistogram;
use crate::error::{Error, Result};
use crate::quantum::FWHM_TO_SIGMA;
use lm::{LmOptions, LmProblem};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub params: BTreeMap<String, f64>,
    pub sigmas: BTreeMap<String, f64>,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Model evaluated at the input abscissae.
    pub model_curve: Vec<(f64, f64)>,
    /// Non-fatal diagnostics (e.g. an ill-determined phase).
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.sigmas[name]
    }
}

fn named(names: &[&str], values: &[f64]) -> BTreeMap<String, f64> {
    names.iter().map(|n| n.to_string()).zip(values.iter().copied()).collect()
}

/// `exp(z²)·erfc(z)` without overflow for large `z`.
fn erfcx(z: f64) -> f64 {
    if z < 5.0 {
        return (z * z).exp() * libm::erfc(z);
    }
    // erfc(z) = e^{−z²}/√π · 1/(z + ½/(z + 1/(z + 3⁄2/(z + …))))
    let mut frac = z;
    for k in (1..=60).rev() {
        frac = z + (k as f64 / 2.0) / frac;
    }
    1.0 / (frac * PI.sqrt())
}

/// Unit-area exponentially modified Gaussian: an exponential with time
/// constant `t1` starting at `x = 0`, convolved with a Gaussian of width
/// `sigma`. `sigma = 0` gives the bare one-sided exponential.
pub fn emg(x: f64, t1: f64, sigma: f64) -> f64 {
    let lam = 1.0 / t1;
    if sigma <= 0.0 {
        return if x >= 0.0 { lam * (-lam * x).exp() } else { 0.0 };
    }
    let z = (lam * sigma * sigma - x) / (SQRT_2 * sigma);
    if z > 0.0 {
        // exp(a)·erfc(z) with a − z² = −x²/2σ²
        0.5 * lam * (-x * x / (2.0 * sigma * sigma)).exp() * erfcx(z)
    } else {
        0.5 * lam * (0.5 * lam * lam * sigma * sigma - lam * x).exp() * libm::erfc(z)
    }
}

/// Fits `A·EMG(t0 − δτ; T1, σ) + B` to the histogram bins inside `fit_range`
/// (δτ, ps) with Poisson weights; σ is fixed from `jitter_fwhm_ps`.
/// The decay tail lies toward negative δτ (`δτ = t_XX − t_X`).
pub fn fit_lifetime(hist: &CoincidenceHistogram, jitter_fwhm_ps: f64, fit_range: (f64, f64)) -> Result<FitResult> {
    let (lo, hi) = fit_range;
    if !(lo < hi) || !(jitter_fwhm_ps >= 0.0) {
        return Err(Error::invalid("fit range must be non-empty and jitter non-negative"));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = (0..hist.num_bins())
        .map(|b| (hist.bin_center(b), hist.counts[b] as f64))
        .filter(|(c, _)| *c >= lo && *c < hi)
        .unzip();
    if y.iter().filter(|&&v| v > 0.0).count() < 20 {
        return Err(Error::invalid("lifetime fit needs at least 20 nonzero bins in range"));
    }
    let sigma = jitter_fwhm_ps * FWHM_TO_SIGMA;
    let variance: Vec<f64> = y.iter().map(|&c| c.max(1.0)).collect();
    let model = move |p: &[f64], d: f64| p[0] * emg(p[3] - d, p[2], sigma) + p[1];

    // starting point: floor from the quietest bins, peak position, 1/e width
    let peak = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let b0 = sorted[..(sorted.len() / 10).max(1)].iter().sum::<f64>() / (sorted.len() / 10).max(1) as f64;
    let height = (y[peak] - b0).max(1.0);
    let tail = (0..peak).rev().find(|&i| y[i] - b0 < height / std::f64::consts::E);
    let t1_0 = tail.map_or(100.0, |i| (x[peak] - x[i]).max(10.0));
    let t0_0 = x[peak];
    let shape_peak = (0..200)
        .map(|k| emg(k as f64 * t1_0 / 50.0 - 2.0 * sigma, t1_0, sigma))
        .fold(0.0, f64::max);
    let a0 = height / shape_peak.max(1e-12);

    let problem = LmProblem {
        x: &x,
        y: &y,
        variance: Some(&variance),
        model: &model,
        lower: vec![0.0, 0.0, 1e-3, f64::NEG_INFINITY],
    };
    let out = problem.solve(&[a0, b0, t1_0, t0_0], &LmOptions::default());
    let names = ["A", "B", "T1", "t0"];
    let sigmas: Vec<f64> = (0..4).map(|k| out.sigma(k)).collect();
    let mut flags = Vec::new();
    if !out.converged {
        flags.push(format!("iteration limit reached ({} iterations)", out.iterations));
    }
    Ok(FitResult {
        model_curve: x.iter().map(|&d| (d, model(&out.params, d))).collect(),
        params: named(&names, &out.params),
        sigmas: named(&names, &sigmas),
        reduced_chi2: out.reduced_chi2(),
        converged: out.converged,
        iterations: out.iterations,
        flags,
    })
}

/// `E(θ) = E0 + (Δ/2)·cos(4θ + φ)` by linear least squares on
/// `E0 + a·cos 4θ + b·sin 4θ` (exact for this model); `Δ = 2√(a² + b²)`
/// with its σ from the delta method.
pub fn fit_fss(samples: &[(f64, f64)]) -> Result<FitResult> {
    if samples.len() < 8 {
        return Err(Error::invalid("FSS fit needs at least 8 samples"));
    }
    let (tmin, tmax) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.0), b.max(s.0)));
    if tmax - tmin < 90.0 {
        return Err(Error::invalid("FSS samples must span at least 90° of HWP angle"));
    }
    let basis = |theta: f64| {
        let w = 4.0 * theta.to_radians();
        Vector3::new(1.0, w.cos(), w.sin())
    };
    let mut xtx = Matrix3::zeros();
    let mut xty = Vector3::zeros();
    for &(t, e) in samples {
        let v = basis(t);
        xtx += v * v.transpose();
        xty += v * e;
    }
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::invalid("FSS design matrix is singular (angles too clustered)"))?;
    let c = inv * xty;
    let rss: f64 = samples.iter().map(|&(t, e)| (e - basis(t).dot(&c)).powi(2)).sum();
    let dof = samples.len() - 3;
    let s2 = rss / dof as f64;
    let cov = inv * s2;
    let (e0, a, b) = (c[0], c[1], c[2]);
    let r = a.hypot(b);
    let delta = 2.0 * r;
    let sigma_delta = if r > 0.0 {
        2.0 * ((a * a * cov[(1, 1)] + b * b * cov[(2, 2)] + 2.0 * a * b * cov[(1, 2)]) / (r * r)).sqrt()
    } else {
        2.0 * (0.5 * (cov[(1, 1)] + cov[(2, 2)])).sqrt()
    };
    let phi = (-b).atan2(a);
    let sigma_phi = if r > 0.0 {
        ((b * b * cov[(1, 1)] + a * a * cov[(2, 2)] - 2.0 * a * b * cov[(1, 2)]) / r.powi(4)).sqrt()
    } else {
        f64::INFINITY
    };
    let mut flags = Vec::new();
    if !(delta > 3.0 * sigma_delta) {
        flags.push("ambiguous phase: splitting below 3 sigma".to_string());
    }
    let model = |t: f64| e0 + 0.5 * delta * (4.0 * t.to_radians() + phi).cos();
    let names = ["E0", "delta_fss", "phase"];
    Ok(FitResult {
        params: named(&names, &[e0, delta, phi]),
        sigmas: named(&names, &[cov[(0, 0)].sqrt(), sigma_delta, sigma_phi]),
        reduced_chi2: s2,
        converged: true,
        iterations: 1,
        model_curve: samples.iter().map(|&(t, _)| (t, model(t))).collect(),
        flags,
    })
}

/// `A·sin²((π/2)√(P/P_π))·exp(−γ√(P/P_π)) + C`.
pub fn rabi_model(p: &[f64], power: f64) -> f64 {
    let s = (power.max(0.0) / p[1]).sqrt();
    p[0] * (FRAC_PI_2 * s).sin().powi(2) * (-p[2] * s).exp() + p[3]
}

/// Damped-Rabi fit (unweighted LM, `γ ≥ 0`). The P_π start is the first
/// local maximum of the 3-point smoothed scan.
pub fn fit_rabi(samples: &[(f64, f64)]) -> Result<FitResult> {
    if samples.len() < 6 {
        return Err(Error::invalid("Rabi fit needs at least 6 samples"));
    }
    let mut pts = samples.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.iter().any(|p| !(p.0 >= 0.0) || !p.1.is_finite()) {
        return Err(Error::invalid("powers must be non-negative and counts finite"));
    }
    let n = pts.len();
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            pts[lo..=hi].iter().map(|p| p.1).sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let first_max = (1..n - 1)
        .find(|&i| smooth[i] >= smooth[i - 1] && smooth[i] > smooth[i + 1])
        .ok_or_else(|| Error::Fit("no interior maximum in the Rabi scan".into()))?;
    let pi0 = pts[first_max].0;
    if pi0 <= 0.0 {
        return Err(Error::Fit("first maximum at zero power".into()));
    }
    let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let c0 = ymin;
    let a0 = (smooth[first_max] - c0).max(f64::MIN_POSITIVE);

    let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let problem = LmProblem {
        x: &x,
        y: &y,
        variance: None,
        model: &rabi_model,
        lower: vec![f64::NEG_INFINITY, 1e-9, 0.0, f64::NEG_INFINITY],
    };
    let out = problem.solve(&[a0, pi0, 0.0, c0], &LmOptions::default());
    let names = ["A", "P_pi", "gamma", "C"];
    let sigmas: Vec<f64> = (0..4).map(|k| out.sigma(k)).collect();
    let mut flags = Vec::new();
    if !out.converged {
        flags.push(format!("iteration limit reached ({} iterations)", out.iterations));
    }
    Ok(FitResult {
        model_curve: x.iter().map(|&p| (p, rabi_model(&out.params, p))).collect(),
        params: named(&names, &out.params),
        sigmas: named(&names, &sigmas),
        reduced_chi2: out.reduced_chi2(),
        converged: out.converged,
        iterations: out.iterations,
        flags,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NegativityPoint {
    /// Emission delay τ of the bin center, ps.
    pub tau_ps: f64,
    pub two_n: f64,
    /// Coincidence counts in the bin (the weight).
    pub counts: f64,
    pub sigma: Option<f64>,
}

/// Count-weighted mean of 2n over bins with `τ ∈ [0, t1]`, with the σ of the
/// weighted mean (zero when no bin carries a σ).
pub fn t1_weighted_negativity(series: &[NegativityPoint], t1_ps: f64) -> Result<(f64, f64)> {
    let window: Vec<&NegativityPoint> = series
        .iter()
        .filter(|p| p.tau_ps >= 0.0 && p.tau_ps <= t1_ps && p.counts > 0.0)
        .collect();
    let wsum: f64 = window.iter().map(|p| p.counts).sum();
    if window.is_empty() || !(wsum > 0.0) {
        return Err(Error::invalid(format!("no weighted bins in [0, {t1_ps}] ps")));
    }
    let value = window.iter().map(|p| p.counts * p.two_n).sum::<f64>() / wsum;
    let var: f64 = window.iter().map(|p| (p.counts * p.sigma.unwrap_or(0.0)).powi(2)).sum();
    Ok((value, var.sqrt() / wsum))
}
