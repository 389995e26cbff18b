//! Monte-Carlo time-tag generator for a pulsed biexciton–exciton cascade.
//!
//! Per pulse the biexciton is prepared with probability
//! `sin²((π/2)·√(P/P_π))`; the XX photon leaves after `Exp(T1_XX)`, the X
//! photon `Exp(T1_X)` later. Each arm projects onto its basis state (single
//! PBS port), the joint pass/fail outcome being drawn from the cascade state
//! at the actual emission delay. Passing photons are detected with the arm
//! efficiency and receive Gaussian jitter.
//!
//! Pulses that cannot produce a click are skipped with geometric gaps, so the
//! cost scales with detected events rather than with the pulse count.

use nalgebra::{Matrix2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Geometric, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{product_ket, BasisState, CascadeModelParams, Ket4, C64, FWHM_TO_SIGMA};
use crate::timetag::{StreamHeader, TimeTagRecord, FLAG_DARK};

pub const CH_XX: u16 = 0;
pub const CH_X: u16 = 1;

/// Slow modulation of both detection efficiencies, `η(t) = η·m(t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftProfile {
    #[default]
    None,
    /// `m(t) = 1 + amplitude·sin(2πt/period_s)`.
    Sinusoidal { amplitude: f64, period_s: f64 },
    /// `m(t) = 1 + slope_per_s·t`.
    Linear { slope_per_s: f64 },
}

impl DriftProfile {
    pub fn factor(&self, t_s: f64) -> f64 {
        match *self {
            DriftProfile::None => 1.0,
            DriftProfile::Sinusoidal { amplitude, period_s } => {
                1.0 + amplitude * (std::f64::consts::TAU * t_s / period_s).sin()
            }
            DriftProfile::Linear { slope_per_s } => 1.0 + slope_per_s * t_s,
        }
    }

    /// Bounds of `m(t)` over `[t0, t1]` seconds.
    pub fn range(&self, t0: f64, t1: f64) -> (f64, f64) {
        match *self {
            DriftProfile::None => (1.0, 1.0),
            DriftProfile::Sinusoidal { amplitude, .. } => (1.0 - amplitude, 1.0 + amplitude),
            DriftProfile::Linear { .. } => {
                let (a, b) = (self.factor(t0), self.factor(t1));
                (a.min(b), a.max(b))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DriftProfile::None => Ok(()),
            DriftProfile::Sinusoidal { amplitude, period_s } => {
                if !(0.0..1.0).contains(&amplitude) || !(period_s > 0.0 && period_s.is_finite()) {
                    return Err(Error::invalid(
                        "sinusoidal drift needs amplitude in [0, 1) and a positive period",
                    ));
                }
                Ok(())
            }
            DriftProfile::Linear { slope_per_s } if slope_per_s.is_finite() => Ok(()),
            DriftProfile::Linear { .. } => Err(Error::invalid("linear drift slope must be finite")),
        }
    }
}

fn default_rep_rate() -> f64 {
    1.0
}
fn default_pi_power() -> f64 {
    9.0
}
fn default_efficiency() -> f64 {
    1.0
}
fn default_detector_jitter() -> f64 {
    20.0
}
fn default_electronics_jitter() -> f64 {
    // with two 20 ps detectors this gives 50 ps FWHM on δτ
    29.155
}
fn default_basis() -> BasisState {
    BasisState::H
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Laser clock in GHz.
    #[serde(default = "default_rep_rate")]
    pub rep_rate_ghz: f64,
    pub pulse_count: u64,
    /// Excitation power in µW; defaults to the π-pulse power.
    #[serde(default)]
    pub excitation_power_uw: Option<f64>,
    #[serde(default = "default_pi_power")]
    pub pi_pulse_power_uw: f64,
    #[serde(default)]
    pub cascade: CascadeModelParams,
    #[serde(default = "default_efficiency")]
    pub efficiency_xx: f64,
    #[serde(default = "default_efficiency")]
    pub efficiency_x: f64,
    /// Per-detector jitter FWHM, ps.
    #[serde(default = "default_detector_jitter")]
    pub detector_jitter_fwhm_ps: f64,
    /// Per-channel electronics jitter FWHM, ps; adds in quadrature.
    #[serde(default = "default_electronics_jitter")]
    pub electronics_jitter_fwhm_ps: f64,
    #[serde(default)]
    pub dark_rate_xx_hz: f64,
    #[serde(default)]
    pub dark_rate_x_hz: f64,
    #[serde(default = "default_basis")]
    pub basis_xx: BasisState,
    #[serde(default = "default_basis")]
    pub basis_x: BasisState,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub drift: DriftProfile,
    /// Drift-clock time of the first pulse, s.
    #[serde(default)]
    pub epoch_offset_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rep_rate_ghz: default_rep_rate(),
            pulse_count: 0,
            excitation_power_uw: None,
            pi_pulse_power_uw: default_pi_power(),
            cascade: CascadeModelParams::default(),
            efficiency_xx: 1.0,
            efficiency_x: 1.0,
            detector_jitter_fwhm_ps: default_detector_jitter(),
            electronics_jitter_fwhm_ps: default_electronics_jitter(),
            dark_rate_xx_hz: 0.0,
            dark_rate_x_hz: 0.0,
            basis_xx: BasisState::H,
            basis_x: BasisState::H,
            seed: 0,
            drift: DriftProfile::None,
            epoch_offset_s: 0.0,
        }
    }
}

/// `sin²((π/2)·√(P/P_π))`.
pub fn excitation_probability(power_uw: f64, pi_power_uw: f64) -> f64 {
    let area = std::f64::consts::FRAC_PI_2 * (power_uw / pi_power_uw).max(0.0).sqrt();
    area.sin().powi(2).clamp(0.0, 1.0)
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.cascade.validate()?;
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !pos(self.rep_rate_ghz) {
            return Err(Error::invalid("rep_rate_ghz must be positive"));
        }
        if !pos(self.pi_pulse_power_uw) || !self.excitation_power_uw.map_or(true, nonneg) {
            return Err(Error::invalid("powers must be non-negative, P_pi positive"));
        }
        for (name, e) in [("efficiency_xx", self.efficiency_xx), ("efficiency_x", self.efficiency_x)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        if ![
            self.detector_jitter_fwhm_ps,
            self.electronics_jitter_fwhm_ps,
            self.dark_rate_xx_hz,
            self.dark_rate_x_hz,
        ]
        .into_iter()
        .all(nonneg)
        {
            return Err(Error::invalid("jitters and dark rates must be non-negative"));
        }
        if !self.epoch_offset_s.is_finite() {
            return Err(Error::invalid("epoch_offset_s must be finite"));
        }
        self.drift.validate()?;
        let span = self.duration_ps();
        // headroom for emission delays and jitter past the last pulse
        if !(span < 1.8e19) {
            return Err(Error::TimestampOverflow(format!(
                "{} pulses at {} GHz span {span:.3e} ps",
                self.pulse_count, self.rep_rate_ghz
            )));
        }
        let (lo, hi) = self.drift.range(self.epoch_offset_s, self.epoch_offset_s + span * 1e-12);
        if lo < 0.0 || hi * self.efficiency_xx.max(self.efficiency_x) > 1.0 {
            return Err(Error::invalid(format!(
                "drift takes an efficiency outside [0, 1] (factor range {lo:.3}..{hi:.3})"
            )));
        }
        Ok(())
    }

    pub fn period_ps(&self) -> f64 {
        1e3 / self.rep_rate_ghz
    }

    pub fn duration_ps(&self) -> f64 {
        self.pulse_count as f64 * self.period_ps()
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps() * 1e-12
    }

    pub fn excitation_power(&self) -> f64 {
        self.excitation_power_uw.unwrap_or(self.pi_pulse_power_uw)
    }

    pub fn excitation_probability(&self) -> f64 {
        excitation_probability(self.excitation_power(), self.pi_pulse_power_uw)
    }

    /// Per-channel Gaussian jitter σ in ps.
    pub fn channel_jitter_sigma_ps(&self) -> f64 {
        self.detector_jitter_fwhm_ps.hypot(self.electronics_jitter_fwhm_ps) * FWHM_TO_SIGMA
    }

    /// FWHM of `t_XX − t_X` jitter implied by the two channels.
    pub fn two_photon_jitter_fwhm_ps(&self) -> f64 {
        self.detector_jitter_fwhm_ps.hypot(self.electronics_jitter_fwhm_ps) * std::f64::consts::SQRT_2
    }

    pub fn with_bases(&self, xx: BasisState, x: BasisState) -> Self {
        SimConfig {
            basis_xx: xx,
            basis_x: x,
            ..self.clone()
        }
    }
}

/// One simulated stream plus its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedStream {
    pub basis_xx: BasisState,
    pub basis_x: BasisState,
    pub header: StreamHeader,
    pub records: Vec<TimeTagRecord>,
    /// Nominal run length (pulse count × period), s.
    pub duration_s: f64,
}

/// Measurement kets pulled back into the dot frame: amplitudes of the lab
/// outcome `m` are `⟨m′|ψ_dot⟩` with `m′ = (U†⊗U†)m`.
struct Outcomes {
    // [pass/pass, pass/fail, fail/pass, fail/fail] × (conj HH comp, conj VV comp)
    coeff: [(C64, C64); 4],
}

impl Outcomes {
    fn new(cfg: &SimConfig) -> Self {
        let b_xx = cfg.basis_xx.ket();
        let b_x = cfg.basis_x.ket();
        let o_xx = cfg.basis_xx.orthogonal().ket();
        let o_x = cfg.basis_x.orthogonal().ket();
        let u: Option<Matrix2<C64>> = cfg.cascade.lab_rotation();
        let kets: [Ket4; 4] = [
            product_ket(&b_xx, &b_x),
            product_ket(&b_xx, &o_x),
            product_ket(&o_xx, &b_x),
            product_ket(&o_xx, &o_x),
        ];
        let coeff = kets.map(|k| {
            let k: Vector4<C64> = match &u {
                Some(u) => u.adjoint().kronecker(&u.adjoint()) * k,
                None => k,
            };
            (k[0].conj(), k[3].conj())
        });
        Outcomes { coeff }
    }

    /// Joint probabilities for emission delay `tau` (ps).
    fn probabilities(&self, omega: f64, tau: f64) -> [f64; 4] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let phase = C64::from_polar(s, omega * tau);
        self.coeff.map(|(hh, vv)| (hh * s + vv * phase).norm_sqr())
    }
}

/// Sub-generator for combination / scan point `index`, derived from the
/// master seed via an independent ChaCha stream.
const ITERATION_STREAM_BASE: u64 = 1 << 32;

fn sub_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn simulate_pair_stream(config: &SimConfig) -> Result<SimulatedStream> {
    config.validate()?;
    let mut rng = sub_rng(config.seed, 0);
    generate(config, &mut rng)
}

fn generate(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<SimulatedStream> {
    let period = cfg.period_ps();
    let duration = cfg.duration_ps();
    let t0 = cfg.epoch_offset_s;
    let (_, m_max) = cfg.drift.range(t0, t0 + duration * 1e-12);
    let eta_xx = cfg.efficiency_xx * m_max;
    let eta_x = cfg.efficiency_x * m_max;
    let p_exc = cfg.excitation_probability();
    let armed_any = 1.0 - (1.0 - eta_xx) * (1.0 - eta_x);
    let p_cand = p_exc * armed_any;

    let mut records = Vec::new();
    if p_cand > 0.0 && cfg.pulse_count > 0 {
        let gap = Geometric::new(p_cand).map_err(|e| Error::invalid(e.to_string()))?;
        let exp_xx = Exp::new(1.0 / cfg.cascade.t1_xx_ps).unwrap();
        let exp_x = Exp::new(1.0 / cfg.cascade.t1_x_ps).unwrap();
        let sigma = cfg.channel_jitter_sigma_ps();
        let jitter = Normal::new(0.0, sigma).unwrap();
        let outcomes = Outcomes::new(cfg);
        let omega = cfg.cascade.omega_rad_per_ps();
        let only_xx = eta_xx * (1.0 - eta_x) / armed_any;
        let only_x = (1.0 - eta_xx) * eta_x / armed_any;
        let drifting = !matches!(cfg.drift, DriftProfile::None);
        let stamp = |t: f64, rng: &mut ChaCha8Rng| -> u64 {
            let t = if sigma > 0.0 { t + jitter.sample(rng) } else { t };
            t.round().max(0.0) as u64
        };

        let mut pulse: u64 = 0;
        loop {
            let skip = gap.sample(rng);
            pulse = match pulse.checked_add(skip) {
                Some(p) if p < cfg.pulse_count => p,
                _ => break,
            };
            let t_pulse = pulse as f64 * period;
            pulse += 1;

            let u: f64 = rng.random();
            let (mut armed_xx, mut armed_x) = if u < only_xx {
                (true, false)
            } else if u < only_xx + only_x {
                (false, true)
            } else {
                (true, true)
            };
            if drifting {
                let keep = cfg.drift.factor(t0 + t_pulse * 1e-12) / m_max;
                armed_xx &= rng.random::<f64>() < keep;
                armed_x &= rng.random::<f64>() < keep;
            }
            let t_xx = t_pulse + exp_xx.sample(rng);
            let tau = exp_x.sample(rng);
            let p = outcomes.probabilities(omega, tau);
            let r: f64 = rng.random::<f64>() * (p[0] + p[1] + p[2] + p[3]);
            let (pass_xx, pass_x) = if r < p[0] {
                (true, true)
            } else if r < p[0] + p[1] {
                (true, false)
            } else if r < p[0] + p[1] + p[2] {
                (false, true)
            } else {
                (false, false)
            };
            if armed_xx && pass_xx {
                records.push(TimeTagRecord::new(stamp(t_xx, rng), CH_XX));
            }
            if armed_x && pass_x {
                records.push(TimeTagRecord::new(stamp(t_xx + tau, rng), CH_X));
            }
        }
    }

    for (ch, rate) in [(CH_XX, cfg.dark_rate_xx_hz), (CH_X, cfg.dark_rate_x_hz)] {
        let mean = rate * duration * 1e-12;
        if mean <= 0.0 {
            continue;
        }
        let n = Poisson::new(mean).unwrap().sample(rng) as u64;
        for _ in 0..n {
            let t = (rng.random::<f64>() * duration).floor() as u64;
            records.push(TimeTagRecord {
                timestamp: t,
                channel: ch,
                flags: FLAG_DARK,
            });
        }
    }
    records.sort_unstable();

    let mut header = StreamHeader::new(2).with_basis(cfg.basis_xx, cfg.basis_x);
    header.record_count = records.len() as u64;
    Ok(SimulatedStream {
        basis_xx: cfg.basis_xx,
        basis_x: cfg.basis_x,
        header,
        records,
        duration_s: duration * 1e-12,
    })
}

/// The 36 per-combination configurations of a tomography run, in
/// [`BasisState::ALL`]² order. Each gets its own random stream.
pub fn tomography_configs(config: &SimConfig, seconds_per_combination: f64) -> Result<Vec<SimConfig>> {
    if !(seconds_per_combination >= 0.0 && seconds_per_combination.is_finite()) {
        return Err(Error::invalid("seconds per combination must be non-negative"));
    }
    let pulses = (seconds_per_combination * config.rep_rate_ghz * 1e9).round();
    if pulses > u64::MAX as f64 {
        return Err(Error::TimestampOverflow(format!("{pulses:.3e} pulses")));
    }
    let mut out = Vec::with_capacity(36);
    for xx in BasisState::ALL {
        for x in BasisState::ALL {
            let mut c = config.with_bases(xx, x);
            c.pulse_count = pulses as u64;
            // combinations are recorded one after another
            c.epoch_offset_s = config.epoch_offset_s + out.len() as f64 * seconds_per_combination;
            c.validate()?;
            out.push(c);
        }
    }
    Ok(out)
}

/// Configuration of tomography iteration `iteration` of a long run: an
/// independent seed and a drift clock advanced by `iteration_period_s` per
/// iteration.
pub fn iteration_config(config: &SimConfig, iteration: u64, iteration_period_s: f64) -> SimConfig {
    let mut rng = sub_rng(config.seed, ITERATION_STREAM_BASE + iteration);
    SimConfig {
        seed: rng.random(),
        epoch_offset_s: config.epoch_offset_s + iteration as f64 * iteration_period_s,
        ..config.clone()
    }
}

/// Simulates one stream for combination `index` of a tomography run (the
/// position in [`tomography_configs`]).
pub fn simulate_combination(config: &SimConfig, index: usize) -> Result<SimulatedStream> {
    config.validate()?;
    let mut rng = sub_rng(config.seed, index as u64 + 1);
    generate(config, &mut rng)
}

/// All 36 basis combinations, simulated in parallel. Holds every stream in
/// memory; use [`tomography_configs`] + [`simulate_combination`] to process
/// combinations one at a time.
pub fn simulate_tomography_run(
    config: &SimConfig,
    seconds_per_combination: f64,
) -> Result<Vec<SimulatedStream>> {
    let configs = tomography_configs(config, seconds_per_combination)?;
    configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| simulate_combination(c, i))
        .collect()
}

/// Detected XX-arm counts per power: `Binomial(pulses, p_exc(P)·η_xx)` plus
/// Poisson dark counts over the point's duration.
pub fn simulate_rabi_scan(
    config: &SimConfig,
    powers_uw: &[f64],
    pulses_per_point: u64,
) -> Result<Vec<(f64, u64)>> {
    config.validate()?;
    let dark_mean = config.dark_rate_xx_hz * pulses_per_point as f64 * config.period_ps() * 1e-12;
    powers_uw
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::invalid(format!("power {p} µW is not a valid power")));
            }
            let mut rng = sub_rng(config.seed, 1000 + i as u64);
            let prob = excitation_probability(p, config.pi_pulse_power_uw) * config.efficiency_xx;
            let mut n = Binomial::new(pulses_per_point, prob).unwrap().sample(&mut rng);
            if dark_mean > 0.0 {
                n += Poisson::new(dark_mean).unwrap().sample(&mut rng) as u64;
            }
            Ok((p, n))
        })
        .collect()
}

/// Uniform background rate (Hz, one channel) that makes an auto-correlation
/// with signal probability `signal_per_pulse` show `g²(0) = 1 − purity` when
/// peaks are integrated over a full period.
///
/// With `x` background counts per period, the center peak holds
/// `2sx + x²` and each side peak `(s + x)²` per pulse, so
/// `x = s·(1/√purity − 1)`.
pub fn background_rate_for_purity(signal_per_pulse: f64, purity: f64, rep_rate_ghz: f64) -> Result<f64> {
    if !(purity > 0.0 && purity <= 1.0) || !(signal_per_pulse >= 0.0) || !(rep_rate_ghz > 0.0) {
        return Err(Error::invalid("purity must lie in (0, 1], rates non-negative"));
    }
    Ok(signal_per_pulse * (1.0 / purity.sqrt() - 1.0) * rep_rate_ghz * 1e9)
}

/// Equal arm efficiency giving `target_hz` combined singles (both channels,
/// darks included). Each arm passes its projection half the time for any
/// maximally entangled state.
pub fn efficiency_for_combined_rate(config: &SimConfig, target_hz: f64) -> Result<f64> {
    let signal = target_hz - config.dark_rate_xx_hz - config.dark_rate_x_hz;
    let per_arm = config.rep_rate_ghz * 1e9 * config.excitation_probability() * 0.5;
    let eta = signal / (2.0 * per_arm);
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!(
            "target rate {target_hz} Hz needs efficiency {eta:.4}, outside [0, 1]"
        )));
    }
    Ok(eta)
}
