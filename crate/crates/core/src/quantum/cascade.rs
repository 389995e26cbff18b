//! Cascade state model with fine-structure precession and the detector-jitter
//! averaged states used for the theory curves.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use super::{negativity_2n, DensityMatrix, Ket4, C64, HH, VV};
use crate::error::{Error, Result};

/// Reduced Planck constant in eV·s.
pub const HBAR_EV_S: f64 = 6.582119569e-16;

/// `σ = FWHM · FWHM_TO_SIGMA` for a Gaussian (1 / 2√(2 ln 2)).
pub const FWHM_TO_SIGMA: f64 = 0.424_660_900_144_009_5;

/// Largest quadrature step for the jitter average, in ps.
const MAX_STEP_PS: f64 = 1.0;
/// Half-width of the jitter kernel support, in σ.
const KERNEL_SIGMAS: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeModelParams {
    /// Fine-structure splitting S in µeV.
    pub fss_energy_uev: f64,
    /// Exciton lifetime in ps.
    pub t1_x_ps: f64,
    /// Biexciton lifetime in ps.
    pub t1_xx_ps: f64,
    /// FWHM of the two-photon detection jitter on δτ, in ps.
    pub jitter_fwhm_2ph_ps: f64,
    /// Rotation of the lab H/V axes relative to the dot eigenbasis, degrees.
    #[serde(default)]
    pub basis_rotation_deg: f64,
}

impl Default for CascadeModelParams {
    fn default() -> Self {
        CascadeModelParams {
            fss_energy_uev: 2.54,
            t1_x_ps: 162.0,
            t1_xx_ps: 120.0,
            jitter_fwhm_2ph_ps: 50.0,
            basis_rotation_deg: 0.0,
        }
    }
}

impl CascadeModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.fss_energy_uev,
            self.t1_x_ps,
            self.t1_xx_ps,
            self.jitter_fwhm_2ph_ps,
            self.basis_rotation_deg,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("cascade parameters must be finite"));
        }
        if self.t1_x_ps <= 0.0 || self.t1_xx_ps <= 0.0 {
            return Err(Error::invalid("lifetimes must be positive"));
        }
        if self.jitter_fwhm_2ph_ps < 0.0 || self.fss_energy_uev < 0.0 {
            return Err(Error::invalid("jitter and FSS must be non-negative"));
        }
        Ok(())
    }

    /// Precession angular frequency `ω = S/ħ` in rad/ps.
    pub fn omega_rad_per_ps(&self) -> f64 {
        self.fss_energy_uev * 1e-6 / HBAR_EV_S * 1e-12
    }

    /// Full precession period `2πħ/S` in ps (infinite for S = 0).
    pub fn precession_period_ps(&self) -> f64 {
        std::f64::consts::TAU / self.omega_rad_per_ps()
    }

    pub fn jitter_sigma_ps(&self) -> f64 {
        self.jitter_fwhm_2ph_ps * FWHM_TO_SIGMA
    }

    /// Single-photon rotation from the dot eigenbasis to lab H/V, `None` at 0°.
    pub fn lab_rotation(&self) -> Option<Matrix2<C64>> {
        if self.basis_rotation_deg == 0.0 {
            return None;
        }
        let (s, c) = self.basis_rotation_deg.to_radians().sin_cos();
        Some(Matrix2::new(
            C64::new(c, 0.0),
            C64::new(-s, 0.0),
            C64::new(s, 0.0),
            C64::new(c, 0.0),
        ))
    }

    fn to_lab(&self, rho: DensityMatrix) -> DensityMatrix {
        match self.lab_rotation() {
            Some(r) => rho.local_unitary(&r, &r),
            None => rho,
        }
    }
}

/// Cascade state at emission delay `tau = t_X − t_XX` (ps):
/// `(|HH⟩ + e^{iωτ}|VV⟩)/√2`, expressed in the lab frame.
pub fn ideal_cascade_state(tau: f64, params: &CascadeModelParams) -> DensityMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let phase = C64::from_polar(s, params.omega_rad_per_ps() * tau);
    let zero = C64::new(0.0, 0.0);
    let ket = Ket4::new(C64::new(s, 0.0), zero, zero, phase);
    params.to_lab(DensityMatrix::from_ket(&ket))
}

/// State observed at measured delay `tau` once the true emission delay τ′ is
/// blurred by a Gaussian jitter kernel `K` and weighted by the exciton decay
/// `w(τ′) = e^{−τ′/T1}Θ(τ′)`.
///
/// Trapezoid rule over `τ′ ∈ [max(0, τ−6σ), max(0, τ)+6σ]` with step
/// `min(1 ps, σ/8)`. Only the HH–VV coherence is affected; the populations
/// stay at (½, 0, 0, ½). With zero jitter the ideal state is returned.
pub fn jitter_averaged_state(tau: f64, params: &CascadeModelParams) -> Result<DensityMatrix> {
    if !tau.is_finite() {
        return Err(Error::invalid("tau must be finite"));
    }
    params.validate()?;
    let sigma = params.jitter_sigma_ps();
    if sigma == 0.0 {
        return Ok(ideal_cascade_state(tau, params));
    }
    let coherence = averaged_coherence(tau, params, sigma);
    let mut m = nalgebra::Matrix4::<C64>::zeros();
    m[(HH, HH)] = C64::new(0.5, 0.0);
    m[(VV, VV)] = C64::new(0.5, 0.0);
    m[(VV, HH)] = coherence * 0.5;
    m[(HH, VV)] = coherence.conj() * 0.5;
    Ok(params.to_lab(DensityMatrix::from_psd_unchecked(m)))
}

/// `⟨e^{iωτ′}⟩` under the kernel × decay weight.
fn averaged_coherence(tau: f64, params: &CascadeModelParams, sigma: f64) -> C64 {
    let omega = params.omega_rad_per_ps();
    let lo = (tau - KERNEL_SIGMAS * sigma).max(0.0);
    let hi = tau.max(0.0) + KERNEL_SIGMAS * sigma;
    let step_cap = MAX_STEP_PS.min(sigma / 8.0);
    let n = ((hi - lo) / step_cap).ceil().max(1.0) as usize;
    let h = (hi - lo) / n as f64;

    let log_weight = |tp: f64| -(tau - tp).powi(2) / (2.0 * sigma * sigma) - tp / params.t1_x_ps;
    let peak = (0..=n)
        .map(|k| log_weight(lo + k as f64 * h))
        .fold(f64::NEG_INFINITY, f64::max);

    let mut num = C64::new(0.0, 0.0);
    let mut den = 0.0;
    for k in 0..=n {
        let tp = lo + k as f64 * h;
        let end = if k == 0 || k == n { 0.5 } else { 1.0 };
        let w = end * (log_weight(tp) - peak).exp();
        num += C64::from_polar(w, omega * tp);
        den += w;
    }
    num / den
}

/// `(τ, 2n)` pairs of the jitter-limited model on an ascending grid.
pub fn model_negativity_curve(params: &CascadeModelParams, tau_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if tau_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("tau grid must be finite"));
    }
    if tau_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("tau grid must be ascending"));
    }
    tau_grid
        .iter()
        .map(|&tau| Ok((tau, negativity_2n(&jitter_averaged_state(tau, params)?))))
        .collect()
}
