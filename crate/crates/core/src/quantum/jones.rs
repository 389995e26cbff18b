//! Jones calculus for the polarization-projection units (QWP → HWP → PBS).
//!
//! Conventions: `R(θ) = [[cos θ, sin θ], [−sin θ, cos θ]]` and a retarder with
//! retardance δ and axis θ is `R(θ)·diag(1, e^{iδ})·R(−θ)`. Light passes the
//! quarter-wave plate first, then the half-wave plate, and the PBS transmits H.
//! With these conventions a QWP at 45° turns H into R = (H + iV)/√2.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use super::{BasisState, Ket2, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveplateSetting {
    pub hwp_deg: f64,
    pub qwp_deg: f64,
}

impl WaveplateSetting {
    /// Angles folded into `[0°, 180°)`.
    pub fn new(hwp_deg: f64, qwp_deg: f64) -> Self {
        WaveplateSetting {
            hwp_deg: normalize_angle(hwp_deg),
            qwp_deg: normalize_angle(qwp_deg),
        }
    }

    /// Combined Jones matrix of the unit: HWP · QWP.
    pub fn jones(&self) -> Matrix2<C64> {
        jones_retarder(180.0, self.hwp_deg) * jones_retarder(90.0, self.qwp_deg)
    }

    /// Probability that `ket` exits the PBS transmission (H) port.
    pub fn transmission(&self, ket: &Ket2) -> f64 {
        (self.jones() * ket)[0].norm_sqr()
    }
}

pub fn normalize_angle(deg: f64) -> f64 {
    let a = deg.rem_euclid(180.0);
    if a >= 180.0 {
        0.0
    } else {
        a
    }
}

fn rotation(deg: f64) -> Matrix2<C64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix2::new(
        C64::new(c, 0.0),
        C64::new(s, 0.0),
        C64::new(-s, 0.0),
        C64::new(c, 0.0),
    )
}

/// Linear retarder with `retardance_deg` and fast axis at `axis_deg`.
pub fn jones_retarder(retardance_deg: f64, axis_deg: f64) -> Matrix2<C64> {
    let phase = C64::from_polar(1.0, retardance_deg.to_radians());
    let core = Matrix2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), phase);
    rotation(axis_deg) * core * rotation(-axis_deg)
}

/// Waveplate angles that route `basis` onto the PBS transmission port.
pub fn basis_projection_settings(basis: BasisState) -> WaveplateSetting {
    let (hwp, qwp) = match basis {
        BasisState::H => (0.0, 0.0),
        BasisState::V => (45.0, 0.0),
        BasisState::D => (67.5, 45.0),
        BasisState::A => (22.5, 45.0),
        BasisState::R => (45.0, 45.0),
        BasisState::L => (0.0, 45.0),
    };
    let setting = WaveplateSetting::new(hwp, qwp);
    let p = setting.transmission(&basis.ket());
    assert!(
        p >= 1.0 - 1e-9,
        "waveplate table maps {basis:?} to H with probability {p}"
    );
    setting
}
