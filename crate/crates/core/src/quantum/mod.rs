//! Two-qubit polarization states of an XX/X photon pair.
//!
//! Every 4×4 matrix here is written in the product basis
//! `{|HH⟩, |HV⟩, |VH⟩, |VV⟩}`, first slot = biexciton (XX) photon,
//! second slot = exciton (X) photon.

mod cascade;
pub mod jones;

pub use cascade::{
    ideal_cascade_state, jitter_averaged_state, model_negativity_curve, CascadeModelParams,
    HBAR_EV_S, FWHM_TO_SIGMA,
};

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Ket2 = Vector2<C64>;
pub type Ket4 = Vector4<C64>;

pub const HH: usize = 0;
pub const HV: usize = 1;
pub const VH: usize = 2;
pub const VV: usize = 3;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as roundoff and clamped.
const PSD_CLAMP: f64 = 1e-9;

/// Single-photon projection state used in the six-basis tomography.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BasisState {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl BasisState {
    /// Tomography ordering: linear, diagonal, circular.
    pub const ALL: [BasisState; 6] = [
        BasisState::H,
        BasisState::V,
        BasisState::D,
        BasisState::A,
        BasisState::R,
        BasisState::L,
    ];

    pub fn ket(self) -> Ket2 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (h, v) = match self {
            BasisState::H => (C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
            BasisState::V => (C64::new(0.0, 0.0), C64::new(1.0, 0.0)),
            BasisState::D => (C64::new(s, 0.0), C64::new(s, 0.0)),
            BasisState::A => (C64::new(s, 0.0), C64::new(-s, 0.0)),
            BasisState::R => (C64::new(s, 0.0), C64::new(0.0, s)),
            BasisState::L => (C64::new(s, 0.0), C64::new(0.0, -s)),
        };
        Ket2::new(h, v)
    }

    /// The other output port of the same measurement basis.
    pub fn orthogonal(self) -> BasisState {
        match self {
            BasisState::H => BasisState::V,
            BasisState::V => BasisState::H,
            BasisState::D => BasisState::A,
            BasisState::A => BasisState::D,
            BasisState::R => BasisState::L,
            BasisState::L => BasisState::R,
        }
    }

    pub fn label(self) -> char {
        match self {
            BasisState::H => 'H',
            BasisState::V => 'V',
            BasisState::D => 'D',
            BasisState::A => 'A',
            BasisState::R => 'R',
            BasisState::L => 'L',
        }
    }

    pub fn from_label(c: char) -> Option<BasisState> {
        match c.to_ascii_uppercase() {
            'H' => Some(BasisState::H),
            'V' => Some(BasisState::V),
            'D' => Some(BasisState::D),
            'A' => Some(BasisState::A),
            'R' => Some(BasisState::R),
            'L' => Some(BasisState::L),
            _ => None,
        }
    }

    /// Position in [`BasisState::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Two-photon product ket `|a⟩ ⊗ |b⟩`.
pub fn product_ket(a: &Ket2, b: &Ket2) -> Ket4 {
    Ket4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BellState {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    First,
    Second,
}

/// Hermitian, unit-trace, positive semidefinite 4×4 matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(Matrix4<C64>);

impl DensityMatrix {
    /// Validates `m`. Eigenvalues just below zero (≥ −1e−9) are clamped and
    /// the result renormalized; anything more negative is rejected.
    pub fn new(m: Matrix4<C64>) -> Result<Self> {
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        for i in 0..4 {
            for j in 0..4 {
                let d = (m[(i, j)] - m[(j, i)].conj()).norm();
                if d > HERMITIAN_TOL {
                    return Err(Error::InvalidState(format!(
                        "not Hermitian at ({i},{j}): deviation {d:e}"
                    )));
                }
            }
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let herm = hermitian_part(&m);
        let eig = SymmetricEigen::new(herm);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -PSD_CLAMP {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min:e}"
            )));
        }
        if min < 0.0 {
            let clamped = eig.eigenvalues.map(|l| C64::new(l.max(0.0), 0.0));
            let v = &eig.eigenvectors;
            let rebuilt = v * Matrix4::from_diagonal(&clamped) * v.adjoint();
            let tr = rebuilt.trace().re;
            return Ok(DensityMatrix(hermitian_part(&(rebuilt / C64::new(tr, 0.0)))));
        }
        Ok(DensityMatrix(herm))
    }

    /// Trusted constructor for matrices that are PSD by construction.
    pub(crate) fn from_psd_unchecked(m: Matrix4<C64>) -> Self {
        let h = hermitian_part(&m);
        let tr = h.trace().re;
        DensityMatrix(h / C64::new(tr, 0.0))
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) nonzero ket.
    pub fn from_ket(ket: &Ket4) -> Self {
        let n = ket.norm();
        let k = ket / C64::new(n, 0.0);
        DensityMatrix(hermitian_part(&(k * k.adjoint())))
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(Matrix4::identity() * C64::new(0.25, 0.0))
    }

    pub fn product(a: BasisState, b: BasisState) -> Self {
        Self::from_ket(&product_ket(&a.ket(), &b.ket()))
    }

    /// `p·|φ+⟩⟨φ+| + (1−p)·I/4`.
    pub fn werner(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("Werner weight {p} outside [0,1]")));
        }
        let bell = bell_state(BellState::PhiPlus);
        let mixed = Self::maximally_mixed();
        Ok(DensityMatrix(
            bell.0 * C64::new(p, 0.0) + mixed.0 * C64::new(1.0 - p, 0.0),
        ))
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.0
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    /// `tr ρ²`.
    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> [f64; 4] {
        sorted_eigenvalues(&self.0)
    }

    /// `(U ⊗ V) ρ (U ⊗ V)†`.
    pub fn local_unitary(&self, u: &Matrix2<C64>, v: &Matrix2<C64>) -> Self {
        let uv = u.kronecker(v);
        DensityMatrix(hermitian_part(&(uv * self.0 * uv.adjoint())))
    }

    pub fn negativity_2n(&self) -> f64 {
        negativity_2n(self)
    }
}

fn hermitian_part(m: &Matrix4<C64>) -> Matrix4<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

fn sorted_eigenvalues(m: &Matrix4<C64>) -> [f64; 4] {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut out = [0.0; 4];
    out.copy_from_slice(eig.eigenvalues.as_slice());
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

pub fn bell_state(kind: BellState) -> DensityMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    let p = C64::new(s, 0.0);
    let ket = match kind {
        BellState::PhiPlus => Ket4::new(p, z, z, p),
        BellState::PhiMinus => Ket4::new(p, z, z, -p),
        BellState::PsiPlus => Ket4::new(z, p, p, z),
        BellState::PsiMinus => Ket4::new(z, p, -p, z),
    };
    DensityMatrix::from_ket(&ket)
}

/// Transposes the indices of one photon. The result is Hermitian with unit
/// trace but need not be positive.
pub fn partial_transpose(rho: &DensityMatrix, subsystem: Subsystem) -> Matrix4<C64> {
    let m = rho.matrix();
    Matrix4::from_fn(|row, col| {
        let (a, b) = (row / 2, row % 2);
        let (ap, bp) = (col / 2, col % 2);
        match subsystem {
            Subsystem::Second => m[(2 * a + bp, 2 * ap + b)],
            Subsystem::First => m[(2 * ap + b, 2 * a + bp)],
        }
    })
}

/// Eigenvalues of the partial transpose, ascending.
pub fn partial_transpose_spectrum(rho: &DensityMatrix) -> [f64; 4] {
    sorted_eigenvalues(&partial_transpose(rho, Subsystem::Second))
}

/// `2n = 2·Σ|λ⁻|` over the negative eigenvalues of `ρ^{T_B}`.
pub fn negativity_2n(rho: &DensityMatrix) -> f64 {
    let neg: f64 = partial_transpose_spectrum(rho)
        .iter()
        .filter(|&&l| l < 0.0)
        .map(|l| -l)
        .sum();
    (2.0 * neg).clamp(0.0, 1.0)
}

/// `⟨φ|ρ|φ⟩` for a pure target `|φ⟩⟨φ|`.
pub fn fidelity_to(rho: &DensityMatrix, target: &DensityMatrix) -> Result<f64> {
    let purity = target.purity();
    if (purity - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "fidelity target must be pure, tr(σ²) = {purity}"
        )));
    }
    Ok((rho.matrix() * target.matrix()).trace().re.clamp(0.0, 1.0))
}

/// `⟨b_xx b_x|ρ|b_xx b_x⟩`.
pub fn projector_probability(rho: &DensityMatrix, basis_xx: BasisState, basis_x: BasisState) -> f64 {
    ket_probability(rho, &product_ket(&basis_xx.ket(), &basis_x.ket()))
}

pub(crate) fn ket_probability(rho: &DensityMatrix, ket: &Ket4) -> f64 {
    let v = rho.matrix() * ket;
    ket.dotc(&v).re.clamp(0.0, 1.0)
}
