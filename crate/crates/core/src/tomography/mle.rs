//! Maximum-likelihood two-qubit state estimation from 36 projection counts.
//!
//! `ρ = T†T / tr(T†T)` with `T` lower triangular (4 real diagonal entries and
//! 6 complex below-diagonal ones — 16 real parameters), so every candidate is
//! a physical state. The Poisson likelihood has the overall scale `N` profiled
//! out analytically:
//!
//! `NLL = Σn − Σ nᵢ ln(n_tot·eᵢqᵢ / Q)`, `qᵢ = ⟨Pᵢ|T†T|Pᵢ⟩`, `Q = Σ eⱼqⱼ`,
//!
//! which is invariant under rescaling `T`; a quadratic penalty on `tr(T†T)`
//! pins the scale. Minimised with BFGS (analytic gradient, Armijo line search)
//! from several starts.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quantum::{product_ket, BasisState, DensityMatrix, Ket4, C64};

pub const N_PARAMS: usize = 16;
/// Below-diagonal entries of `T`, in parameter order.
const OFF_DIAG: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

/// Projection ket of combination `i = 6·xx + x` in [`BasisState::ALL`] order.
pub fn combination_ket(i: usize) -> Ket4 {
    product_ket(&BasisState::ALL[i / 6].ket(), &BasisState::ALL[i % 6].ket())
}

pub fn combination_index(xx: BasisState, x: BasisState) -> usize {
    6 * xx.index() + x.index()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Random starts in addition to the maximally mixed and linear-inversion
    /// starts.
    pub random_starts: usize,
    pub seed: u64,
    /// Convergence: per-iteration decrease of `NLL / n_tot` below this …
    pub nll_tolerance: f64,
    /// … together with a max-norm parameter step below this.
    pub param_tolerance: f64,
}

/// Boundary optima (pure states) are approached with ever-shrinking but
/// never tiny parameter steps; a run of this many iterations whose summed
/// decrease stays under `nll_tolerance` also counts as converged.
const STALL_WINDOW: usize = 20;

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            max_iterations: 5000,
            random_starts: 1,
            seed: 0x5eed,
            nll_tolerance: 1e-9,
            param_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MleFit {
    pub rho: DensityMatrix,
    /// Poisson NLL at the optimum (scale profiled, constant terms dropped).
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
    pub params: [f64; N_PARAMS],
}

impl MleFit {
    pub fn negativity_2n(&self) -> f64 {
        self.rho.negativity_2n()
    }
}

pub fn params_to_t(x: &[f64]) -> Matrix4<C64> {
    let mut t = Matrix4::zeros();
    for d in 0..4 {
        t[(d, d)] = C64::new(x[d], 0.0);
    }
    for (k, &(r, c)) in OFF_DIAG.iter().enumerate() {
        t[(r, c)] = C64::new(x[4 + 2 * k], x[5 + 2 * k]);
    }
    t
}

fn t_to_params(t: &Matrix4<C64>) -> [f64; N_PARAMS] {
    let mut x = [0.0; N_PARAMS];
    for d in 0..4 {
        x[d] = t[(d, d)].re;
    }
    for (k, &(r, c)) in OFF_DIAG.iter().enumerate() {
        x[4 + 2 * k] = t[(r, c)].re;
        x[5 + 2 * k] = t[(r, c)].im;
    }
    x
}

pub fn params_to_rho(x: &[f64]) -> DensityMatrix {
    let t = params_to_t(x);
    let m = t.adjoint() * t;
    let tr = m.trace().re;
    let m = m.unscale(tr);
    DensityMatrix::from_psd_unchecked((m + m.adjoint()) * C64::new(0.5, 0.0))
}

/// Negative log-likelihood problem for one set of 36 counts.
pub struct Likelihood {
    kets: Vec<Ket4>,
    counts: Vec<f64>,
    exposure: Vec<f64>,
    total: f64,
}

impl Likelihood {
    /// `counts` and `exposure` are indexed like [`combination_ket`]. Counts
    /// may be fractional (background-subtracted) but not negative.
    pub fn new(counts: &[f64; 36], exposure: &[f64; 36]) -> Result<Self> {
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::invalid("counts must be finite and non-negative"));
        }
        if exposure.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::invalid("exposures must be positive"));
        }
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("MLE needs at least one nonzero count"));
        }
        Ok(Likelihood {
            kets: (0..36).map(combination_ket).collect(),
            counts: counts.to_vec(),
            exposure: exposure.to_vec(),
            total,
        })
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// `NLL(ρ)` for any state (the profiled scale makes `tr ρ` irrelevant).
    pub fn nll_of(&self, rho: &Matrix4<C64>) -> f64 {
        let q: Vec<f64> = self.kets.iter().map(|k| k.dotc(&(rho * k)).re.max(0.0)).collect();
        self.nll_from_q(&q)
    }

    fn nll_from_q(&self, q: &[f64]) -> f64 {
        let big_q: f64 = q.iter().zip(&self.exposure).map(|(q, e)| q * e).sum();
        if !(big_q > 0.0) {
            return f64::INFINITY;
        }
        let mut nll = self.total;
        for i in 0..36 {
            let n = self.counts[i];
            if n > 0.0 {
                let mu = self.total * self.exposure[i] * q[i] / big_q;
                if !(mu > 0.0) {
                    return f64::INFINITY;
                }
                nll -= n * mu.ln();
            }
        }
        nll
    }

    /// Optimisation objective `NLL/n_tot + (tr T†T − 1)²` and its gradient.
    pub fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let t = params_to_t(x);
        let v: Vec<_> = self.kets.iter().map(|k| t * k).collect();
        let q: Vec<f64> = v.iter().map(|v| v.norm_squared()).collect();
        let tr: f64 = x.iter().map(|p| p * p).sum();
        let pen = (tr - 1.0).powi(2);
        let f = self.nll_from_q(&q) / self.total + pen;
        if let Some(g) = grad {
            if !f.is_finite() {
                g.fill(0.0);
                return f;
            }
            let big_q: f64 = q.iter().zip(&self.exposure).map(|(q, e)| q * e).sum();
            // G = ∂(NLL/n_tot)/∂M for M = T†T
            let mut gm = Matrix4::<C64>::zeros();
            for i in 0..36 {
                let mut w = self.exposure[i] / big_q;
                if self.counts[i] > 0.0 {
                    w -= self.counts[i] / (self.total * q[i]).max(f64::MIN_POSITIVE);
                }
                gm += self.kets[i] * self.kets[i].adjoint() * C64::new(w, 0.0);
            }
            let a = gm * t.adjoint();
            let dpen = 4.0 * (tr - 1.0);
            for d in 0..4 {
                g[d] = 2.0 * a[(d, d)].re + dpen * x[d];
            }
            for (k, &(r, c)) in OFF_DIAG.iter().enumerate() {
                g[4 + 2 * k] = 2.0 * a[(c, r)].re + dpen * x[4 + 2 * k];
                g[5 + 2 * k] = -2.0 * a[(c, r)].im + dpen * x[5 + 2 * k];
            }
        }
        f
    }
}

/// Linear-inversion estimate from per-setting correlation (Stokes)
/// parameters; may be unphysical.
pub fn linear_inversion(counts: &[f64; 36], exposure: &[f64; 36]) -> Matrix4<C64> {
    let pauli = pauli_matrices();
    // basis index → (Pauli index, sign)
    let axis = |b: usize| -> (usize, f64) {
        match BasisState::ALL[b] {
            BasisState::H => (3, 1.0),
            BasisState::V => (3, -1.0),
            BasisState::D => (1, 1.0),
            BasisState::A => (1, -1.0),
            BasisState::R => (2, 1.0),
            BasisState::L => (2, -1.0),
        }
    };
    let mut r = [[0.0f64; 4]; 4];
    let mut marg_n = [[0.0f64; 4]; 2];
    r[0][0] = 1.0;
    for sa in 0..3 {
        for sb in 0..3 {
            let idx = |a: usize, b: usize| 6 * (2 * sa + a) + 2 * sb + b;
            let rate = |a, b| counts[idx(a, b)] / exposure[idx(a, b)];
            let total: f64 = (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).map(|(a, b)| rate(a, b)).sum();
            if total <= 0.0 {
                continue;
            }
            let (j, _) = axis(2 * sa);
            let (k, _) = axis(2 * sb);
            let mut corr = 0.0;
            let mut ma = 0.0;
            let mut mb = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    let p = rate(a, b) / total;
                    let (_, s1) = axis(2 * sa + a);
                    let (_, s2) = axis(2 * sb + b);
                    corr += s1 * s2 * p;
                    ma += s1 * p;
                    mb += s2 * p;
                }
            }
            r[j][k] = corr;
            r[j][0] += ma;
            r[0][k] += mb;
            marg_n[0][j] += 1.0;
            marg_n[1][k] += 1.0;
        }
    }
    for j in 1..4 {
        if marg_n[0][j] > 0.0 {
            r[j][0] /= marg_n[0][j];
        }
        if marg_n[1][j] > 0.0 {
            r[0][j] /= marg_n[1][j];
        }
    }
    let mut rho = Matrix4::zeros();
    for j in 0..4 {
        for k in 0..4 {
            if r[j][k] != 0.0 {
                rho += pauli[j].kronecker(&pauli[k]) * C64::new(0.25 * r[j][k], 0.0);
            }
        }
    }
    rho
}

fn pauli_matrices() -> [Matrix2<C64>; 4] {
    let o = C64::new(0.0, 0.0);
    let l = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    [
        Matrix2::new(l, o, o, l),
        Matrix2::new(o, l, l, o),
        Matrix2::new(o, -i, i, o),
        Matrix2::new(l, o, o, -l),
    ]
}

/// Lower-triangular `T` with `T†T = m` for a Hermitian positive-definite `m`.
///
/// Cholesky of the index-reversed matrix `JmJ = LL†` gives `m = UU†` with
/// `U = JLJ` upper triangular, hence `T = U†`.
fn t_from_positive(m: &Matrix4<C64>) -> Option<Matrix4<C64>> {
    let mut j = Matrix4::<C64>::zeros();
    for k in 0..4 {
        j[(k, 3 - k)] = C64::new(1.0, 0.0);
    }
    let chol = (j * m * j).cholesky()?;
    let l = chol.l();
    Some((j * l * j).adjoint())
}

/// Physical start from a possibly unphysical estimate: negative eigenvalues
/// clamped, slightly mixed for a strictly positive-definite Cholesky.
fn start_from_estimate(est: &Matrix4<C64>) -> Option<[f64; N_PARAMS]> {
    let h = (est + est.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let clamped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let sum: f64 = clamped.iter().sum();
    if !(sum > 0.0) {
        return None;
    }
    let mut m = Matrix4::<C64>::zeros();
    for k in 0..4 {
        let v = eig.eigenvectors.column(k);
        m += v * v.adjoint() * C64::new(clamped[k] / sum, 0.0);
    }
    let m = m * C64::new(0.99, 0.0) + Matrix4::identity() * C64::new(0.0025, 0.0);
    t_from_positive(&m).map(|t| t_to_params(&t))
}

fn maximally_mixed_start() -> [f64; N_PARAMS] {
    let mut x = [0.0; N_PARAMS];
    x[..4].fill(0.5);
    x
}

struct Minimum {
    x: [f64; N_PARAMS],
    f: f64,
    iterations: usize,
    converged: bool,
}

fn bfgs(lik: &Likelihood, start: [f64; N_PARAMS], opts: &MleOptions) -> Minimum {
    let n = N_PARAMS;
    let mut x = DVector::from_row_slice(&start);
    let mut g = DVector::zeros(n);
    let mut f = lik.objective(x.as_slice(), Some(g.as_mut_slice()));
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    let mut it = 0;
    let mut g_new = DVector::zeros(n);
    let mut recent = std::collections::VecDeque::with_capacity(STALL_WINDOW);
    while it < opts.max_iterations {
        it += 1;
        if g.amax() < 1e-13 {
            converged = true;
            break;
        }
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            h.fill_with_identity();
            d = -g.clone();
            slope = g.dot(&d);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &d * step;
            let ft = lik.objective(trial.as_slice(), Some(g_new.as_mut_slice()));
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if h != DMatrix::identity(n, n) {
                h.fill_with_identity();
                continue;
            }
            // no descent possible at machine precision
            converged = g.amax() < 1e-6;
            break;
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let improvement = f - f_new;
        x = x_new;
        f = f_new;
        std::mem::swap(&mut g, &mut g_new);
        if improvement < opts.nll_tolerance && s.amax() < opts.param_tolerance {
            converged = true;
            break;
        }
        if recent.len() == STALL_WINDOW {
            recent.pop_front();
        }
        recent.push_back(improvement);
        if recent.len() == STALL_WINDOW && recent.iter().sum::<f64>() < opts.nll_tolerance {
            converged = true;
            break;
        }
        let sy = s.dot(&y);
        if sy > 1e-14 {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ, expanded
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
    }
    let mut out = [0.0; N_PARAMS];
    out.copy_from_slice(x.as_slice());
    Minimum {
        x: out,
        f,
        iterations: it,
        converged,
    }
}

/// Deterministic multi-start MLE. Starts: maximally mixed, clamped linear
/// inversion, then `random_starts` random `T`. The lowest objective wins;
/// exact ties go to the lexicographically smallest parameter vector.
pub fn mle_fit(counts: &[f64; 36], exposure: &[f64; 36], opts: &MleOptions) -> Result<MleFit> {
    let lik = Likelihood::new(counts, exposure)?;
    let mut starts = vec![maximally_mixed_start()];
    if let Some(s) = start_from_estimate(&linear_inversion(counts, exposure)) {
        starts.push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.random_starts {
        let mut x = [0.0; N_PARAMS];
        for p in x.iter_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        let norm = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        x.iter_mut().for_each(|p| *p /= norm);
        starts.push(x);
    }
    fit_from_starts(&lik, &starts, opts)
}

/// Single-start refit from a known nearby optimum (used for resampling).
pub fn mle_fit_warm(
    counts: &[f64; 36],
    exposure: &[f64; 36],
    start: &[f64; N_PARAMS],
    opts: &MleOptions,
) -> Result<MleFit> {
    let lik = Likelihood::new(counts, exposure)?;
    fit_from_starts(&lik, &[*start], opts)
}

fn fit_from_starts(lik: &Likelihood, starts: &[[f64; N_PARAMS]], opts: &MleOptions) -> Result<MleFit> {
    let mut best: Option<Minimum> = None;
    let mut total_iterations = 0;
    for s in starts {
        let m = bfgs(lik, *s, opts);
        total_iterations += m.iterations;
        let better = match &best {
            None => true,
            Some(b) => m.f < b.f || (m.f == b.f && m.x.partial_cmp(&b.x) == Some(std::cmp::Ordering::Less)),
        };
        if better {
            best = Some(m);
        }
    }
    let best = best.ok_or_else(|| Error::invalid("no MLE starts"))?;
    if !best.f.is_finite() {
        return Err(Error::Fit("likelihood is not finite at any start".into()));
    }
    let rho = params_to_rho(&best.x);
    let nll = lik.nll_of(rho.matrix());
    Ok(MleFit {
        rho,
        nll,
        iterations: total_iterations,
        converged: best.converged,
        params: best.x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{bell_state, fidelity_to, projector_probability, BellState};
    use rand_distr::{Distribution, Poisson};

    fn expectations(rho: &DensityMatrix, n: f64) -> [f64; 36] {
        let mut c = [0.0; 36];
        for (i, v) in c.iter_mut().enumerate() {
            *v = n * projector_probability(rho, BasisState::ALL[i / 6], BasisState::ALL[i % 6]);
        }
        c
    }

    const ONES: [f64; 36] = [1.0; 36];

    #[test]
    fn gradient_matches_finite_differences() {
        let counts = expectations(&DensityMatrix::werner(0.7).unwrap(), 1e3);
        let mut counts = counts;
        counts[5] += 17.0;
        let lik = Likelihood::new(&counts, &ONES).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let x: Vec<f64> = (0..N_PARAMS).map(|_| rng.random_range(-0.6..0.6)).collect();
            let mut g = vec![0.0; N_PARAMS];
            lik.objective(&x, Some(&mut g));
            for k in 0..N_PARAMS {
                let h = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let num = (lik.objective(&xp, None) - lik.objective(&xm, None)) / (2.0 * h);
                assert!((num - g[k]).abs() < 1e-5 * (1.0 + num.abs()), "param {k}: {num} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn cholesky_start_reproduces_state() {
        let rho = DensityMatrix::werner(0.6).unwrap();
        let t = t_from_positive(rho.matrix()).unwrap();
        for r in 0..4 {
            for c in r + 1..4 {
                assert_eq!(t[(r, c)], C64::new(0.0, 0.0));
            }
        }
        assert!((t.adjoint() * t - rho.matrix()).norm() < 1e-12);
        let back = params_to_rho(&t_to_params(&t));
        assert!((back.matrix() - rho.matrix()).norm() < 1e-12);
    }

    #[test]
    fn linear_inversion_exact_on_expectations() {
        for rho in [bell_state(BellState::PsiMinus), DensityMatrix::werner(0.3).unwrap(), DensityMatrix::product(BasisState::D, BasisState::R)] {
            let est = linear_inversion(&expectations(&rho, 1e4), &ONES);
            assert!((est - rho.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn phi_plus_expectations_recovered() {
        let phi = bell_state(BellState::PhiPlus);
        let counts = expectations(&phi, 1e6);
        let fit = mle_fit(&counts, &ONES, &MleOptions::default()).unwrap();
        assert!(fidelity_to(&fit.rho, &phi).unwrap() >= 0.999);
        assert!(fit.negativity_2n() > 0.999);
        let mixed_nll = Likelihood::new(&counts, &ONES).unwrap().nll_of(DensityMatrix::maximally_mixed().matrix());
        assert!(fit.nll <= mixed_nll);
    }

    #[test]
    fn product_state_is_separable() {
        let counts = expectations(&DensityMatrix::product(BasisState::H, BasisState::H), 1e5);
        let fit = mle_fit(&counts, &ONES, &MleOptions::default()).unwrap();
        assert!(fit.negativity_2n() <= 0.01);
        assert!(fit.rho.entry(0, 0).re > 0.99);
    }

    #[test]
    fn unequal_exposure_is_compensated() {
        let phi = bell_state(BellState::PhiMinus);
        let mut counts = expectations(&phi, 1e5);
        let mut exposure = ONES;
        for i in (0..36).step_by(5) {
            exposure[i] = 2.5;
            counts[i] *= 2.5;
        }
        let fit = mle_fit(&counts, &exposure, &MleOptions::default()).unwrap();
        assert!(fidelity_to(&fit.rho, &phi).unwrap() > 0.999);
    }

    #[test]
    fn deterministic_and_rejects_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi = bell_state(BellState::PhiPlus);
        let mut counts = expectations(&phi, 1e4);
        for c in counts.iter_mut() {
            if *c > 0.0 {
                *c = Poisson::new(*c).unwrap().sample(&mut rng);
            }
        }
        let a = mle_fit(&counts, &ONES, &MleOptions::default()).unwrap();
        let b = mle_fit(&counts, &ONES, &MleOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.converged);
        assert!(mle_fit(&[0.0; 36], &ONES, &MleOptions::default()).is_err());
        let mut neg = counts;
        neg[0] = -1.0;
        assert!(mle_fit(&neg, &ONES, &MleOptions::default()).is_err());
    }

    #[test]
    fn hv_swap_on_both_arms_keeps_negativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rho = DensityMatrix::werner(0.8).unwrap();
        let mut counts = expectations(&rho, 5e3);
        for c in counts.iter_mut() {
            if *c > 0.0 {
                *c = Poisson::new(*c).unwrap().sample(&mut rng);
            }
        }
        // σx on each arm: H↔V, D↔D, A↔A, R↔L
        let swap = |b: usize| match BasisState::ALL[b] {
            BasisState::H => 1,
            BasisState::V => 0,
            BasisState::R => 5,
            BasisState::L => 4,
            _ => b,
        };
        let mut swapped = [0.0; 36];
        for i in 0..36 {
            swapped[6 * swap(i / 6) + swap(i % 6)] = counts[i];
        }
        let a = mle_fit(&counts, &ONES, &MleOptions::default()).unwrap();
        let b = mle_fit(&swapped, &ONES, &MleOptions::default()).unwrap();
        assert!((a.negativity_2n() - b.negativity_2n()).abs() < 1e-6);
        let x = pauli_matrices()[1];
        let rotated = a.rho.local_unitary(&x, &x);
        assert!((rotated.matrix() - b.rho.matrix()).norm() < 1e-4);
    }
}
