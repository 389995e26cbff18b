//! Levenberg–Marquardt least squares with a central-difference Jacobian and
//! simple lower bounds (parameters are clamped after each step).

use nalgebra::{DMatrix, DVector};

pub struct LmProblem<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    /// Per-point variances; `None` means unweighted.
    pub variance: Option<&'a [f64]>,
    pub model: &'a dyn Fn(&[f64], f64) -> f64,
    pub lower: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop once every `|Δp| ≤ tol·(|p| + 1)`.
    pub rel_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            rel_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// `(JᵀWJ)⁻¹`, scaled by `χ²/dof` for unweighted problems.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl LmOutcome {
    pub fn sigma(&self, k: usize) -> f64 {
        self.covariance[(k, k)].max(0.0).sqrt()
    }

    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            f64::NAN
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

impl LmProblem<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.variance.map_or(1.0, |v| 1.0 / v[i])
    }

    fn chi2(&self, p: &[f64]) -> f64 {
        (0..self.x.len())
            .map(|i| {
                let r = self.y[i] - (self.model)(p, self.x[i]);
                r * r * self.weight(i)
            })
            .sum()
    }

    fn clamp(&self, p: &mut [f64]) {
        for (v, lo) in p.iter_mut().zip(&self.lower) {
            if *v < *lo {
                *v = *lo;
            }
        }
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.x.len();
        let m = p.len();
        let mut j = DMatrix::zeros(n, m);
        let mut pp = p.to_vec();
        for k in 0..m {
            let h = 1e-6 * p[k].abs().max(1.0);
            pp[k] = p[k] + h;
            let up: Vec<f64> = self.x.iter().map(|&x| (self.model)(&pp, x)).collect();
            pp[k] = p[k] - h;
            for i in 0..n {
                j[(i, k)] = (up[i] - (self.model)(&pp, self.x[i])) / (2.0 * h);
            }
            pp[k] = p[k];
        }
        j
    }

    /// `JᵀWJ` and `JᵀW r` at `p`.
    fn normal_equations(&self, p: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let j = self.jacobian(p);
        let n = self.x.len();
        let w = DVector::from_iterator(n, (0..n).map(|i| self.weight(i)));
        let r = DVector::from_iterator(n, (0..n).map(|i| self.y[i] - (self.model)(p, self.x[i])));
        let jw = DMatrix::from_fn(n, p.len(), |i, k| j[(i, k)] * w[i]);
        (jw.transpose() * &j, jw.transpose() * r)
    }

    pub fn solve(&self, start: &[f64], opts: &LmOptions) -> LmOutcome {
        let m = start.len();
        let mut p = start.to_vec();
        self.clamp(&mut p);
        let mut chi2 = self.chi2(&p);
        let mut lambda = 1e-3;
        let mut converged = false;
        let mut it = 0;
        let (mut jtj, mut jtr) = self.normal_equations(&p);
        while it < opts.max_iterations {
            it += 1;
            let mut a = jtj.clone();
            for k in 0..m {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let step = a.lu().solve(&jtr);
            let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) else {
                lambda *= 10.0;
                if lambda > 1e20 {
                    break;
                }
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            self.clamp(&mut trial);
            let c = self.chi2(&trial);
            let small = trial
                .iter()
                .zip(&p)
                .all(|(t, q)| (t - q).abs() <= opts.rel_tolerance * (q.abs() + 1.0));
            if c.is_finite() && c <= chi2 {
                p = trial;
                chi2 = c;
                lambda = (lambda / 10.0).max(1e-15);
                if small {
                    converged = true;
                    break;
                }
                (jtj, jtr) = self.normal_equations(&p);
            } else {
                if small {
                    // even a vanishing step cannot improve: at the minimum
                    converged = true;
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e20 {
                    converged = true;
                    break;
                }
            }
        }
        let (jtj, _) = self.normal_equations(&p);
        let dof = self.x.len().saturating_sub(m);
        let mut covariance = jtj
            .clone()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::from_element(m, m, f64::NAN));
        if self.variance.is_none() && dof > 0 {
            covariance *= chi2 / dof as f64;
        }
        LmOutcome {
            params: p,
            covariance,
            chi2,
            dof,
            iterations: it,
            converged,
        }
    }
}
