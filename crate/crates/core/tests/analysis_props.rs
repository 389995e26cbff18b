use proptest::prelude::*;
use qdpair::analysis::{emg, fit_fss, fit_lifetime, fit_rabi, rabi_model, t1_weighted_negativity, NegativityPoint};
use qdpair::correlator::CoincidenceHistogram;
use qdpair::quantum::{projector_probability, BasisState, DensityMatrix, C64};
use qdpair::tomography::{reconstruct_counts, TomoOptions};
use nalgebra::Matrix4;

fn fss_samples(delta: f64, phase: f64, offset: f64) -> Vec<(f64, f64)> {
    (0..36)
        .map(|k| {
            let th = k as f64 * 5.0;
            (th, offset + 0.5 * delta * (4.0 * th.to_radians() + phase).cos())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fss_recovers_noiseless_splitting(delta in 0.1..10.0f64, phase in -3.1..3.1f64, offset in -50.0..50.0f64) {
        let f = fit_fss(&fss_samples(delta, phase, offset)).unwrap();
        prop_assert!((f.param("delta_fss") - delta).abs() < 1e-9 * delta.max(1.0));
        prop_assert!((f.param("E0") - offset).abs() < 1e-9 * offset.abs().max(1.0));
    }

    #[test]
    fn fss_ignores_offset_and_45_degree_shift(delta in 0.1..10.0f64, phase in -3.1..3.1f64, offset in -50.0..50.0f64) {
        let base = fit_fss(&fss_samples(delta, phase, 0.0)).unwrap().param("delta_fss");
        let moved = fit_fss(&fss_samples(delta, phase, offset)).unwrap().param("delta_fss");
        let shifted: Vec<_> = fss_samples(delta, phase, 0.0).into_iter().map(|(t, e)| (t + 45.0, e)).collect();
        prop_assert!((base - moved).abs() < 1e-9);
        prop_assert!((base - fit_fss(&shifted).unwrap().param("delta_fss")).abs() < 1e-9);
    }

    #[test]
    fn rabi_pi_power_is_amplitude_invariant(scale in 0.01..100.0f64) {
        let truth = [1000.0, 9.0, 0.1, 20.0];
        let samples: Vec<_> = (0..=60).map(|k| {
            let p = k as f64 * 0.5;
            (p, scale * rabi_model(&truth, p))
        }).collect();
        let f = fit_rabi(&samples).unwrap();
        prop_assert!((f.param("P_pi") - 9.0).abs() < 1e-4);
        prop_assert!((f.param("A") / scale - 1000.0).abs() < 1e-2);
    }

    #[test]
    fn t1_weighted_mean_is_a_convex_combination(values in prop::collection::vec((0.0..1.0f64, 1.0..1e4f64), 1..40)) {
        let series: Vec<_> = values.iter().enumerate().map(|(i, &(v, c))| NegativityPoint {
            tau_ps: i as f64 * 4.0,
            two_n: v,
            counts: c,
            sigma: None,
        }).collect();
        let (w, s) = t1_weighted_negativity(&series, 1e6).unwrap();
        let lo = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
        let hi = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(w >= lo - 1e-12 && w <= hi + 1e-12);
        prop_assert_eq!(s, 0.0);
    }
}

#[test]
fn lifetime_fit_is_shift_invariant() {
    // noiseless EMG histogram; moving it along δτ moves only t0
    let make = |shift: i64| {
        let mut h = CoincidenceHistogram::with_range(8, -2000, 1000);
        for k in 0..h.num_bins() {
            let x = h.bin_center(k);
            h.counts[k] = (2e5 * 8.0 * emg(shift as f64 - x, 162.0, 21.2) + 3.0).round() as u64;
        }
        h
    };
    let a = fit_lifetime(&make(0), 50.0, (-1500.0, 300.0)).unwrap();
    let b = fit_lifetime(&make(-96), 50.0, (-1596.0, 204.0)).unwrap();
    assert!((a.param("T1") - 162.0).abs() < 0.5, "{}", a.param("T1"));
    assert!((a.param("T1") - b.param("T1")).abs() < 1e-3);
    assert!((a.param("t0") - b.param("t0") - 96.0).abs() < 1e-3);
}

#[test]
fn tomography_recovers_random_states_from_expected_counts() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let a = Matrix4::from_fn(|_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let m = a * a.adjoint();
        let tr = m.trace().re;
        let rho = DensityMatrix::new(m / C64::new(tr, 0.0)).unwrap();
        let mut counts = [0.0; 36];
        for (i, c) in counts.iter_mut().enumerate() {
            *c = 1e5 * projector_probability(&rho, BasisState::ALL[i / 6], BasisState::ALL[i % 6]);
        }
        let r = reconstruct_counts(&counts, (0, 8), &TomoOptions::default()).unwrap();
        assert!(r.converged);
        let dev = (r.rho.matrix() - rho.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(dev < 1e-3, "max |Δρ| {dev}");
        assert!((r.negativity_2n - rho.negativity_2n()).abs() < 1e-3);
    }
}
