use std::f64::consts::TAU;

use hffclock::control::ratio_of_means;
use hffclock::estimator::{
    accuracy_analytic, accuracy_of_coeffs, build_sigma, correlation_condition, paper_coeffs_normalized,
    predictor_coeffs_mmse_ridge, CovarianceBlocks,
};
use hffclock::metrics::{allan_variance_td, sample_variance};
use hffclock::nalgebra::{DMatrix, DVector};
use hffclock::optimize::{nelder_mead, SimplexOptions};
use hffclock::ramsey::MeasurementWindow;
use hffclock::spectra::PowerSpectrum;
use hffclock::xfer::{pair_tf, pair_tf_four_cosine, single_tf};
use proptest::prelude::*;

fn window() -> impl Strategy<Value = MeasurementWindow> {
    (0.0..10.0f64, 0.01..3.0f64).prop_map(|(t, d)| MeasurementWindow::new(t, t + d).unwrap())
}

/// Random symmetric PSD `(n+1) x (n+1)` covariance split into blocks.
fn psd_blocks() -> impl Strategy<Value = CovarianceBlocks> {
    (1usize..5).prop_flat_map(|n| {
        prop::collection::vec(-1.0..1.0f64, (n + 1) * (n + 1)).prop_map(move |a| {
            let a = DMatrix::from_vec(n + 1, n + 1, a);
            let s = &a * a.transpose() + DMatrix::identity(n + 1, n + 1) * 1e-6;
            let m = s.view((0, 0), (n, n)).into_owned();
            let f = s.view((0, n), (n, 1)).column(0).into_owned();
            CovarianceBlocks::new(m, f, s[(n, n)]).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn pair_tf_is_symmetric_and_bounded(omega in 1e-3..1e3f64, a in window(), b in window()) {
        let ab = pair_tf(omega, &a, &b);
        prop_assert_eq!(ab, pair_tf(omega, &b, &a));
        let bound = (single_tf(omega, a.duration()) * single_tf(omega, b.duration())).sqrt();
        prop_assert!(ab.abs() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn factored_pair_matches_four_cosine_kernel(omega in 0.1..100.0f64, a in window(), b in window()) {
        let scale = 1.0 / (omega * omega * a.duration() * b.duration());
        prop_assert!((pair_tf(omega, &a, &b) - pair_tf_four_cosine(omega, &a, &b)).abs() < 1e-9 * scale.max(1.0));
    }

    #[test]
    fn condition_implies_accuracy_above_one(blocks in psd_blocks(), gain in 0.01..2.0f64) {
        if correlation_condition(&blocks, gain) {
            prop_assert!(accuracy_analytic(&blocks, gain).unwrap() > 1.0);
        }
    }

    #[test]
    fn mmse_maximizes_exact_accuracy(blocks in psd_blocks(), dir in prop::collection::vec(-1.0..1.0f64, 4), step in 1e-3..0.5f64) {
        let c = predictor_coeffs_mmse_ridge(&blocks).unwrap().coeffs;
        let best = accuracy_of_coeffs(&blocks, &c);
        let perturbed: Vec<f64> = c.iter().zip(dir.iter().cycle()).map(|(x, d)| x + step * d).collect();
        prop_assert!(accuracy_of_coeffs(&blocks, &perturbed) <= best * (1.0 + 1e-9));
    }

    #[test]
    fn paper_coefficients_are_scale_free(blocks in psd_blocks(), k in 1e-6..1e6f64) {
        let scaled = CovarianceBlocks::new(&blocks.m * k, &blocks.f * k, blocks.sigma_cc * k).unwrap();
        let (a, b) = (paper_coeffs_normalized(&blocks, 1.0), paper_coeffs_normalized(&scaled, 1.0));
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!((&a - &b).norm() <= 1e-9 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn variances_ignore_a_common_offset(samples in prop::collection::vec(-1.0..1.0f64, 2..40), offset in -100.0..100.0f64) {
        let shifted: Vec<f64> = samples.iter().map(|y| y + offset).collect();
        let (s, a) = (sample_variance(&samples).unwrap(), allan_variance_td(&samples).unwrap());
        prop_assert!((sample_variance(&shifted).unwrap() - s).abs() <= 1e-9 * (1.0 + s));
        prop_assert!((allan_variance_td(&shifted).unwrap() - a).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn ratio_of_scaled_values_is_exact(values in prop::collection::vec(0.1..10.0f64, 3..50), k in 0.1..10.0f64) {
        let scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
        let r = ratio_of_means(&scaled, &values).unwrap();
        prop_assert!((r.value - k).abs() < 1e-12 * k);
        prop_assert!(r.std_error < 1e-9 * k);
    }

    #[test]
    fn simplex_finds_quadratic_minimum(center in prop::collection::vec(-5.0..5.0f64, 1..4), scale in 0.1..10.0f64) {
        let c = DVector::from_vec(center.clone());
        let f = |x: &[f64]| scale * (DVector::from_column_slice(x) - &c).norm_squared();
        let r = nelder_mead(f, &vec![0.0; center.len()], &SimplexOptions::default()).unwrap();
        prop_assert!(r.converged);
        for (x, y) in r.argmin.iter().zip(&center) {
            prop_assert!((x - y).abs() < 1e-3);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sigma_from_any_spectrum_is_psd(
        alpha in 0.0..2.0f64,
        cut_decades in 0.0..2.0f64,
        durations in prop::collection::vec((0.05..2.0f64, 0.0..1.0f64), 1..4),
        lead in 0.0..3.0f64,
    ) {
        let s = PowerSpectrum::power_law(alpha, 1.0, TAU / 100.0, TAU * 10f64.powf(cut_decades)).unwrap();
        let mut t = 0.0;
        let mut windows = Vec::new();
        for (d, gap) in durations {
            windows.push(MeasurementWindow::new(t, t + d).unwrap());
            t += d + gap;
        }
        let blocks = build_sigma(&s, &windows, t + lead).unwrap();
        prop_assert!(blocks.is_psd(), "min eigenvalue {}", blocks.min_eigenvalue());
        for (i, w) in windows.iter().enumerate() {
            let direct = build_sigma(&s, std::slice::from_ref(w), t).unwrap().m[(0, 0)];
            prop_assert!((blocks.m[(i, i)] - direct).abs() <= 1e-9 * direct);
        }
    }
}
