mod common;

use fspde::dynamics::{self, Histogram, Moments, Observable};
use fspde::solver::{SolveOptions, TimeGrid};
use fspde::spectral::SpectralField;
use proptest::prelude::*;

proptest! {
    #[test]
    fn radius_exceeds_one(k2 in 0.0f64..10.0, area in 0.1f64..10.0, delta in 0.1f64..5.0, frac in 0.0f64..0.99) {
        let l1 = frac * 2.0 * delta;
        let r = dynamics::radius_from(k2, area, l1, delta).unwrap();
        prop_assert!(r > 1.0);
        prop_assert!(dynamics::radius_from(k2, area, 2.0 * delta, delta).is_err());
    }

    #[test]
    fn standard_error_is_sample_std_over_root_n(xs in prop::collection::vec(-100.0f64..100.0, 2..200)) {
        let mut m = Moments::default();
        xs.iter().for_each(|x| m.push(*x));
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let e = m.estimate();
        prop_assert!((e.mean - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
        prop_assert!((e.se - (var / n).sqrt()).abs() <= 1e-6 * (1.0 + e.se));
        prop_assert!(e.se >= 0.0);
    }

    #[test]
    fn histogram_mass_and_coverage(xs in prop::collection::vec(-50.0f64..50.0, 1..300), bins in 1usize..80) {
        let h = Histogram::from_samples(Observable::Mode(1), &xs, bins).unwrap();
        prop_assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(h.lo, lo);
        prop_assert_eq!(h.hi, hi);
        prop_assert_eq!(h.bin_edges().len(), bins + 1);
        prop_assert!(h.mass.iter().all(|m| *m >= 0.0));
    }
}

#[test]
fn coupled_difference_nonincreasing_for_linear_model() {
    let m = common::linear(8, 1.0, 0.35, 0.3);
    let u0 = SpectralField::single_mode(8, 1, 1.0).add(&SpectralField::single_mode(8, 3, 0.5));
    let v0 = u0.scaled(-1.0);
    let grid = TimeGrid::new(0.0, 2.0, 1e-3).unwrap();
    let opts = SolveOptions::with_truncation(8).save_every(50);
    let rep = dynamics::contraction_test(&m, &u0, &v0, &grid, &opts, 2000, 21).unwrap();
    assert!(rep.passed());
    let c = &rep.curve;
    for k in 1..c.times.len() {
        let joint = (c.se[k].powi(2) + c.se[k - 1].powi(2)).sqrt();
        assert!(c.estimate[k] <= c.estimate[k - 1] + 3.0 * joint, "t = {}", c.times[k]);
    }
}

#[test]
fn ou_stationary_histogram_chi_square() {
    // Implicit Euler for da = −λ a dt + dW has stationary law N(0, 1/(2λ + λ²dt)).
    let m = common::ou();
    let lambda = m.basis.eigenvalue(1);
    let dt = 1e-3;
    let var = 1.0 / (2.0 * lambda + lambda * lambda * dt);
    // Samples two relaxation times apart.
    let grid = TimeGrid::new(0.0, 4010.0, dt).unwrap();
    let opts = SolveOptions::default().save_every(1000);
    let measure = dynamics::empirical_measure(&m, &SpectralField::from_coeffs(vec![3.0]), &grid, 10.0, 32, &opts, 5).unwrap();
    let hist = &measure.histograms[2];
    assert_eq!(hist.observable, Observable::Mode(1));
    let n = measure.samples as f64;
    let edges = hist.bin_edges();
    let sd = var.sqrt();
    // Merge neighbouring bins until each expects at least 5 samples.
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for k in 0..hist.mass.len() {
        let lo = if k == 0 { f64::NEG_INFINITY } else { edges[k] };
        let hi = if k + 1 == hist.mass.len() { f64::INFINITY } else { edges[k + 1] };
        obs += hist.mass[k] * n;
        exp += n * (common::normal_cdf(hi / sd) - common::normal_cdf(lo / sd));
        if exp >= 5.0 {
            groups.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if let Some(last) = groups.last_mut() {
        last.0 += obs;
        last.1 += exp;
    }
    let stat: f64 = groups.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = groups.len() - 1;
    assert!(dof >= 8);
    assert!(stat < common::chi_square_999(dof), "χ² = {stat} with {dof} dof");
}

#[test]
fn time_and_ensemble_averages_agree_for_ou() {
    let m = common::ou();
    let grid = TimeGrid::new(0.0, 600.0, 1e-3).unwrap();
    let opts = SolveOptions::default();
    let ta = dynamics::ergodic_average(&m, &SpectralField::from_coeffs(vec![0.0]), Observable::HNormSq, &grid, 5.0, &opts, 2)
        .unwrap();
    let snap = TimeGrid::new(0.0, 5.0, 1e-3).unwrap();
    let ens = dynamics::ensemble_average(
        &m,
        &[SpectralField::from_coeffs(vec![5.0])],
        Observable::HNormSq,
        &snap,
        &opts,
        2000,
        3,
    )
    .unwrap();
    assert!(ta.estimate.agrees_with(&ens[0]), "{:?} vs {:?}", ta.estimate, ens[0]);
}

#[test]
fn absorbing_radius_matches_formula() {
    let m = common::chafee_infante(8, 0.0, (0.2, 0.0));
    let nc = m.noise_constants();
    let r = dynamics::absorbing_radius(&m).unwrap();
    let expected = (2.0 * m.drift.k2 * std::f64::consts::PI + nc.l1) / (2.0 * m.delta() - nc.l1) + 1.0;
    assert!((r - expected).abs() < 1e-12);
}
