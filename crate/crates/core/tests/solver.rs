mod common;

use fspde::dynamics::random_initial;
use fspde::solver::{self, initial_data_sensitivity, solve_path, PathKey, SolveOptions, TimeGrid};
use fspde::spectral::SpectralField;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn discrete_energy_inequality(norm in 0.0f64..6.0, seed in any::<u64>(), dt in 1e-4f64..5e-3) {
        let m = common::chafee_infante(16, 0.0, (0.0, 0.0)).without_noise();
        let area = std::f64::consts::PI;
        let u0 = random_initial(16, norm, seed);
        let grid = TimeGrid::new(0.0, 200.0 * dt, dt).unwrap();
        let traj = solve_path(&m, &u0, &grid, &SolveOptions::default(), PathKey::new(0, 0)).unwrap();
        let bound = 2.0 * dt * m.drift.k2 * area;
        for w in traj.states.windows(2) {
            prop_assert!(w[1].norm_h_sq() <= w[0].norm_h_sq() + bound + 1e-12);
        }
    }

    #[test]
    fn same_key_same_path(seed in any::<u64>(), path in 0u64..100) {
        let m = common::chafee_infante(8, 0.2, (0.3, 0.2));
        let u0 = SpectralField::single_mode(8, 1, 1.0);
        let grid = TimeGrid::new(0.0, 0.2, 1e-3).unwrap();
        let opts = SolveOptions::with_truncation(8).save_every(10);
        let a = solve_path(&m, &u0, &grid, &opts, PathKey::new(seed, path)).unwrap();
        let b = solve_path(&m, &u0, &grid, &opts, PathKey::new(seed, path)).unwrap();
        let c = solve_path(&m, &u0, &grid, &opts, PathKey::new(seed, path + 1)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a.states, &c.states);
        for (k, t) in a.times.iter().enumerate() {
            let expected = if k + 1 == a.times.len() { grid.horizon() } else { (10 * k) as f64 * 1e-3 };
            prop_assert!((t - expected).abs() < 1e-12);
        }
        prop_assert!(a.states.iter().all(|s| s.is_finite()));
    }
}

#[test]
fn jumps_are_the_only_discontinuities() {
    // Large-amplitude jumps, tiny dt: the step over a jump moves by h(u(t−), ξ)
    // up to O(dt); quiet steps move by O(√dt).
    let m = common::chafee_infante(4, 0.0, (1.0, 0.5));
    let u0 = SpectralField::single_mode(4, 1, 1.0);
    let grid = TimeGrid::new(0.0, 1.0, 1e-4).unwrap();
    let opts = SolveOptions {
        record_jumps: true,
        ..SolveOptions::with_truncation(4).save_every(1)
    };
    let traj = solve_path(&m, &u0, &grid, &opts, PathKey::new(5, 0)).unwrap();
    assert!(!traj.jumps.is_empty());
    let mut smallest_jump = f64::INFINITY;
    for j in &traj.jumps {
        let response = m.jump.response(&j.pre).scaled(j.mark * m.jump_scale());
        assert!(j.post.sub(&j.pre).sub(&response).norm_h() < 1e-12);
        assert!(j.time > 0.0 && j.time <= 1.0);
        assert!(j.mark.abs() >= 0.25);
        smallest_jump = smallest_jump.min(response.norm_h());
    }
    let mut largest_quiet = 0.0f64;
    for (k, w) in traj.states.windows(2).enumerate() {
        let (t0, t1) = (traj.times[k], traj.times[k + 1]);
        let inside: Vec<_> = traj.jumps.iter().filter(|j| j.time > t0 && j.time <= t1).collect();
        let step = w[1].sub(&w[0]);
        let residual = inside
            .iter()
            .fold(step, |acc, j| acc.sub(&m.jump.response(&j.pre).scaled(j.mark * m.jump_scale())));
        largest_quiet = largest_quiet.max(residual.norm_h());
    }
    assert!(largest_quiet < 0.05, "{largest_quiet}");
    assert!(smallest_jump > 4.0 * largest_quiet, "{smallest_jump} vs {largest_quiet}");
}

#[test]
fn sensitivity_ratio_stable_under_halving() {
    let m = common::chafee_infante(16, 0.3, (0.3, 0.3));
    let u0 = SpectralField::single_mode(16, 1, 1.0);
    let dir = random_initial(16, 1.0, 11);
    let grid = TimeGrid::new(0.0, 1.0, 1e-3).unwrap();
    let opts = SolveOptions::with_truncation(8).save_every(20);
    let ratios = initial_data_sensitivity(&m, &u0, &dir, &[0.1, 0.05, 0.025], &grid, &opts, 200, 3).unwrap();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi / lo < 1.2, "{ratios:?}");
    assert!(lo > 0.0 && hi.is_finite());
}

#[test]
fn coupled_truncations_converge_per_path() {
    let m = common::chafee_infante(16, 0.0, (0.5, 0.0));
    let u0 = SpectralField::single_mode(16, 1, 1.0);
    let grid = TimeGrid::new(0.0, 0.5, 1e-3).unwrap();
    let d = solver::mean_over_paths(40, 8, |key| solver::truncation_study(&m, &u0, &grid, &[2, 4, 8, 16, 64], key)).unwrap();
    assert_eq!(*d.last().unwrap(), 0.0);
    for w in d.windows(2) {
        assert!(w[1] < w[0], "{d:?}");
    }
}

#[test]
fn grid_contract() {
    assert!(TimeGrid::new(1.0, 1.0, 0.1).is_err());
    assert!(TimeGrid::new(0.0, 1.0, 2.0).is_err());
    let g = TimeGrid::new(0.5, 1.5, 0.25).unwrap();
    assert_eq!(g.n_steps, 4);
    assert_eq!(g.time(4), 1.5);
}
