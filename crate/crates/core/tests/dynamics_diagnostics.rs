use std::f64::consts::PI;

use fpl_core::diagnostics::{
    entropy, hs_norm, maxwellian_field, moments, stability_ratio, weighted_l2, weighted_moment,
    MaxwellianSpec,
};
use fpl_core::dynamics::{
    run, step_rk4, BiMaxwellian, DynamicsError, Rhs, SolverConfig, SolverState,
};
use fpl_core::lattice::{GridSpec, VelocityField};
use fpl_core::weights::build_table;
use fpl_core::Record;
use proptest::prelude::*;

struct Decay;

impl Rhs<f64> for Decay {
    fn eval(&mut self, g: &VelocityField<f64>) -> Result<VelocityField<f64>, DynamicsError> {
        Ok(g.scaled(-1.0))
    }
}

fn final_error(dt: f64) -> f64 {
    let grid = GridSpec::<f64>::new(8, 1.0).unwrap();
    let mut state = SolverState::new(VelocityField::from_fn(grid, |_| 1.0));
    let steps = (1.0 / dt).round() as usize;
    for _ in 0..steps {
        state = step_rk4(&mut Decay, &state, dt).unwrap();
    }
    (state.g.values()[0] - (-1.0f64).exp()).abs()
}

#[test]
fn rk4_converges_at_fourth_order() {
    let errors: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&h| final_error(h)).collect();
    for w in errors.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!((slope - 4.0).abs() <= 0.2, "slope {slope}");
    }
}

#[test]
fn gaussian_observables_match_closed_forms() {
    let grid = GridSpec::<f64>::new(32, 6.0).unwrap();
    let spec = MaxwellianSpec::standard();
    let m = maxwellian_field(&spec, &grid);
    let mom = moments(&m);
    assert!((mom.rho - 1.0).abs() < 1e-7);
    assert!(mom.velocity.iter().all(|v| v.abs() < 1e-12));
    assert!((mom.temperature - 1.0).abs() < 1e-6);
    // int M (1 + |v|^2) = 1 + 3 T.
    assert!((weighted_moment(&m, 2.0) - 4.0).abs() < 1e-6);
    let h = (2.0 * PI).powf(-1.5).ln() - 1.5;
    assert!((entropy(&m) - h).abs() < 1e-6, "{} vs {h}", entropy(&m));
    // ||M||_2^2 = (4 pi)^{-3/2}.
    assert!((m.l2_norm().powi(2) - (4.0 * PI).powf(-1.5)).abs() < 1e-8);
    assert_eq!(stability_ratio(&m), 0.0);
}

#[test]
fn entropy_ignores_nonpositive_cells() {
    let grid = GridSpec::<f64>::new(8, 2.0).unwrap();
    let mut f = VelocityField::from_fn(grid, |_| 0.5);
    let base = entropy(&f);
    f.values_mut()[0] = -0.3;
    let expect = base * (grid.len() - 1) as f64 / grid.len() as f64;
    assert!((entropy(&f) - expect).abs() < 1e-14);
}

#[test]
fn short_run_conserves_and_relaxes() {
    let cfg = SolverConfig {
        n_modes: 12,
        half_length: 5.0,
        t_final: 0.05,
        output_stride: 5,
        ..SolverConfig::default()
    };
    let grid = cfg.grid().unwrap();
    let table = build_table(&grid, &cfg.kernel().unwrap()).unwrap();
    let g0 = BiMaxwellian { rho: 1.0, shift: 1.2, t_each: 0.5 }.field(&grid);
    let mut records: Vec<Record> = Vec::new();
    let end = run(&cfg, &table, g0.clone(), &mut records).unwrap();
    assert!(records.len() >= 2);
    let (a, b) = (moments(&g0), moments(&end.g));
    assert!((a.rho - b.rho).abs() <= 1e-12 * a.rho);
    assert!((a.temperature_raw - b.temperature_raw).abs() <= 1e-10);
    for k in 0..3 {
        assert!((a.velocity[k] - b.velocity[k]).abs() <= 1e-12);
    }
    let first = records.first().unwrap();
    let last = records.last().unwrap();
    assert!(last.dist_to_eq < first.dist_to_eq);
    assert!(records.iter().all(|r| r.all_finite()));
}

#[test]
fn oversized_step_halts_the_run() {
    let cfg = SolverConfig {
        n_modes: 12,
        half_length: 5.0,
        dt: Some(0.5),
        t_final: 20.0,
        ..SolverConfig::default()
    };
    let grid = cfg.grid().unwrap();
    let table = build_table(&grid, &cfg.kernel().unwrap()).unwrap();
    let g0 = BiMaxwellian { rho: 1.0, shift: 1.2, t_each: 0.5 }.field(&grid);
    let err = run(&cfg, &table, g0, &mut Vec::<Record>::new()).unwrap_err();
    assert!(err.halt_time().is_some(), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn norms_are_absolutely_homogeneous(a in -20.0f64..20.0, k in 0.0f64..4.0) {
        let grid = GridSpec::<f64>::new(8, 3.0).unwrap();
        let f = maxwellian_field(&MaxwellianSpec::new(1.0, [0.3, 0.0, -0.2], 0.8).unwrap(), &grid);
        let g = f.scaled(a);
        let tol = 1e-12 * a.abs().max(1e-300);
        prop_assert!((weighted_l2(&g, k) - a.abs() * weighted_l2(&f, k)).abs() <= tol * weighted_l2(&f, k));
        prop_assert!((weighted_moment(&g, k) - a.abs() * weighted_moment(&f, k)).abs() <= tol * weighted_moment(&f, k));
        let (hf, hg) = (hs_norm(&f, 2, k).unwrap(), hs_norm(&g, 2, k).unwrap());
        prop_assert!((hg - a.abs() * hf).abs() <= tol * hf);
    }
}
