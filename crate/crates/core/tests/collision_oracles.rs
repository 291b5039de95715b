use fpl_core::collision::oracle::{bar_fields, q_direct_oracle, q_hat_brute_force, weak_form_rhs};
use fpl_core::collision::{CollisionWorkspace, CutoffFunction};
use fpl_core::diagnostics::{maxwellian_field, MaxwellianSpec};
use fpl_core::lattice::{forward_transform, GridSpec, VelocityField};
use fpl_core::weights::{build_table, KernelParams};

/// Anisotropic two-lobe field, far from equilibrium.
fn bimodal(grid: GridSpec<f64>) -> VelocityField<f64> {
    let lobe = |v: [f64; 3], cx: f64, sx: f64| {
        let (sy, sz) = (1.2, 1.0);
        let e = ((v[0] - cx) / sx).powi(2) + (v[1] / sy).powi(2) + (v[2] / sz).powi(2);
        (-0.5 * e).exp()
    };
    VelocityField::from_fn(grid, |v| lobe(v, 1.0, 1.0) + 0.7 * lobe(v, -1.0, 0.9))
}

fn relative_l2(a: &VelocityField<f64>, b: &VelocityField<f64>) -> f64 {
    a.axpy(-1.0, b).l2_norm() / b.l2_norm()
}

#[test]
fn fft_route_equals_mode_double_sum() {
    let grid = GridSpec::<f64>::new(8, 4.0).unwrap();
    let table = build_table(&grid, &KernelParams::for_grid(0.5, &grid).unwrap()).unwrap();
    let mut spec = forward_transform(&bimodal(grid)).unwrap();
    spec.drop_nyquist();
    let mut ws = CollisionWorkspace::<f64>::new(&table, true);
    let fast = ws.q_hat(&spec).unwrap();
    let slow = q_hat_brute_force(&spec, &table).unwrap();
    let scale = slow.l2_norm();
    let diff: f64 = fast
        .coeffs()
        .iter()
        .zip(slow.coeffs())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt()
        * grid.cell_volume().sqrt();
    assert!(diff <= 1e-10 * scale, "relative difference {}", diff / scale);
}

#[test]
fn fft_route_matches_direct_quadrature() {
    let grid = GridSpec::<f64>::new(12, 5.0).unwrap();
    let g = bimodal(grid);
    for &lambda in &[0.0, 1.0] {
        let params = KernelParams::for_grid(lambda, &grid).unwrap();
        let table = build_table(&grid, &params).unwrap();
        let mut ws = CollisionWorkspace::<f64>::new(&table, true);
        let fast = ws.q_unconserved(&g, &CutoffFunction::identity()).unwrap();
        let direct = q_direct_oracle(&g, &params).unwrap();
        let err = relative_l2(&fast, &direct);
        assert!(err <= 0.05, "lambda {lambda}: relative error {err}");
    }
}

#[test]
fn point_mass_gives_the_kernel_itself() {
    let grid = GridSpec::<f64>::new(10, 3.0).unwrap();
    let rho = 0.8;
    let center = grid.flat([5, 5, 5]);
    let mut g = VelocityField::zeros(grid);
    g.values_mut()[center] = rho / grid.cell_volume();
    let v0 = grid.velocity(center);
    for &lambda in &[0.0, 0.5, 1.0] {
        let params = KernelParams::for_grid(lambda, &grid).unwrap();
        let bars = bar_fields(&g, &params).unwrap();
        for i in 0..grid.len() {
            let v = grid.velocity(i);
            let z = [v[0] - v0[0], v[1] - v0[1], v[2] - v0[2]];
            let r = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
            if r >= 0.9 * params.trunc_radius {
                continue;
            }
            let expect = -2.0 * (lambda + 3.0) * r.powf(lambda) * rho;
            assert!(
                (bars.c[i] - expect).abs() <= 1e-12 * expect.abs(),
                "lambda {lambda}, |z| = {r}: {} vs {expect}",
                bars.c[i]
            );
            let along = -2.0 * r.powf(lambda) * rho;
            for j in 0..3 {
                assert!((bars.b[j][i] - along * z[j]).abs() <= 1e-12 * (along.abs() * r + 1.0));
            }
        }
    }
}

#[test]
fn weak_form_reproduces_second_moment_rate() {
    let grid = GridSpec::<f64>::new(12, 5.0).unwrap();
    let g = bimodal(grid);
    let params = KernelParams::for_grid(1.0, &grid).unwrap();
    let table = build_table(&grid, &params).unwrap();
    let mut ws = CollisionWorkspace::<f64>::new(&table, true);
    let q = ws.q_unconserved(&g, &CutoffFunction::identity()).unwrap();
    let phi = VelocityField::from_fn(grid, |v| v[0] * v[0]);
    let strong = q.dot(&phi);
    let weak = weak_form_rhs(
        &g,
        &params,
        |v| [2.0 * v[0], 0.0, 0.0],
        |_| [[2.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    )
    .unwrap();
    assert!(
        (strong - weak).abs() <= 0.05 * weak.abs(),
        "strong {strong}, weak {weak}"
    );
    // The mass rate vanishes in the weak form identically.
    let mass = weak_form_rhs(&g, &params, |_| [0.0; 3], |_| [[0.0; 3]; 3]).unwrap();
    assert_eq!(mass, 0.0);
}

#[test]
fn maxwellian_residual_shrinks_with_resolution() {
    let spec = MaxwellianSpec::standard();
    let mut last = f64::INFINITY;
    for n in [8, 12, 16] {
        let grid = GridSpec::<f64>::new(n, 6.5).unwrap();
        let table = build_table(&grid, &KernelParams::for_grid(1.0, &grid).unwrap()).unwrap();
        let mut ws = CollisionWorkspace::<f64>::new(&table, true);
        let m = maxwellian_field(&spec, &grid);
        let q = ws.q_unconserved(&m, &CutoffFunction::identity()).unwrap();
        let norm = q.l2_norm();
        assert!(norm < last, "N = {n}: {norm} after {last}");
        last = norm;
    }
}
