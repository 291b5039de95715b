use fpl_core::lattice::{
    choose_domain, forward_transform, inverse_transform, project_modes, GridSpec, VelocityField,
};
use fpl_core::quadrature::CompositeRule;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(n: usize, l: f64, seed: u64) -> VelocityField<f64> {
    let g = GridSpec::<f64>::new(n, l).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VelocityField::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `N^{-3/2} sum_n f_n exp(-i xi_k . v_n)` evaluated term by term.
fn naive_dft(f: &VelocityField<f64>) -> Vec<Complex<f64>> {
    let g = f.grid();
    let norm = (g.n_modes() as f64).powf(-1.5);
    (0..g.len())
        .map(|k| {
            let xi = g.xi_vec(k);
            let mut s = Complex::new(0.0, 0.0);
            for (n, &x) in f.values().iter().enumerate() {
                let v = g.velocity(n);
                let phase = -(xi[0] * v[0] + xi[1] * v[1] + xi[2] * v[2]);
                s += Complex::from_polar(x, phase);
            }
            s * norm
        })
        .collect()
}

#[test]
fn fft_matches_naive_dft() {
    for &(n, l) in &[(8, 1.0), (10, 2.5)] {
        let f = random_field(n, l, n as u64);
        let fast = forward_transform(&f).unwrap();
        let slow = naive_dft(&f);
        let scale = slow.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (a, b) in fast.coeffs().iter().zip(&slow) {
            assert!((a - b).norm() < 1e-12 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn round_trip_and_parseval() {
    let f = random_field(12, 3.0, 9);
    let s = forward_transform(&f).unwrap();
    let back = inverse_transform(&s).unwrap();
    for (a, b) in f.values().iter().zip(back.values()) {
        assert!((a - b).abs() < 1e-13);
    }
    let cell = f.grid().cell_volume();
    let physical: f64 = f.values().iter().map(|x| x * x).sum::<f64>() * cell;
    let spectral: f64 = s.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>() * cell;
    assert!((physical - spectral).abs() < 1e-12 * physical);
}

#[test]
fn projection_is_idempotent_and_orthogonal() {
    let f = random_field(12, 2.0, 4);
    let keep = |x: &VelocityField<f64>| {
        inverse_transform(&project_modes(&forward_transform(x).unwrap(), 5).unwrap()).unwrap()
    };
    let p = keep(&f);
    let pp = keep(&p);
    for (a, b) in p.values().iter().zip(pp.values()) {
        assert!((a - b).abs() < 1e-13);
    }
    let rest = f.axpy(-1.0, &p);
    assert!(rest.dot(&p).abs() < 1e-12 * f.dot(&f));
}

/// `(inside, outside)` of `exp(-a|v|^2)(1+|v|^2)` for the cube `(-l, l)^3`,
/// from one-dimensional Gauss-Legendre integrals.
fn split_by_quadrature(a: f64, l: f64) -> (f64, f64) {
    let far = l + 40.0 / a.sqrt();
    let inner = CompositeRule::new(0.0, l, 64, 10);
    let outer = CompositeRule::new(l, far, 256, 10);
    let m0 = |r: &CompositeRule| 2.0 * r.integrate(|x| (-a * x * x).exp());
    let m2 = |r: &CompositeRule| 2.0 * r.integrate(|x| x * x * (-a * x * x).exp());
    let (i0, i2) = (m0(&inner), m2(&inner));
    let (o0, o2) = (m0(&outer), m2(&outer));
    let (f0, f2) = (i0 + o0, i2 + o2);
    let inside = i0.powi(3) + 3.0 * i2 * i0 * i0;
    let total = f0.powi(3) + 3.0 * f2 * f0 * f0;
    // Outside the cube: total minus inside, written as a sum of positive
    // terms so tiny tails keep their relative accuracy.
    let outside_mass = o0 * (f0 * f0 + f0 * i0 + i0 * i0);
    let outside_second = 3.0 * (o2 * f0 * f0 + i2 * o0 * (f0 + i0));
    debug_assert!((total - inside - outside_mass - outside_second).abs() < 1e-9 * total);
    (inside, outside_mass + outside_second)
}

fn domain_by_scan(t0: f64, tol: f64) -> f64 {
    let a = 1.0 / (2.0 * t0);
    let mut k = 1;
    loop {
        let l = 0.25 * k as f64;
        let (i, o) = split_by_quadrature(a, l);
        if o <= tol * i {
            return l;
        }
        k += 1;
    }
}

#[test]
fn domain_choice_agrees_with_quadrature_search() {
    for &t0 in &[0.5, 1.0, 2.0] {
        for &tol in &[1e-2, 1e-6, 1e-8, 1e-12] {
            let fast = choose_domain(1.0, t0, 1.0, 1.0, tol).unwrap();
            assert_eq!(fast, domain_by_scan(t0, tol), "T0 = {t0}, tol = {tol}");
        }
    }
    assert_eq!(choose_domain(1.0, 1.0, 1.0, 1.0, 1e-8).unwrap(), 6.5);
}

#[test]
fn domain_scales_with_thermal_speed() {
    for &tol in &[1e-4, 1e-8] {
        let l1 = choose_domain(1.0, 1.0, 1.0, 1.0, tol).unwrap();
        let l4 = choose_domain(1.0, 2.0, 1.0, 1.0, tol).unwrap();
        assert!((l4 - 2f64.sqrt() * l1).abs() <= 0.25 + 1e-12, "{l1} -> {l4}");
        // Mass and stretch cancel from the criterion.
        assert_eq!(choose_domain(3.0, 1.0, 5.0, 1.0, tol).unwrap(), l1);
    }
}
