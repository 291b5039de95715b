use std::f64::consts::PI;

use fpl_core::lattice::GridSpec;
use fpl_core::quadrature::{gauss_legendre, CompositeRule};
use fpl_core::weights::{
    build_table, load_table, read_table, save_table, KernelParams, WeightError, COMPONENTS,
    HEADER_LEN,
};

/// `(2 pi)^{-3/2} int_{|z| <= R} S_pq(z) cos(w . z) dz` in spherical
/// coordinates with a tensor Gauss-Legendre rule.
fn s_hat_by_cubature(lambda: f64, r_max: f64, w: [f64; 3], p: usize, q: usize) -> f64 {
    let radial = CompositeRule::new(0.0, r_max, 48, 10);
    let (mu, mu_w) = gauss_legendre(64);
    let (phi, phi_w) = gauss_legendre(96);
    let mut total = 0.0;
    for (&r, &wr) in radial.nodes.iter().zip(&radial.weights) {
        let mag = r.powf(lambda + 2.0);
        for (&c, &wc) in mu.iter().zip(&mu_w) {
            let s = (1.0 - c * c).sqrt();
            for (&t, &wt) in phi.iter().zip(&phi_w) {
                let angle = PI * (t + 1.0);
                let u = [s * angle.cos(), s * angle.sin(), c];
                let delta = if p == q { 1.0 } else { 0.0 };
                let kernel = mag * (delta - u[p] * u[q]);
                let phase = r * (w[0] * u[0] + w[1] * u[1] + w[2] * u[2]);
                total += wr * wc * wt * PI * r * r * kernel * phase.cos();
            }
        }
    }
    total * (2.0 * PI).powf(-1.5)
}

#[test]
fn table_entries_match_three_dimensional_cubature() {
    let grid = GridSpec::<f64>::new(8, 2.0).unwrap();
    for &lambda in &[0.0, 1.0] {
        let params = KernelParams::for_grid(lambda, &grid).unwrap();
        let table = build_table(&grid, &params).unwrap();
        for k in [[0, 0, 0], [1, 0, 0], [1, 2, 0], [-3, 1, 2]] {
            let flat = grid.flat_of_modes(k).unwrap();
            let w = grid.xi_vec(flat);
            let scale = table.s_hat()[0][0].abs();
            for (c, &(p, q)) in COMPONENTS.iter().enumerate() {
                let exact = s_hat_by_cubature(lambda, params.trunc_radius, w, p, q);
                let got = table.s_hat()[flat][c];
                assert!(
                    (got - exact).abs() <= 1e-6 * scale,
                    "lambda {lambda}, k {k:?}, ({p},{q}): {got} vs {exact}"
                );
            }
        }
    }
}

fn temp_path(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("fpl-core-tests-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn cache_round_trip_is_bit_exact() {
    let grid = GridSpec::<f64>::new(8, 3.0).unwrap();
    let params = KernelParams::for_grid(0.5, &grid).unwrap();
    let table = build_table(&grid, &params).unwrap();
    let path = temp_path("roundtrip.bin");
    save_table(&table, &path).unwrap();
    let back = load_table(&path, &grid, &params).unwrap();
    assert_eq!(back.checksum(), table.checksum());
    for (a, b) in table.s_hat().iter().zip(back.s_hat()) {
        for c in 0..6 {
            assert_eq!(a[c].to_bits(), b[c].to_bits());
        }
    }
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN + 8 * 7 * grid.len());
}

#[test]
fn cache_rejects_mismatch_and_damage() {
    let grid = GridSpec::<f64>::new(8, 3.0).unwrap();
    let params = KernelParams::for_grid(1.0, &grid).unwrap();
    let table = build_table(&grid, &params).unwrap();
    let path = temp_path("damage.bin");
    save_table(&table, &path).unwrap();

    let other = GridSpec::<f64>::new(10, 3.0).unwrap();
    assert!(matches!(
        load_table(&path, &other, &params),
        Err(WeightError::HeaderMismatch(_))
    ));

    let mut bytes = std::fs::read(&path).unwrap();
    let cut = temp_path("cut.bin");
    std::fs::write(&cut, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(read_table(&cut), Err(WeightError::Truncated { .. })));

    let flipped = temp_path("flipped.bin");
    let last = bytes.len() - 3;
    bytes[last] ^= 0x10;
    std::fs::write(&flipped, &bytes).unwrap();
    assert!(matches!(read_table(&flipped), Err(WeightError::Checksum { .. })));

    let foreign = temp_path("foreign.bin");
    std::fs::write(&foreign, vec![0u8; 200]).unwrap();
    assert!(matches!(read_table(&foreign), Err(WeightError::BadMagic)));
}

#[test]
fn soft_potentials_are_rejected() {
    match KernelParams::new(-3.0, 1.0, 128) {
        Err(e @ WeightError::SoftPotential(_)) => {
            assert!(e.to_string().contains("soft potentials out of scope"))
        }
        other => panic!("unexpected {other:?}"),
    }
}
