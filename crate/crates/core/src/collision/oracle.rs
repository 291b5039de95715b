//! Slow reference evaluations of the collision operator, used to
//! cross-validate the FFT path. Both are `O(N^6)` and limited to small grids.
//!
//! * [`q_hat_brute_force`] performs the mode double sum literally.
//! * [`q_direct_oracle`] works in velocity space from the form
//!   `Q(g, g) = a_ij * g  d_ij g - (c * g) g`, with the convolutions done by
//!   direct midpoint sums of the truncated kernels over the periodic images
//!   of the cube (the operator the spectral evaluation targets).

use num_complex::Complex;

use super::CollisionError;
use crate::lattice::{forward_transform, inverse_transform, GridSpec, SpectralField, VelocityField};
use crate::weights::{KernelParams, WeightTable, COMPONENTS};

/// Largest grid the oracles accept.
pub const ORACLE_MAX_N: usize = 16;

fn check_size(n: usize) -> Result<(), CollisionError> {
    if n > ORACLE_MAX_N {
        Err(CollisionError::OracleTooLarge {
            n,
            max: ORACLE_MAX_N,
        })
    } else {
        Ok(())
    }
}

/// Literal double sum over all `(xi, w)` mode pairs with `xi - w` on the
/// lattice, in the same unitary convention as
/// [`CollisionWorkspace::q_hat`](super::CollisionWorkspace::q_hat).
pub fn q_hat_brute_force(
    spec: &SpectralField<f64>,
    table: &WeightTable,
) -> Result<SpectralField<f64>, CollisionError> {
    let g = *spec.grid();
    check_size(g.n_modes())?;
    if table.grid().n_modes() != g.n_modes() {
        return Err(CollisionError::TableMismatch {
            table: table.grid().n_modes(),
            grid: g.n_modes(),
        });
    }
    let n = g.n_modes() as f64;
    let h = g.dual_spacing();
    let factor = (2.0 * std::f64::consts::PI / n).powf(1.5);
    let coeffs = spec.coeffs();
    let mut out = vec![Complex::new(0.0, 0.0); g.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let kx = g.modes(i);
        let mut acc = Complex::new(0.0, 0.0);
        for j in 0..g.len() {
            let kw = g.modes(j);
            let ku = [kx[0] - kw[0], kx[1] - kw[1], kx[2] - kw[2]];
            let Some(u_idx) = g.flat_of_modes(ku) else {
                continue;
            };
            let s = table.matrix(j);
            let w = kw.map(|k| k as f64 * h);
            let u = ku.map(|k| k as f64 * h);
            let mut weight = 0.0;
            for p in 0..3 {
                for q in 0..3 {
                    weight += s[p][q] * (w[p] * w[q] - u[p] * u[q]);
                }
            }
            acc += coeffs[u_idx] * coeffs[j] * weight;
        }
        *o = acc * factor;
    }
    Ok(SpectralField::new(g, out)?)
}

/// Convolutions of the truncated kernels with a field, sampled on the grid.
#[derive(Debug, Clone)]
pub struct BarFields {
    /// `a_bar` in [`COMPONENTS`] order.
    pub a: [Vec<f64>; 6],
    pub b: [Vec<f64>; 3],
    pub c: Vec<f64>,
}

/// Sub-cells per axis used by [`q_direct_oracle`] for the convolution sums.
/// Larger values interpolate `g` onto a finer source grid; on smooth data the
/// result moves by well under a percent, so plain midpoint sums are the
/// default.
pub const ORACLE_REFINEMENT: usize = 1;

/// Trigonometric interpolant of `g` sampled on the `refine`-times finer
/// cell-centered grid over the same cube.
fn refined_samples(g: &VelocityField<f64>, refine: usize) -> Result<VelocityField<f64>, CollisionError> {
    let grid = *g.grid();
    if refine == 1 {
        return Ok(g.clone());
    }
    let fine = grid.refined(grid.n_modes() * refine);
    let mut spec = forward_transform(g)?;
    spec.drop_nyquist();
    let scale = (refine as f64).powf(1.5);
    let mut coeffs = vec![Complex::new(0.0, 0.0); fine.len()];
    for (i, c) in spec.coeffs().iter().enumerate() {
        let j = fine.flat_of_modes(grid.modes(i)).expect("coarse mode fits fine lattice");
        coeffs[j] = c * scale;
    }
    Ok(inverse_transform(&SpectralField::new(fine, coeffs)?)?)
}

/// Direct sums of `a_ij(z) = |z|^{l+2}(d_ij - z_i z_j/|z|^2)`,
/// `b_i(z) = -2|z|^l z_i` and `c(z) = -2(l+3)|z|^l`, truncated at
/// `|z| <= R <= 2 L_v` and periodized over the cube, against `g`. Source
/// points are the cell centers of a grid `refine` times finer, with `g`
/// interpolated trigonometrically.
pub fn bar_fields_with(
    g: &VelocityField<f64>,
    params: &KernelParams,
    refine: usize,
) -> Result<BarFields, CollisionError> {
    let grid = *g.grid();
    check_size(grid.n_modes())?;
    params.validate()?;
    let src = refined_samples(g, refine.max(1))?;
    let src_grid = *src.grid();
    let len = grid.len();
    let lam = params.lambda;
    let r_max = params.trunc_radius;
    let half = grid.half_length();
    let period = 2.0 * half;
    if r_max > period {
        return Err(CollisionError::Lattice(crate::lattice::LatticeError::BadDomainParams(
            format!("oracle needs R <= 2 L, got R = {r_max}"),
        )));
    }
    let dv3 = src_grid.cell_volume();
    let sources: Vec<([f64; 3], f64)> = src
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(m, &x)| (src_grid.velocity(m), x))
        .collect();
    // Per-axis offsets worth trying: the nearest image always, the next one
    // only when the kernel reaches past half a period.
    let shifts: &[f64] = if r_max <= half { &[0.0] } else { &[0.0, -1.0, 1.0] };
    let wrap = |x: f64| x - period * (x / period).round();
    let mut a: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; len]);
    let mut b: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; len]);
    let mut c = vec![0.0; len];
    for nidx in 0..len {
        let v = grid.velocity(nidx);
        let mut sa = [0.0; 6];
        let mut sb = [0.0; 3];
        let mut sc = 0.0;
        for &(w, gm) in &sources {
            let base = [wrap(v[0] - w[0]), wrap(v[1] - w[1]), wrap(v[2] - w[2])];
            for &s0 in shifts {
                for &s1 in shifts {
                    for &s2 in shifts {
                        let z = [
                            base[0] + s0 * period,
                            base[1] + s1 * period,
                            base[2] + s2 * period,
                        ];
                        if z[0].abs() > r_max || z[1].abs() > r_max || z[2].abs() > r_max {
                            continue;
                        }
                        let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
                        if r2 > r_max * r_max {
                            continue;
                        }
                        if r2 == 0.0 {
                            if lam == 0.0 {
                                sc += -6.0 * gm;
                            }
                            continue;
                        }
                        let r_lam = if lam == 1.0 { r2.sqrt() } else { r2.powf(0.5 * lam) };
                        for (k, &(p, q)) in COMPONENTS.iter().enumerate() {
                            let delta = if p == q { r2 } else { 0.0 };
                            sa[k] += r_lam * (delta - z[p] * z[q]) * gm;
                        }
                        for i in 0..3 {
                            sb[i] += -2.0 * r_lam * z[i] * gm;
                        }
                        sc += -2.0 * (lam + 3.0) * r_lam * gm;
                    }
                }
            }
        }
        for k in 0..6 {
            a[k][nidx] = sa[k] * dv3;
        }
        for i in 0..3 {
            b[i][nidx] = sb[i] * dv3;
        }
        c[nidx] = sc * dv3;
    }
    Ok(BarFields { a, b, c })
}

/// [`bar_fields_with`] at [`ORACLE_REFINEMENT`].
pub fn bar_fields(g: &VelocityField<f64>, params: &KernelParams) -> Result<BarFields, CollisionError> {
    bar_fields_with(g, params, ORACLE_REFINEMENT)
}

/// Second derivatives `d_pq g` in [`COMPONENTS`] order, computed spectrally
/// on the symmetric mode set.
pub fn hessian_fields(g: &VelocityField<f64>) -> Result<[Vec<f64>; 6], CollisionError> {
    let grid = *g.grid();
    let mut spec = forward_transform(g)?;
    spec.drop_nyquist();
    let mut out: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::new());
    for (k, &(p, q)) in COMPONENTS.iter().enumerate() {
        let mut d = spec.clone();
        for (i, c) in d.coeffs_mut().iter_mut().enumerate() {
            let xi = grid.xi_vec(i);
            *c = *c * (-xi[p] * xi[q]);
        }
        out[k] = inverse_transform(&d)?.into_values();
    }
    Ok(out)
}

/// Convolution of `g` with the single layer `2 R^{l+1} delta(|z| = R)`.
///
/// Truncating the kernel at `|z| = R` leaves `b = div a` jump-free (because
/// `a(z) z = 0`) but gives `div b` this extra layer, `-b . n` on the sphere. The layer only touches
/// `v` whose distance-`R` sphere reaches the bulk of `g`. The sphere integral
/// of each Fourier mode is `4 pi R^2 sinc(|xi| R)`, which is exact for the
/// trigonometric interpolant of `g`.
pub fn truncation_layer(g: &VelocityField<f64>, params: &KernelParams) -> Result<Vec<f64>, CollisionError> {
    let grid = *g.grid();
    let r = params.trunc_radius;
    let strength = 2.0 * r.powf(params.lambda + 1.0) * 4.0 * std::f64::consts::PI * r * r;
    let mut spec = forward_transform(g)?;
    spec.drop_nyquist();
    for (i, c) in spec.coeffs_mut().iter_mut().enumerate() {
        let xi = grid.xi_vec(i);
        let x = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt() * r;
        let sinc = if x == 0.0 { 1.0 } else { x.sin() / x };
        *c = *c * (strength * sinc);
    }
    Ok(inverse_transform(&spec)?.into_values())
}

/// `a_bar_ij d_ij g - c_bar g`, with `a_bar` and `c_bar` from direct sums and
/// `c_bar` completed by [`truncation_layer`].
pub fn q_direct_oracle(
    g: &VelocityField<f64>,
    params: &KernelParams,
) -> Result<VelocityField<f64>, CollisionError> {
    let bars = bar_fields(g, params)?;
    let layer = truncation_layer(g, params)?;
    let hess = hessian_fields(g)?;
    let grid: GridSpec<f64> = *g.grid();
    let values = (0..grid.len())
        .map(|i| {
            let mut s = 0.0;
            for (k, &(p, q)) in COMPONENTS.iter().enumerate() {
                let w = if p == q { 1.0 } else { 2.0 };
                s += w * bars.a[k][i] * hess[k][i];
            }
            s - (bars.c[i] + layer[i]) * g.values()[i]
        })
        .collect();
    Ok(VelocityField::new(grid, values)?)
}

/// Right-hand side of the weak form,
/// `int g (a_bar_ij d_ij phi + 2 b_bar_i d_i phi) dv`, by midpoint quadrature.
pub fn weak_form_rhs(
    g: &VelocityField<f64>,
    params: &KernelParams,
    grad_phi: impl Fn([f64; 3]) -> [f64; 3],
    hess_phi: impl Fn([f64; 3]) -> [[f64; 3]; 3],
) -> Result<f64, CollisionError> {
    let bars = bar_fields(g, params)?;
    let grid = *g.grid();
    let mut total = 0.0;
    for i in 0..grid.len() {
        let v = grid.velocity(i);
        let dphi = grad_phi(v);
        let hphi = hess_phi(v);
        let mut s = 0.0;
        for (k, &(p, q)) in COMPONENTS.iter().enumerate() {
            let w = if p == q { 1.0 } else { 2.0 };
            s += w * bars.a[k][i] * hphi[p][q];
        }
        for j in 0..3 {
            s += 2.0 * bars.b[j][i] * dphi[j];
        }
        total += g.values()[i] * s;
    }
    Ok(total * grid.cell_volume())
}
