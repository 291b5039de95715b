//! Observables tracked along a run: moments, weighted norms, entropy, the
//! stability ratio of the negative part, and distances to equilibrium.
//!
//! All integrals use the midpoint rule of [`crate::lattice::quadrature`].

use std::f64::consts::PI;

use crate::lattice::{forward_transform, keeps_mode, GridSpec, LatticeError, VelocityField};
use crate::num::Real;

/// Cells at or below this value are left out of the entropy integral.
pub const ENTROPY_FLOOR: f64 = 1e-30;

/// Parameters of a Maxwellian `rho / (2 pi T)^{3/2} exp(-|v - V|^2 / (2T))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxwellianSpec {
    pub rho0: f64,
    pub v0: [f64; 3],
    pub t0: f64,
}

impl MaxwellianSpec {
    pub fn new(rho0: f64, v0: [f64; 3], t0: f64) -> Result<Self, LatticeError> {
        if !(rho0 > 0.0 && t0 > 0.0) || !v0.iter().all(|x| x.is_finite()) {
            return Err(LatticeError::BadDomainParams(format!(
                "Maxwellian needs rho0 > 0 and T0 > 0, got rho0 = {rho0}, T0 = {t0}"
            )));
        }
        Ok(Self { rho0, v0, t0 })
    }

    pub fn standard() -> Self {
        Self {
            rho0: 1.0,
            v0: [0.0; 3],
            t0: 1.0,
        }
    }

    pub fn eval(&self, v: [f64; 3]) -> f64 {
        let d2: f64 = (0..3).map(|i| (v[i] - self.v0[i]).powi(2)).sum();
        self.rho0 * (2.0 * PI * self.t0).powf(-1.5) * (-d2 / (2.0 * self.t0)).exp()
    }
}

pub fn maxwellian_field<T: Real>(spec: &MaxwellianSpec, grid: &GridSpec<T>) -> VelocityField<T> {
    VelocityField::from_fn(*grid, |v| {
        T::lit(spec.eval(v.map(|x| x.to_f64_lossy())))
    })
}

/// Mass, bulk velocity and temperature of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments<T> {
    pub rho: T,
    pub velocity: [T; 3],
    /// `(1/(3 rho)) int f |v - V|^2`.
    pub temperature: T,
    /// `(1/(3 rho)) int f |v|^2`.
    pub temperature_raw: T,
    /// Set when `rho <= 0`; velocity and temperatures are then zero.
    pub nonpositive_mass: bool,
}

pub fn moments<T: Real>(f: &VelocityField<T>) -> Moments<T> {
    let g = f.grid();
    let mut m0 = T::zero();
    let mut m1 = [T::zero(); 3];
    let mut e = T::zero();
    for (i, &x) in f.values().iter().enumerate() {
        let v = g.velocity(i);
        m0 = m0 + x;
        for k in 0..3 {
            m1[k] = m1[k] + x * v[k];
        }
        e = e + x * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    }
    let w = g.cell_volume();
    let rho = m0 * w;
    if !(rho > T::zero()) {
        return Moments {
            rho,
            velocity: [T::zero(); 3],
            temperature: T::zero(),
            temperature_raw: T::zero(),
            nonpositive_mass: true,
        };
    }
    let velocity = m1.map(|m| m * w / rho);
    let three = T::lit(3.0);
    let energy = e * w;
    let vv: T = velocity.iter().map(|&c| c * c).sum();
    Moments {
        rho,
        velocity,
        temperature: (energy - rho * vv) / (three * rho),
        temperature_raw: energy / (three * rho),
        nonpositive_mass: false,
    }
}

fn bracket<T: Real>(v: [T; 3]) -> T {
    (T::one() + v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `m_k(f) = int |f| <v>^k dv`.
pub fn weighted_moment<T: Real>(f: &VelocityField<T>, k: T) -> T {
    let g = f.grid();
    let s: T = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, &x)| x.abs() * bracket(g.velocity(i)).powf(k))
        .sum();
    s * g.cell_volume()
}

/// `|| <v>^k f ||_2`.
pub fn weighted_l2<T: Real>(f: &VelocityField<T>, k: T) -> T {
    let g = f.grid();
    let s: T = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let w = bracket(g.velocity(i)).powf(k);
            x * x * w * w
        })
        .sum();
    (s * g.cell_volume()).sqrt()
}

/// `int f ln f` over cells with `f > 1e-30`.
pub fn entropy<T: Real>(f: &VelocityField<T>) -> T {
    let floor = T::lit(ENTROPY_FLOOR);
    let s: T = f
        .values()
        .iter()
        .filter(|&&x| x > floor)
        .map(|&x| x * x.ln())
        .sum();
    s * f.grid().cell_volume()
}

/// `int_{f<0} |f| <v>^2 / int_{f>=0} f <v>^2`.
pub fn stability_ratio<T: Real>(f: &VelocityField<T>) -> T {
    let g = f.grid();
    let mut neg = T::zero();
    let mut pos = T::zero();
    for (i, &x) in f.values().iter().enumerate() {
        let v = g.velocity(i);
        let w = T::one() + v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if x < T::zero() {
            neg = neg - x * w;
        } else {
            pos = pos + x * w;
        }
    }
    if neg == T::zero() {
        T::zero()
    } else {
        neg / pos
    }
}

/// Symbol `sum_{|alpha| <= s} xi^{2 alpha}` of the `H^s` norm.
fn hs_symbol<T: Real>(xi: [T; 3], s: u32) -> T {
    let q = xi.map(|x| x * x);
    let mut total = T::zero();
    // Monomials of degree d in (q1, q2, q3), for d = 0..=s.
    for a in 0..=s {
        for b in 0..=(s - a) {
            for c in 0..=(s - a - b) {
                total = total + q[0].powi(a as i32) * q[1].powi(b as i32) * q[2].powi(c as i32);
            }
        }
    }
    total
}

/// `||<v>^k f||_{H^s}` with the derivative-sum norm
/// `sum_{|alpha| <= s} ||d^alpha (<v>^k f)||_2^2`, evaluated spectrally.
pub fn hs_norm<T: Real>(f: &VelocityField<T>, s: u32, k_weight: T) -> Result<T, LatticeError> {
    let g = *f.grid();
    let weighted = if k_weight == T::zero() {
        f.clone()
    } else {
        let vals = f
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bracket(g.velocity(i)).powf(k_weight))
            .collect();
        VelocityField::new(g, vals)?
    };
    let spec = forward_transform(&weighted)?;
    let total: T = spec
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| c.norm_sqr() * hs_symbol(g.xi_vec(i), s))
        .sum();
    Ok((total * g.cell_volume()).sqrt())
}

/// `||(1 - Pi^M) f||_2`: the energy on modes outside the `M`-set.
pub fn tail_norm<T: Real>(f: &VelocityField<T>, n_keep: usize) -> Result<T, LatticeError> {
    let g = *f.grid();
    if n_keep > g.n_modes() {
        return Err(LatticeError::ProjectionTooWide {
            n_keep,
            n_modes: g.n_modes(),
        });
    }
    let spec = forward_transform(f)?;
    let total: T = spec
        .coeffs()
        .iter()
        .enumerate()
        .filter(|(i, _)| !keeps_mode(g.modes(*i), n_keep))
        .map(|(_, c)| c.norm_sqr())
        .sum();
    Ok((total * g.cell_volume()).sqrt())
}

/// `(L / (2 pi M))^s ||f||_{H^s}`, the tail-bound scale without constant.
pub fn tail_bound_scale<T: Real>(f: &VelocityField<T>, s: u32, n_keep: usize) -> Result<T, LatticeError> {
    let l = f.grid().half_length();
    let ratio = l / (T::lit(2.0 * PI) * T::of(n_keep));
    Ok(ratio.powi(s as i32) * hs_norm(f, s, T::zero())?)
}

/// `(lhs, rhs)` with `lhs = ||(1 - Pi^M) f||_2` and
/// `rhs = (2 pi)^{-3/2} (L / (2 pi M))^s ||f||_{H^s}`.
pub fn tail_bound_check<T: Real>(
    f: &VelocityField<T>,
    s: u32,
    n_keep: usize,
) -> Result<(T, T), LatticeError> {
    let lhs = tail_norm(f, n_keep)?;
    let rhs = T::lit((2.0 * PI).powf(-1.5)) * tail_bound_scale(f, s, n_keep)?;
    Ok((lhs, rhs))
}

/// Weighted-moment orders reported in every record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsConfig {
    /// Largest moment order `k_max` (in addition to 0, 2, 3).
    pub k_max: f64,
    /// Weight exponent of `l2_weighted`.
    pub l2_weight: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            k_max: 4.0,
            l2_weight: 2.0,
        }
    }
}

/// One row of the diagnostics stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord<T> {
    pub t: T,
    pub step: u64,
    pub rho: T,
    pub velocity: [T; 3],
    pub temperature: T,
    pub temperature_raw: T,
    pub nonpositive_mass: bool,
    pub m0: T,
    pub m2: T,
    pub m3: T,
    pub m_kmax: T,
    pub l2: T,
    pub l2_weighted: T,
    pub hs1: T,
    pub hs2: T,
    pub entropy: T,
    pub neg_ratio: T,
    pub dist_to_eq: T,
    pub correction_norm: T,
    pub tail_norm: T,
}

impl<T: Real> DiagnosticsRecord<T> {
    /// Column names, in the order of [`DiagnosticsRecord::to_row`].
    pub const FIELDS: [&'static str; 22] = [
        "t",
        "step",
        "rho",
        "V1",
        "V2",
        "V3",
        "T",
        "T_raw",
        "rho_nonpositive",
        "m0",
        "m2",
        "m3",
        "m_kmax",
        "l2_norm",
        "l2_weighted",
        "hs1",
        "hs2",
        "entropy",
        "neg_ratio",
        "dist_to_eq",
        "correction_norm",
        "tail_norm",
    ];

    /// Evaluates every field-derived observable. `correction_norm` and
    /// `tail_norm` come from the operator evaluation and are passed in.
    pub fn compute(
        f: &VelocityField<T>,
        t: T,
        step: u64,
        equilibrium: &VelocityField<T>,
        cfg: &DiagnosticsConfig,
        correction_norm: T,
        tail_norm: T,
    ) -> Result<Self, LatticeError> {
        let m = moments(f);
        Ok(Self {
            t,
            step,
            rho: m.rho,
            velocity: m.velocity,
            temperature: m.temperature,
            temperature_raw: m.temperature_raw,
            nonpositive_mass: m.nonpositive_mass,
            m0: weighted_moment(f, T::zero()),
            m2: weighted_moment(f, T::lit(2.0)),
            m3: weighted_moment(f, T::lit(3.0)),
            m_kmax: weighted_moment(f, T::lit(cfg.k_max)),
            l2: f.l2_norm(),
            l2_weighted: weighted_l2(f, T::lit(cfg.l2_weight)),
            hs1: hs_norm(f, 1, T::zero())?,
            hs2: hs_norm(f, 2, T::zero())?,
            entropy: entropy(f),
            neg_ratio: stability_ratio(f),
            dist_to_eq: f.axpy(-T::one(), equilibrium).l2_norm(),
            correction_norm,
            tail_norm,
        })
    }

    pub fn to_row(&self) -> [f64; 22] {
        let x = |v: T| v.to_f64_lossy();
        [
            x(self.t),
            self.step as f64,
            x(self.rho),
            x(self.velocity[0]),
            x(self.velocity[1]),
            x(self.velocity[2]),
            x(self.temperature),
            x(self.temperature_raw),
            if self.nonpositive_mass { 1.0 } else { 0.0 },
            x(self.m0),
            x(self.m2),
            x(self.m3),
            x(self.m_kmax),
            x(self.l2),
            x(self.l2_weighted),
            x(self.hs1),
            x(self.hs2),
            x(self.entropy),
            x(self.neg_ratio),
            x(self.dist_to_eq),
            x(self.correction_norm),
            x(self.tail_norm),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.to_row().iter().all(|v| v.is_finite())
    }
}
