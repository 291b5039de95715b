//! Fourier transform of the truncated collision matrix
//! `S(u) = |u|^{lambda+2} (I - u u^T / |u|^2)` on `|u| <= R`, tabulated on
//! the dual lattice, plus the binary cache format for those tables.
//!
//! `S` is real and rotation-covariant, so its transform has the form
//! `S^(w) = A(|w|) I + B(|w|) w w^T / |w|^2` with
//!
//! ```text
//! 3A + B = (2 pi)^{-3/2} 8 pi int_0^R r^{lambda+4} j0(|w| r) dr
//!  A + B = (2 pi)^{-3/2} 8 pi int_0^R r^{lambda+4} j1(|w| r) / (|w| r) dr
//! ```
//!
//! which reduces the table to one pair of radial integrals per distinct
//! `|w|`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lattice::GridSpec;
use crate::quadrature::CompositeRule;

/// Upper-triangle component order used for `s_hat`.
pub const COMPONENTS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

const MAGIC: &[u8; 4] = b"FPLW";
const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("soft potentials out of scope (lambda = {0}); supported range is 0 <= lambda <= 1")]
    SoftPotential(f64),
    #[error("lambda = {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("truncation radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("quad_points must be at least 64, got {0}")]
    TooFewQuadPoints(usize),
    #[error("radial quadrature did not converge at |w| = {rho}: relative change {achieved:e}")]
    NoConvergence { rho: f64, achieved: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weight table (bad magic)")]
    BadMagic,
    #[error("unsupported table format version {0}")]
    BadVersion(u32),
    #[error("truncated table: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("table header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("checksum mismatch: header {stored:#018x}, content {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("table failed structural check: {0}")]
    Structure(String),
}

/// Interaction exponent and truncation of the collision matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub lambda: f64,
    pub trunc_radius: f64,
    pub quad_points: usize,
}

impl KernelParams {
    pub fn new(lambda: f64, trunc_radius: f64, quad_points: usize) -> Result<Self, WeightError> {
        let p = Self {
            lambda,
            trunc_radius,
            quad_points,
        };
        p.validate()?;
        Ok(p)
    }

    /// Default truncation `R = L_v`.
    ///
    /// The spectral evaluation convolves with the periodization of the
    /// truncated kernel. With `R > L_v`, pairs near opposite faces interact
    /// through a periodic image, the periodized kernel no longer satisfies
    /// `S(u) u = 0` for the relative velocities that matter, and a
    /// Maxwellian stops being an equilibrium: `||Q_u(M)||` then stalls at a
    /// resolution-independent level instead of decaying spectrally.
    pub fn for_grid(lambda: f64, grid: &GridSpec<f64>) -> Result<Self, WeightError> {
        Self::new(lambda, grid.half_length(), 128)
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        if self.lambda < 0.0 {
            return Err(WeightError::SoftPotential(self.lambda));
        }
        if !(self.lambda <= 1.0) {
            return Err(WeightError::LambdaOutOfRange(self.lambda));
        }
        if !(self.trunc_radius > 0.0) || !self.trunc_radius.is_finite() {
            return Err(WeightError::BadRadius(self.trunc_radius));
        }
        if self.quad_points < 64 {
            return Err(WeightError::TooFewQuadPoints(self.quad_points));
        }
        Ok(())
    }
}

fn prefactor() -> f64 {
    8.0 * PI * (2.0 * PI).powf(-1.5)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
    } else {
        x.sin() / x
    }
}

/// `j1(x) / x`.
fn j1_over_x(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let x2 = x * x;
        1.0 / 3.0 - x2 / 30.0 + x2 * x2 / 840.0 - x2 * x2 * x2 / 45360.0
    } else {
        (x.sin() - x * x.cos()) / (x * x * x)
    }
}

/// Closed form of `A` at `|w| = 0` (where `B = 0`).
pub fn dc_value(params: &KernelParams) -> f64 {
    let e = params.lambda + 5.0;
    prefactor() * params.trunc_radius.powf(e) / e / 3.0
}

/// `(A, B)` of the isotropic decomposition at `|w| = rho`.
pub fn radial_profiles(params: &KernelParams, rho: f64) -> Result<(f64, f64), WeightError> {
    params.validate()?;
    if rho == 0.0 {
        return Ok((dc_value(params), 0.0));
    }
    let r_max = params.trunc_radius;
    let power = params.lambda + 4.0;
    const ORDER: usize = 8;
    // At least two panels per half-oscillation of the Bessel kernels.
    let mut panels = (params.quad_points / ORDER).max((2.0 * rho * r_max / PI).ceil() as usize + 1);
    let eval = |panels: usize| {
        let rule = CompositeRule::new(0.0, r_max, panels, ORDER);
        let mut trace = 0.0;
        let mut radial = 0.0;
        for (&r, &w) in rule.nodes.iter().zip(&rule.weights) {
            let base = w * r.powf(power);
            trace += base * sinc(rho * r);
            radial += base * j1_over_x(rho * r);
        }
        (prefactor() * trace, prefactor() * radial)
    };
    let scale_floor = 1e-12 * dc_value(params);
    let mut prev = eval(panels);
    let mut change = f64::INFINITY;
    for _ in 0..10 {
        panels *= 2;
        let next = eval(panels);
        let scale = next.0.abs().max(next.1.abs()) + scale_floor;
        change = ((next.0 - prev.0).abs().max((next.1 - prev.1).abs())) / scale;
        prev = next;
        if change < 1e-13 {
            break;
        }
    }
    if change > 1e-8 {
        return Err(WeightError::NoConvergence { rho, achieved: change });
    }
    let (trace, radial) = prev;
    let a = 0.5 * (trace - radial);
    Ok((a, radial - a))
}

/// Per-mode transform of the collision matrix on a grid's dual lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    grid: GridSpec<f64>,
    params: KernelParams,
    s_hat: Vec<[f64; 6]>,
    a_scalar: Vec<f64>,
    checksum: u64,
}

impl WeightTable {
    pub fn grid(&self) -> &GridSpec<f64> {
        &self.grid
    }
    pub fn params(&self) -> &KernelParams {
        &self.params
    }
    /// Upper triangle of `S^(w_k)` in [`COMPONENTS`] order, FFT index order.
    pub fn s_hat(&self) -> &[[f64; 6]] {
        &self.s_hat
    }
    /// `w_k^T S^(w_k) w_k`.
    pub fn a_scalar(&self) -> &[f64] {
        &self.a_scalar
    }
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn matrix(&self, flat: usize) -> [[f64; 3]; 3] {
        let s = &self.s_hat[flat];
        [[s[0], s[1], s[2]], [s[1], s[3], s[4]], [s[2], s[4], s[5]]]
    }

    /// Eigenvalue pair `(A, A + B)` recovered from the stored matrix at a
    /// nonzero mode.
    pub fn eigen_pair(&self, flat: usize) -> (f64, f64) {
        let m = self.matrix(flat);
        let w = self.grid.xi_vec(flat);
        let n2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
        let trace = m[0][0] + m[1][1] + m[2][2];
        let along = quad_form(&m, &w) / n2;
        (0.5 * (trace - along), along)
    }

    /// Checks the isotropic structure: modes of equal `|w|` share their
    /// eigenvalue pair, and `a_scalar` matches `w^T S^ w`.
    pub fn validate_structure(&self) -> Result<(), WeightError> {
        let mut seen: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
        let scale = self.s_hat[0][0].abs().max(f64::MIN_POSITIVE);
        for i in 0..self.grid.len() {
            let w = self.grid.xi_vec(i);
            let qf = quad_form(&self.matrix(i), &w);
            if (qf - self.a_scalar[i]).abs() > 1e-12 * qf.abs().max(scale * 1e-12) {
                return Err(WeightError::Structure(format!("a_scalar mismatch at mode {i}")));
            }
            let k = self.grid.modes(i);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 == 0 {
                continue;
            }
            let pair = self.eigen_pair(i);
            match seen.get(&k2) {
                None => {
                    seen.insert(k2, pair);
                }
                Some(&(a, ab)) => {
                    let tol = 1e-8 * (a.abs().max(ab.abs())) + 1e-13 * scale;
                    if (a - pair.0).abs() > tol || (ab - pair.1).abs() > tol {
                        return Err(WeightError::Structure(format!(
                            "anisotropic entries at |k|^2 = {k2}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn quad_form(m: &[[f64; 3]; 3], w: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += w[i] * m[i][j] * w[j];
        }
    }
    s
}

/// Tabulates `S^` at every mode of `grid`. Radial profiles are evaluated
/// once per distinct `|k|^2`.
pub fn build_table(grid: &GridSpec<f64>, params: &KernelParams) -> Result<WeightTable, WeightError> {
    params.validate()?;
    let mut shells: Vec<i64> = (0..grid.len())
        .map(|i| {
            let k = grid.modes(i);
            k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
        })
        .collect();
    shells.sort_unstable();
    shells.dedup();
    let h = grid.dual_spacing();
    let profiles: Vec<(i64, (f64, f64))> = shells
        .par_iter()
        .map(|&k2| radial_profiles(params, h * (k2 as f64).sqrt()).map(|ab| (k2, ab)))
        .collect::<Result<_, _>>()?;
    let lookup: BTreeMap<i64, (f64, f64)> = profiles.into_iter().collect();

    let mut s_hat = Vec::with_capacity(grid.len());
    let mut a_scalar = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let k = grid.modes(i);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        let (a, b) = lookup[&k2];
        let w = grid.xi_vec(i);
        let norm2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
        let mut s = [0.0; 6];
        for (c, &(p, q)) in COMPONENTS.iter().enumerate() {
            let iso = if p == q { a } else { 0.0 };
            let aniso = if norm2 > 0.0 { b * w[p] * w[q] / norm2 } else { 0.0 };
            s[c] = iso + aniso;
        }
        let m = [[s[0], s[1], s[2]], [s[1], s[3], s[4]], [s[2], s[4], s[5]]];
        a_scalar.push(quad_form(&m, &w));
        s_hat.push(s);
    }
    let checksum = content_checksum(grid, params, &s_hat, &a_scalar);
    let table = WeightTable {
        grid: *grid,
        params: *params,
        s_hat,
        a_scalar,
        checksum,
    };
    table.validate_structure()?;
    Ok(table)
}

fn payload_bytes(s_hat: &[[f64; 6]], a_scalar: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (7 * a_scalar.len()));
    for s in s_hat {
        for x in s {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    for x in a_scalar {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn content_checksum(
    grid: &GridSpec<f64>,
    params: &KernelParams,
    s_hat: &[[f64; 6]],
    a_scalar: &[f64],
) -> u64 {
    let mut h = Sha256::new();
    h.update((grid.n_modes() as u64).to_le_bytes());
    h.update(grid.half_length().to_le_bytes());
    h.update(params.lambda.to_le_bytes());
    h.update(params.trunc_radius.to_le_bytes());
    h.update((params.quad_points as u64).to_le_bytes());
    h.update(payload_bytes(s_hat, a_scalar));
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Writes the 64-byte header followed by the little-endian payload.
pub fn save_table(table: &WeightTable, path: &Path) -> Result<(), WeightError> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + 56 * table.a_scalar.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(table.grid.n_modes() as u32).to_le_bytes());
    bytes.extend_from_slice(&(table.params.quad_points as u32).to_le_bytes());
    bytes.extend_from_slice(&table.params.lambda.to_le_bytes());
    bytes.extend_from_slice(&table.grid.half_length().to_le_bytes());
    bytes.extend_from_slice(&table.params.trunc_radius.to_le_bytes());
    bytes.extend_from_slice(&table.checksum.to_le_bytes());
    bytes.extend_from_slice(&((7 * table.a_scalar.len()) as u64).to_le_bytes());
    bytes.extend_from_slice(&[0u8; 8]);
    debug_assert_eq!(bytes.len(), HEADER_LEN);
    bytes.extend_from_slice(&payload_bytes(&table.s_hat, &table.a_scalar));
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

/// Reads a table and verifies its checksum and structure.
pub fn read_table(path: &Path) -> Result<WeightTable, WeightError> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(WeightError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(WeightError::BadMagic);
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(WeightError::BadVersion(version));
    }
    let n = u32_at(8) as usize;
    let quad_points = u32_at(12) as usize;
    let lambda = f64_at(16);
    let half_length = f64_at(24);
    let trunc_radius = f64_at(32);
    let stored = u64_at(40);
    let count = u64_at(48) as usize;
    let modes = n * n * n;
    if count != 7 * modes {
        return Err(WeightError::HeaderMismatch(format!(
            "payload count {count} does not match N = {n}"
        )));
    }
    let expected = HEADER_LEN + 8 * count;
    if bytes.len() != expected {
        return Err(WeightError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let grid = GridSpec::new(n, half_length)
        .map_err(|e| WeightError::HeaderMismatch(e.to_string()))?;
    let params = KernelParams::new(lambda, trunc_radius, quad_points)?;
    let payload = &bytes[HEADER_LEN..];
    let val = |i: usize| f64::from_le_bytes(payload[8 * i..8 * i + 8].try_into().unwrap());
    let s_hat: Vec<[f64; 6]> = (0..modes)
        .map(|m| std::array::from_fn(|c| val(6 * m + c)))
        .collect();
    let a_scalar: Vec<f64> = (0..modes).map(|m| val(6 * modes + m)).collect();
    let computed = content_checksum(&grid, &params, &s_hat, &a_scalar);
    if computed != stored {
        return Err(WeightError::Checksum { stored, computed });
    }
    let table = WeightTable {
        grid,
        params,
        s_hat,
        a_scalar,
        checksum: stored,
    };
    table.validate_structure()?;
    Ok(table)
}

/// Reads a table and checks that it was built for `grid` and `params`.
pub fn load_table(
    path: &Path,
    grid: &GridSpec<f64>,
    params: &KernelParams,
) -> Result<WeightTable, WeightError> {
    let t = read_table(path)?;
    if t.grid.n_modes() != grid.n_modes() {
        return Err(WeightError::HeaderMismatch(format!(
            "N = {} in file, {} expected",
            t.grid.n_modes(),
            grid.n_modes()
        )));
    }
    if t.grid.half_length().to_bits() != grid.half_length().to_bits() {
        return Err(WeightError::HeaderMismatch(format!(
            "L_v = {} in file, {} expected",
            t.grid.half_length(),
            grid.half_length()
        )));
    }
    if t.params.lambda.to_bits() != params.lambda.to_bits()
        || t.params.trunc_radius.to_bits() != params.trunc_radius.to_bits()
        || t.params.quad_points != params.quad_points
    {
        return Err(WeightError::HeaderMismatch(format!(
            "kernel {:?} in file, {:?} expected",
            t.params, params
        )));
    }
    Ok(t)
}
