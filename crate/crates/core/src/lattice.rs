//! Truncated velocity cube and its dual Fourier lattice, with the
//! transforms and quadratures defined on them.
//!
//! Conventions (fixed here and nowhere else):
//!
//! * Cell centers `v_n = -L + (n + 1/2) dv`, `dv = 2L / N`, per axis.
//! * Modes `k in {-N/2, ..., N/2 - 1}` per axis with frequency
//!   `xi_k = (pi / L) k`, i.e. the lattice dual to period `2L`.
//! * Unitary transform `F_k = N^{-3/2} sum_n f_n exp(-i xi_k . v_n)`, so
//!   `dv^3 sum |F_k|^2 = dv^3 sum f_n^2`; the Parseval constant is `dv^3`.
//!
//! The continuous transform `(2 pi)^{-3/2} int f e^{-i xi v} dv` is recovered
//! as `(2 pi)^{-3/2} dv^3 N^{3/2} F_k`.
//!
//! Storage is row-major with axis 2 fastest; spectral arrays use FFT index
//! order (index `j` holds mode `j` for `j < N/2`, else `j - N`).

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use statrs::function::erf::{erf, erfc};
use thiserror::Error;

use crate::num::{cz, Real, C};

/// Spatial dimension. Formulas elsewhere are written for general `d`; the
/// solver is three-dimensional only.
pub const DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("mode count must be even and at least 8, got {0}")]
    BadModeCount(usize),
    #[error("half-length must be positive and finite, got {0}")]
    BadHalfLength(f64),
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value at index {index} (axis indices {cell:?})")]
    NonFinite { index: usize, cell: [usize; 3] },
    #[error("inverse transform left imaginary residue {residue:e} (field max {scale:e})")]
    ImaginaryResidue { residue: f64, scale: f64 },
    #[error("n_keep = {n_keep} exceeds the mode count {n_modes}")]
    ProjectionTooWide { n_keep: usize, n_modes: usize },
    #[error("invalid derivative: axis {axis}, order {order}")]
    BadDerivative { axis: usize, order: u32 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid domain parameters: {0}")]
    BadDomainParams(String),
    #[error("tail tolerance {tol:e} needs L_v beyond the cap {cap}")]
    DomainCapExceeded { tol: f64, cap: f64 },
}

/// Geometry of `(-L, L)^3` sampled with `N` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    n_modes: usize,
    half_length: T,
    dv: T,
    dual_spacing: T,
}

impl<T: Real> GridSpec<T> {
    pub fn new(n_modes: usize, half_length: T) -> Result<Self, LatticeError> {
        if n_modes < 8 || n_modes % 2 != 0 {
            return Err(LatticeError::BadModeCount(n_modes));
        }
        if !(half_length > T::zero()) || !half_length.is_finite() {
            return Err(LatticeError::BadHalfLength(half_length.to_f64_lossy()));
        }
        Ok(Self::unchecked(n_modes, half_length))
    }

    fn unchecked(n_modes: usize, half_length: T) -> Self {
        let n = T::of(n_modes);
        Self {
            n_modes,
            half_length,
            dv: (half_length + half_length) / n,
            dual_spacing: T::PI() / half_length,
        }
    }

    /// Same cube sampled with `m` cells per axis (used for zero-padded
    /// convolutions).
    pub fn refined(&self, m: usize) -> Self {
        assert!(m >= self.n_modes && m % 2 == 0);
        Self::unchecked(m, self.half_length)
    }

    #[inline]
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }
    #[inline]
    pub fn half_length(&self) -> T {
        self.half_length
    }
    #[inline]
    pub fn dv(&self) -> T {
        self.dv
    }
    #[inline]
    pub fn dual_spacing(&self) -> T {
        self.dual_spacing
    }
    /// Total number of cells, `N^3`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n_modes * self.n_modes * self.n_modes
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }
    /// Midpoint quadrature weight `dv^3`.
    #[inline]
    pub fn cell_volume(&self) -> T {
        self.dv * self.dv * self.dv
    }

    #[inline]
    pub fn split(&self, flat: usize) -> [usize; 3] {
        let n = self.n_modes;
        [flat / (n * n), (flat / n) % n, flat % n]
    }
    #[inline]
    pub fn flat(&self, idx: [usize; 3]) -> usize {
        let n = self.n_modes;
        (idx[0] * n + idx[1]) * n + idx[2]
    }

    /// Cell-center coordinate for per-axis index `i`.
    #[inline]
    pub fn node(&self, i: usize) -> T {
        -self.half_length + (T::of(i) + T::lit(0.5)) * self.dv
    }

    pub fn velocity(&self, flat: usize) -> [T; 3] {
        let [a, b, c] = self.split(flat);
        [self.node(a), self.node(b), self.node(c)]
    }

    /// Signed mode number of FFT index `j`.
    #[inline]
    pub fn mode(&self, j: usize) -> i64 {
        let n = self.n_modes as i64;
        let j = j as i64;
        if j < n / 2 {
            j
        } else {
            j - n
        }
    }

    /// FFT index of signed mode `k`, if it belongs to the lattice.
    #[inline]
    pub fn index_of_mode(&self, k: i64) -> Option<usize> {
        let n = self.n_modes as i64;
        if k < -n / 2 || k >= n / 2 {
            None
        } else if k >= 0 {
            Some(k as usize)
        } else {
            Some((k + n) as usize)
        }
    }

    pub fn modes(&self, flat: usize) -> [i64; 3] {
        let [a, b, c] = self.split(flat);
        [self.mode(a), self.mode(b), self.mode(c)]
    }

    pub fn flat_of_modes(&self, k: [i64; 3]) -> Option<usize> {
        Some(self.flat([
            self.index_of_mode(k[0])?,
            self.index_of_mode(k[1])?,
            self.index_of_mode(k[2])?,
        ]))
    }

    /// Frequency `xi_k` of FFT index `j` along one axis.
    #[inline]
    pub fn xi(&self, j: usize) -> T {
        T::lit(self.mode(j) as f64) * self.dual_spacing
    }

    pub fn xi_vec(&self, flat: usize) -> [T; 3] {
        let [a, b, c] = self.split(flat);
        [self.xi(a), self.xi(b), self.xi(c)]
    }

    /// True if any axis of this mode sits on the unpaired `-N/2` plane.
    #[inline]
    pub fn is_nyquist(&self, flat: usize) -> bool {
        let h = self.n_modes / 2;
        let [a, b, c] = self.split(flat);
        a == h || b == h || c == h
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.n_modes == other.n_modes && self.half_length == other.half_length
    }

    pub fn cast<U: Real>(&self) -> GridSpec<U> {
        GridSpec::unchecked(self.n_modes, U::lit(self.half_length.to_f64_lossy()))
    }
}

/// Real samples on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField<T> {
    grid: GridSpec<T>,
    values: Vec<T>,
}

impl<T: Real> VelocityField<T> {
    pub fn new(grid: GridSpec<T>, values: Vec<T>) -> Result<Self, LatticeError> {
        if values.len() != grid.len() {
            return Err(LatticeError::LengthMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        check_finite(&grid, values.iter().copied())?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec<T>) -> Self {
        Self {
            grid,
            values: vec![T::zero(); grid.len()],
        }
    }

    /// Samples `f(v)` at every cell center.
    pub fn from_fn(grid: GridSpec<T>, f: impl Fn([T; 3]) -> T) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.velocity(i))).collect();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }
    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }
    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, a: T) -> Self {
        self.map(|x| x * a)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: T, other: &Self) -> Self {
        debug_assert!(self.grid.same_as(&other.grid));
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| x + a * y)
                .collect(),
        }
    }

    /// Discrete inner product `dv^3 sum f g`.
    pub fn dot(&self, other: &Self) -> T {
        let s: T = self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum();
        s * self.grid.cell_volume()
    }

    /// Discrete `L^2(Omega)` norm.
    pub fn l2_norm(&self) -> T {
        self.dot(self).sqrt()
    }
}

/// Fourier coefficients in the unitary convention of this module.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField<T> {
    grid: GridSpec<T>,
    coeffs: Vec<C<T>>,
}

impl<T: Real> SpectralField<T> {
    pub fn new(grid: GridSpec<T>, coeffs: Vec<C<T>>) -> Result<Self, LatticeError> {
        if coeffs.len() != grid.len() {
            return Err(LatticeError::LengthMismatch {
                expected: grid.len(),
                actual: coeffs.len(),
            });
        }
        if let Some(i) = coeffs.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(LatticeError::NonFinite {
                index: i,
                cell: grid.split(i),
            });
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: GridSpec<T>) -> Self {
        Self {
            grid,
            coeffs: vec![cz(); grid.len()],
        }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }
    #[inline]
    pub fn coeffs(&self) -> &[C<T>] {
        &self.coeffs
    }
    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [C<T>] {
        &mut self.coeffs
    }
    pub fn into_coeffs(self) -> Vec<C<T>> {
        self.coeffs
    }

    /// Coefficient at signed mode `k`, zero outside the lattice.
    pub fn at(&self, k: [i64; 3]) -> C<T> {
        self.grid.flat_of_modes(k).map_or(cz(), |i| self.coeffs[i])
    }

    pub fn scaled(&self, a: T) -> Self {
        Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|&c| c * a).collect(),
        }
    }

    /// `L^2` norm through Parseval: `sqrt(dv^3 sum |F_k|^2)`.
    pub fn l2_norm(&self) -> T {
        let s: T = self.coeffs.iter().map(|c| c.norm_sqr()).sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    /// Zeroes every mode on an unpaired `-N/2` plane, leaving the
    /// symmetric set `|k_i| <= N/2 - 1`.
    pub fn drop_nyquist(&mut self) {
        let g = self.grid;
        for (i, c) in self.coeffs.iter_mut().enumerate() {
            if g.is_nyquist(i) {
                *c = cz();
            }
        }
    }
}

fn check_finite<T: Real>(
    grid: &GridSpec<T>,
    values: impl Iterator<Item = T>,
) -> Result<(), LatticeError> {
    for (i, v) in values.enumerate() {
        if !v.is_finite() {
            return Err(LatticeError::NonFinite {
                index: i,
                cell: grid.split(i.min(grid.len().saturating_sub(1))),
            });
        }
    }
    Ok(())
}

/// Planes transformed together along the slowest axis. Adjacent planes are
/// adjacent rows in memory, so gathering several at once reads longer
/// contiguous runs.
const AXIS0_BLOCK: usize = 4;

/// Planned 3-D transform for one grid size. Owns its scratch space, so one
/// instance serves one caller at a time.
pub struct Transform<T: Real> {
    n: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
    /// `exp(i pi k (1 - 1/N))` per FFT index: the cell-center phase shift.
    phase: Vec<C<T>>,
    scale: T,
    plane: Vec<C<T>>,
    scratch: Vec<C<T>>,
}

impl<T: Real> Transform<T> {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        let nh = n as i64 / 2;
        let phase = (0..n)
            .map(|j| {
                let k = if (j as i64) < nh { j as i64 } else { j as i64 - n as i64 };
                let arg = PI * k as f64 * (1.0 - 1.0 / n as f64);
                Complex::new(T::lit(arg.cos()), T::lit(arg.sin()))
            })
            .collect();
        Self {
            n,
            fwd,
            inv,
            phase,
            scale: T::lit((n as f64).powf(-1.5)),
            plane: vec![cz(); AXIS0_BLOCK * n * n],
            scratch: vec![cz(); scratch_len],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Velocity samples to unitary coefficients, in place.
    pub fn forward(&mut self, buf: &mut [C<T>]) {
        assert_eq!(buf.len(), self.n * self.n * self.n);
        self.dft3(buf, false);
        self.apply_phase(buf, false);
    }

    /// Unitary coefficients to velocity samples, in place.
    pub fn inverse(&mut self, buf: &mut [C<T>]) {
        assert_eq!(buf.len(), self.n * self.n * self.n);
        self.apply_phase(buf, true);
        self.dft3(buf, true);
    }

    fn apply_phase(&self, buf: &mut [C<T>], conjugate: bool) {
        let n = self.n;
        let s = self.scale;
        for a in 0..n {
            let pa = self.phase[a] * s;
            for b in 0..n {
                let pab = pa * self.phase[b];
                let row = &mut buf[(a * n + b) * n..(a * n + b + 1) * n];
                for (c, x) in row.iter_mut().enumerate() {
                    let p = pab * self.phase[c];
                    *x = *x * if conjugate { p.conj() } else { p };
                }
            }
        }
    }

    fn dft3(&mut self, buf: &mut [C<T>], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inv } else { &self.fwd };
        // Axis 2: contiguous rows.
        plan.process_with_scratch(buf, &mut self.scratch);
        // Axis 1: transpose each slab.
        for a in 0..n {
            let slab = &mut buf[a * n * n..(a + 1) * n * n];
            for b in 0..n {
                for c in 0..n {
                    self.plane[c * n + b] = slab[b * n + c];
                }
            }
            plan.process_with_scratch(&mut self.plane[..n * n], &mut self.scratch);
            for b in 0..n {
                for c in 0..n {
                    slab[b * n + c] = self.plane[c * n + b];
                }
            }
        }
        // Axis 0: gather columns a block of planes at a time.
        let nn = n * n;
        for b0 in (0..n).step_by(AXIS0_BLOCK) {
            let bs = AXIS0_BLOCK.min(n - b0);
            for a in 0..n {
                for db in 0..bs {
                    let row = (a * n + b0 + db) * n;
                    for c in 0..n {
                        self.plane[db * nn + c * n + a] = buf[row + c];
                    }
                }
            }
            plan.process_with_scratch(&mut self.plane[..bs * nn], &mut self.scratch);
            for a in 0..n {
                for db in 0..bs {
                    let row = (a * n + b0 + db) * n;
                    for c in 0..n {
                        buf[row + c] = self.plane[db * nn + c * n + a];
                    }
                }
            }
        }
    }
}

/// Placement of an `N`-mode lattice inside a larger `M`-mode one, per axis.
#[derive(Clone, Debug)]
pub struct Embedding {
    coarse: usize,
    map: Vec<usize>,
    kept: Vec<bool>,
}

impl Embedding {
    /// Panics unless `fine >= coarse`, both even, or `fine == coarse`.
    pub fn new(coarse: usize, fine: usize) -> Self {
        assert!(fine >= coarse, "embedding target is smaller than source");
        let half = coarse as i64 / 2;
        let map: Vec<usize> = (0..coarse as i64)
            .map(|j| {
                let k = if j < half { j } else { j - coarse as i64 };
                k.rem_euclid(fine as i64) as usize
            })
            .collect();
        let mut kept = vec![false; fine];
        for &j in &map {
            assert!(!kept[j], "modes collide in the target lattice");
            kept[j] = true;
        }
        Self { coarse, map, kept }
    }

    pub fn coarse(&self) -> usize {
        self.coarse
    }
    pub fn fine(&self) -> usize {
        self.kept.len()
    }
    /// Target index of each source index along one axis.
    pub fn map(&self) -> &[usize] {
        &self.map
    }
    pub fn kept(&self) -> &[bool] {
        &self.kept
    }
}

impl<T: Real> Transform<T> {
    /// Inverse transform of coarse coefficients zero-extended to this
    /// lattice. Equivalent to scattering into a zeroed buffer followed by
    /// [`Transform::inverse`], but rows and slabs known to be zero are
    /// skipped. `buf` is fully overwritten.
    pub fn inverse_embedded(&mut self, emb: &Embedding, coarse: &[C<T>], buf: &mut [C<T>]) {
        self.inverse_embedded_visit(emb, coarse, buf, |b, i, x| b[i] = x);
    }

    /// As [`Transform::inverse_embedded`], but each output sample is handed
    /// to `visit(buf, flat_index, value)` instead of being stored, so a
    /// pointwise consumer avoids one sweep over the buffer. `buf` is scratch.
    pub fn inverse_embedded_visit(
        &mut self,
        emb: &Embedding,
        coarse: &[C<T>],
        buf: &mut [C<T>],
        mut visit: impl FnMut(&mut [C<T>], usize, C<T>),
    ) {
        let n = self.n;
        let nc = emb.coarse();
        assert_eq!(emb.fine(), n);
        assert_eq!(coarse.len(), nc * nc * nc);
        assert_eq!(buf.len(), n * n * n);
        let map = emb.map();
        let kept = emb.kept();

        // Axes 2 and 1 slab by slab, so each slab stays cache resident;
        // slabs outside the embedded set are zero and never touched.
        for (ia, &fa) in map.iter().enumerate() {
            let pa = self.phase[fa].conj() * self.scale;
            let slab = &mut buf[fa * n * n..(fa + 1) * n * n];
            for (ib, &fb) in map.iter().enumerate() {
                let pab = pa * self.phase[fb].conj();
                let row = &mut slab[fb * n..(fb + 1) * n];
                row.iter_mut().for_each(|x| *x = cz());
                let src = &coarse[(ia * nc + ib) * nc..(ia * nc + ib + 1) * nc];
                for (&fc, &x) in map.iter().zip(src) {
                    row[fc] = x * (pab * self.phase[fc].conj());
                }
                self.inv.process_with_scratch(row, &mut self.scratch);
            }
            for b in 0..n {
                if kept[b] {
                    for c in 0..n {
                        self.plane[c * n + b] = slab[b * n + c];
                    }
                } else {
                    for c in 0..n {
                        self.plane[c * n + b] = cz();
                    }
                }
            }
            self.inv.process_with_scratch(&mut self.plane[..n * n], &mut self.scratch);
            for b in 0..n {
                for c in 0..n {
                    slab[b * n + c] = self.plane[c * n + b];
                }
            }
        }
        let nn = n * n;
        for b0 in (0..n).step_by(AXIS0_BLOCK) {
            let bs = AXIS0_BLOCK.min(n - b0);
            for a in 0..n {
                for db in 0..bs {
                    let row = (a * n + b0 + db) * n;
                    let dst = &mut self.plane[db * nn..(db + 1) * nn];
                    if kept[a] {
                        for c in 0..n {
                            dst[c * n + a] = buf[row + c];
                        }
                    } else {
                        for c in 0..n {
                            dst[c * n + a] = cz();
                        }
                    }
                }
            }
            self.inv.process_with_scratch(&mut self.plane[..bs * nn], &mut self.scratch);
            for a in 0..n {
                for db in 0..bs {
                    let row = (a * n + b0 + db) * n;
                    for c in 0..n {
                        visit(buf, row + c, self.plane[db * nn + c * n + a]);
                    }
                }
            }
        }
    }

    /// Forward transform restricted to the coarse modes of `emb`, written to
    /// `out`. Returns the summed squared modulus of every discarded
    /// coefficient. `buf` is used as scratch.
    pub fn forward_restricted(&mut self, emb: &Embedding, buf: &mut [C<T>], out: &mut [C<T>]) -> T {
        let n = self.n;
        let nc = emb.coarse();
        assert_eq!(emb.fine(), n);
        assert_eq!(out.len(), nc * nc * nc);
        assert_eq!(buf.len(), n * n * n);
        let map = emb.map();
        let kept = emb.kept();
        // Unnormalized passes still to come scale each discarded energy by
        // `n` per remaining axis.
        let mut dropped_0 = T::zero();
        let mut dropped_1 = T::zero();
        let mut dropped = T::zero();

        let nn = n * n;
        for b0 in (0..n).step_by(AXIS0_BLOCK) {
            let bs = AXIS0_BLOCK.min(n - b0);
            for a in 0..n {
                for db in 0..bs {
                    let row = (a * n + b0 + db) * n;
                    for c in 0..n {
                        self.plane[db * nn + c * n + a] = buf[row + c];
                    }
                }
            }
            self.fwd.process_with_scratch(&mut self.plane[..bs * nn], &mut self.scratch);
            for a in 0..n {
                for db in 0..bs {
                    let row = (a * n + b0 + db) * n;
                    let src = &self.plane[db * nn..(db + 1) * nn];
                    if kept[a] {
                        for c in 0..n {
                            buf[row + c] = src[c * n + a];
                        }
                    } else {
                        for c in 0..n {
                            dropped_0 = dropped_0 + src[c * n + a].norm_sqr();
                        }
                    }
                }
            }
        }
        for (ia, &fa) in map.iter().enumerate() {
            let slab = &mut buf[fa * n * n..(fa + 1) * n * n];
            for b in 0..n {
                for c in 0..n {
                    self.plane[c * n + b] = slab[b * n + c];
                }
            }
            self.fwd.process_with_scratch(&mut self.plane[..n * n], &mut self.scratch);
            for b in 0..n {
                if kept[b] {
                    for c in 0..n {
                        slab[b * n + c] = self.plane[c * n + b];
                    }
                } else {
                    for c in 0..n {
                        dropped_1 = dropped_1 + self.plane[c * n + b].norm_sqr();
                    }
                }
            }
            let pa = self.phase[fa] * self.scale;
            for (ib, &fb) in map.iter().enumerate() {
                let pab = pa * self.phase[fb];
                let row = &mut slab[fb * n..(fb + 1) * n];
                self.fwd.process_with_scratch(row, &mut self.scratch);
                for (c, x) in row.iter().enumerate() {
                    if !kept[c] {
                        dropped = dropped + x.norm_sqr();
                    }
                }
                let dst = &mut out[(ia * nc + ib) * nc..(ia * nc + ib + 1) * nc];
                for (&fc, y) in map.iter().zip(dst.iter_mut()) {
                    *y = row[fc] * (pab * self.phase[fc]);
                }
            }
        }
        let nt = T::of(n);
        (dropped_0 * nt * nt + dropped_1 * nt + dropped) * self.scale * self.scale
    }
}

/// Default relative bound on the imaginary part left by an inverse transform.
pub fn residue_tolerance<T: Real>() -> T {
    T::lit(1e-10).max(T::lit(1e4) * T::epsilon())
}

/// Unitary forward transform of a real field.
pub fn forward_transform<T: Real>(f: &VelocityField<T>) -> Result<SpectralField<T>, LatticeError> {
    check_finite(f.grid(), f.values().iter().copied())?;
    let mut t = Transform::new(f.grid().n_modes());
    let mut buf: Vec<C<T>> = f.values().iter().map(|&x| Complex::new(x, T::zero())).collect();
    t.forward(&mut buf);
    Ok(SpectralField {
        grid: *f.grid(),
        coeffs: buf,
    })
}

/// Inverse transform returning the complex samples unchanged.
pub fn inverse_transform_complex<T: Real>(
    spec: &SpectralField<T>,
) -> Result<Vec<C<T>>, LatticeError> {
    if let Some(i) = spec
        .coeffs()
        .iter()
        .position(|c| !(c.re.is_finite() && c.im.is_finite()))
    {
        return Err(LatticeError::NonFinite {
            index: i,
            cell: spec.grid().split(i),
        });
    }
    let mut t = Transform::new(spec.grid().n_modes());
    let mut buf = spec.coeffs().to_vec();
    t.inverse(&mut buf);
    Ok(buf)
}

/// Inverse transform to a real field. The imaginary part must be below
/// [`residue_tolerance`] times the field's max-abs; it is then discarded.
pub fn inverse_transform<T: Real>(spec: &SpectralField<T>) -> Result<VelocityField<T>, LatticeError> {
    let buf = inverse_transform_complex(spec)?;
    real_part_checked(*spec.grid(), buf)
}

pub(crate) fn real_part_checked<T: Real>(
    grid: GridSpec<T>,
    buf: Vec<C<T>>,
) -> Result<VelocityField<T>, LatticeError> {
    real_part_checked_with(grid, buf, T::zero())
}

/// As [`real_part_checked`], with the residue measured against at least
/// `reference`: the magnitude of the terms that cancelled to produce `buf`.
pub(crate) fn real_part_checked_with<T: Real>(
    grid: GridSpec<T>,
    buf: Vec<C<T>>,
    reference: T,
) -> Result<VelocityField<T>, LatticeError> {
    let scale = buf
        .iter()
        .fold(T::zero(), |m, c| m.max(c.re.abs()))
        .max(reference);
    let residue = buf.iter().fold(T::zero(), |m, c| m.max(c.im.abs()));
    if residue > residue_tolerance::<T>() * scale.max(T::min_positive_value()) {
        return Err(LatticeError::ImaginaryResidue {
            residue: residue.to_f64_lossy(),
            scale: scale.to_f64_lossy(),
        });
    }
    Ok(VelocityField {
        grid,
        values: buf.into_iter().map(|c| c.re).collect(),
    })
}

/// True if mode `k` survives `project_modes(_, n_keep)`: every axis satisfies
/// `-floor(n/2) <= k_i < n - floor(n/2)`.
#[inline]
pub fn keeps_mode(k: [i64; 3], n_keep: usize) -> bool {
    let lo = -((n_keep / 2) as i64);
    let hi = n_keep as i64 + lo;
    k.iter().all(|&ki| ki >= lo && ki < hi)
}

/// Orthogonal projection onto the lowest `n_keep` modes per axis. With
/// `n_keep = N` this is the identity; with even `n_keep` the kept set mirrors
/// the lattice's own `{-n/2, ..., n/2 - 1}` layout.
pub fn project_modes<T: Real>(
    spec: &SpectralField<T>,
    n_keep: usize,
) -> Result<SpectralField<T>, LatticeError> {
    let g = *spec.grid();
    if n_keep > g.n_modes() {
        return Err(LatticeError::ProjectionTooWide {
            n_keep,
            n_modes: g.n_modes(),
        });
    }
    let coeffs = spec
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, &c)| if keeps_mode(g.modes(i), n_keep) { c } else { cz() })
        .collect();
    Ok(SpectralField { grid: g, coeffs })
}

/// Multiplies mode `k` by `(i xi_{k,axis})^order`.
pub fn spectral_derivative<T: Real>(
    spec: &SpectralField<T>,
    axis: usize,
    order: u32,
) -> Result<SpectralField<T>, LatticeError> {
    if axis >= DIM || order == 0 {
        return Err(LatticeError::BadDerivative { axis, order });
    }
    let g = *spec.grid();
    let coeffs = spec
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, &c)| c * derivative_symbol(g.xi(g.split(i)[axis]), order))
        .collect();
    Ok(SpectralField { grid: g, coeffs })
}

/// `(i xi)^order`.
pub fn derivative_symbol<T: Real>(xi: T, order: u32) -> C<T> {
    let m = xi.powi(order as i32);
    match order % 4 {
        0 => Complex::new(m, T::zero()),
        1 => Complex::new(T::zero(), m),
        2 => Complex::new(-m, T::zero()),
        _ => Complex::new(T::zero(), -m),
    }
}

/// `sum_n f_n <v_n>^k dv^3` with `<v> = sqrt(1 + |v|^2)`; `k = 0` gives the
/// discrete mass.
pub fn quadrature<T: Real>(f: &VelocityField<T>, weight_exponent: T) -> T {
    let g = f.grid();
    let half = weight_exponent / T::lit(2.0);
    let s: T = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if weight_exponent == T::zero() {
                x
            } else {
                let v = g.velocity(i);
                x * (T::one() + v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).powf(half)
            }
        })
        .sum();
    s * g.cell_volume()
}

/// Search settings for [`choose_domain`].
#[derive(Debug, Clone, Copy)]
pub struct DomainSearch {
    pub step: f64,
    pub cap: f64,
}

impl Default for DomainSearch {
    fn default() -> Self {
        Self { step: 0.25, cap: 64.0 }
    }
}

/// Smallest `L_v` on the search grid for which the bounding Gaussian
/// `C rho0 (2 pi T0)^{-3/2} exp(-r |v|^2 / (2 T0))`, weighted by `<v>^2`,
/// carries at most `tail_tol` times its in-cube value outside the cube.
///
/// The prefactor `C rho0` cancels in that ratio, so only `r / T0` matters.
pub fn choose_domain(
    rho0: f64,
    t0: f64,
    stretch_c: f64,
    dilate_r: f64,
    tail_tol: f64,
) -> Result<f64, LatticeError> {
    choose_domain_with(rho0, t0, stretch_c, dilate_r, tail_tol, DomainSearch::default())
}

pub fn choose_domain_with(
    rho0: f64,
    t0: f64,
    stretch_c: f64,
    dilate_r: f64,
    tail_tol: f64,
    search: DomainSearch,
) -> Result<f64, LatticeError> {
    let bad = |m: &str| Err(LatticeError::BadDomainParams(m.to_string()));
    if !(rho0 > 0.0 && t0 > 0.0 && dilate_r > 0.0) {
        return bad("rho0, T0 and r must be positive");
    }
    if !(stretch_c >= 1.0) {
        return bad("stretch C must be >= 1");
    }
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return bad("tail tolerance must lie in (0, 1)");
    }
    let a = dilate_r / (2.0 * t0);
    let mut k = 1usize;
    loop {
        let l = search.step * k as f64;
        if l > search.cap {
            return Err(LatticeError::DomainCapExceeded {
                tol: tail_tol,
                cap: search.cap,
            });
        }
        let (inside, outside) = gaussian_energy_split(a, l);
        if outside <= tail_tol * inside {
            return Ok(l);
        }
        k += 1;
    }
}

/// `(int_cube, int_outside)` of `exp(-a |v|^2) (1 + |v|^2)` for the cube
/// `(-l, l)^3`, both evaluated without cancellation.
fn gaussian_energy_split(a: f64, l: f64) -> (f64, f64) {
    let s = a.sqrt();
    let full0 = (PI / a).sqrt();
    let full2 = full0 / (2.0 * a);
    let edge = 2.0 * l * (-a * l * l).exp();
    let in0 = full0 * erf(s * l);
    let out0 = full0 * erfc(s * l);
    let in2 = (in0 - edge) / (2.0 * a);
    let out2 = (out0 + edge) / (2.0 * a);
    let inside = in0.powi(3) + 3.0 * in2 * in0 * in0;
    let outside = out0 * (full0 * full0 + full0 * in0 + in0 * in0)
        + 3.0 * (full2 * out0 * (full0 + in0) + in0 * in0 * out2);
    (inside, outside)
}
