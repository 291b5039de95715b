//! Spectral evaluation of the Landau collision operator.
//!
//! In Fourier space the operator is the weighted convolution
//!
//! ```text
//! Q^(xi) = sum_w f^(xi - w) f^(w) [ w^T S^(w) w - (xi - w)^T S^(w) (xi - w) ]
//! ```
//!
//! Expanding the bracket splits it into one convolution of `f^` with
//! `(w^T S^ w) f^` and six convolutions of `u_p u_q f^(u)` with
//! `S^_pq(w) f^(w)`. Each is a pointwise product on a zero-padded grid, so a
//! full evaluation costs fifteen FFTs of size `M^3` with `M ~ 3N/2`.

use std::f64::consts::PI;

use num_complex::Complex;
use thiserror::Error;

use crate::lattice::{
    real_part_checked_with, residue_tolerance, Embedding, GridSpec, LatticeError, SpectralField, Transform,
    VelocityField,
};
use crate::num::{cz, Real, C};
use crate::weights::{WeightError, WeightTable, COMPONENTS};

pub mod oracle;

#[derive(Debug, Error)]
pub enum CollisionError {
    #[error("field grid does not match the workspace grid")]
    GridMismatch,
    #[error("weight table was built for N = {table}, workspace needs N = {grid}")]
    TableMismatch { table: usize, grid: usize },
    #[error("operator output left imaginary residue {residue:e} (max {scale:e})")]
    Residue { residue: f64, scale: f64 },
    #[error("oracle limited to N <= {max}, got {n}")]
    OracleTooLarge { n: usize, max: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Kernel(#[from] WeightError),
}

/// Shape of the cut-off `chi` applied before the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CutoffMode {
    /// `chi = 1` everywhere.
    #[default]
    Identity,
    /// Tensor-product quintic ramp: 1 on `(1 - d) Omega`, 0 outside
    /// `(1 - d/5) Omega`, `C^2` in between.
    Smoothstep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffFunction {
    pub mode: CutoffMode,
    pub delta_chi: f64,
}

impl Default for CutoffFunction {
    fn default() -> Self {
        Self {
            mode: CutoffMode::Identity,
            delta_chi: 0.1,
        }
    }
}

impl CutoffFunction {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn smoothstep(delta_chi: f64) -> Self {
        assert!(delta_chi > 0.0 && delta_chi < 0.5, "delta_chi must lie in (0, 1/2)");
        Self {
            mode: CutoffMode::Smoothstep,
            delta_chi,
        }
    }

    /// One-dimensional profile at `x = v_i / L`.
    fn profile(&self, x: f64) -> f64 {
        let inner = 1.0 - self.delta_chi;
        let outer = 1.0 - self.delta_chi / 5.0;
        let a = x.abs();
        if a <= inner {
            1.0
        } else if a >= outer {
            0.0
        } else {
            let t = (outer - a) / (outer - inner);
            t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
        }
    }

    pub fn value<T: Real>(&self, v: [T; 3], half_length: T) -> T {
        match self.mode {
            CutoffMode::Identity => T::one(),
            CutoffMode::Smoothstep => {
                let l = half_length.to_f64_lossy();
                T::lit(v.iter().map(|x| self.profile(x.to_f64_lossy() / l)).product())
            }
        }
    }

    pub fn apply<T: Real>(&self, g: &VelocityField<T>) -> VelocityField<T> {
        match self.mode {
            CutoffMode::Identity => g.clone(),
            CutoffMode::Smoothstep => {
                let grid = *g.grid();
                let mut out = g.clone();
                for (i, x) in out.values_mut().iter_mut().enumerate() {
                    *x = *x * self.value(grid.velocity(i), grid.half_length());
                }
                out
            }
        }
    }
}

/// Padded lattice size: the smallest even `M >= 3N/2`, enough that no
/// wrapped product term lands on a retained mode.
pub fn padded_size(n: usize) -> usize {
    let m = (3 * n).div_ceil(2);
    m + m % 2
}

/// Buffers and plans for repeated operator evaluation on one grid.
pub struct CollisionWorkspace<T: Real> {
    grid: GridSpec<T>,
    fine: GridSpec<T>,
    padding: bool,
    checksum: u64,
    s_hat: Vec<[T; 6]>,
    a_scalar: Vec<T>,
    xi: Vec<T>,
    embedding: Embedding,
    coarse_fft: Transform<T>,
    fine_fft: Transform<T>,
    base: Vec<C<T>>,
    acc: Vec<C<T>>,
    left: Vec<C<T>>,
    right: Vec<C<T>>,
    spec: Vec<C<T>>,
    scaled: Vec<C<T>>,
    magnitude: Vec<T>,
    last_tail: T,
    last_scale: T,
}

impl<T: Real> CollisionWorkspace<T> {
    pub fn new(table: &WeightTable, padding: bool) -> Self {
        let grid: GridSpec<T> = table.grid().cast();
        let n = grid.n_modes();
        let m = if padding { padded_size(n) } else { n };
        let fine = grid.refined(m);
        let cast6 = |s: &[f64; 6]| std::array::from_fn(|c| T::lit(s[c]));
        Self {
            grid,
            fine,
            padding,
            checksum: table.checksum(),
            s_hat: table.s_hat().iter().map(cast6).collect(),
            a_scalar: table.a_scalar().iter().map(|&a| T::lit(a)).collect(),
            xi: (0..n).map(|j| grid.xi(j)).collect(),
            embedding: Embedding::new(n, m),
            coarse_fft: Transform::new(n),
            fine_fft: Transform::new(m),
            base: vec![cz(); fine.len()],
            acc: vec![cz(); fine.len()],
            left: vec![cz(); fine.len()],
            right: vec![cz(); fine.len()],
            spec: vec![cz(); grid.len()],
            scaled: vec![cz(); grid.len()],
            magnitude: vec![T::zero(); fine.len()],
            last_tail: T::zero(),
            last_scale: T::zero(),
        }
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }
    pub fn padded_grid(&self) -> &GridSpec<T> {
        &self.fine
    }
    pub fn padding(&self) -> bool {
        self.padding
    }
    pub fn table_checksum(&self) -> u64 {
        self.checksum
    }

    /// Norm of the product-spectrum energy that fell outside the retained
    /// modes in the most recent evaluation: a proxy for `||(1 - Pi) Q^||`.
    /// Always zero without padding.
    pub fn last_tail_norm(&self) -> T {
        self.last_tail
    }

    /// `Q^` of the given coefficients (unitary convention), full `N`-lattice
    /// output.
    pub fn q_hat(&mut self, spec: &SpectralField<T>) -> Result<SpectralField<T>, CollisionError> {
        if !spec.grid().same_as(&self.grid) {
            return Err(CollisionError::GridMismatch);
        }
        self.spec.copy_from_slice(spec.coeffs());
        self.evaluate_spec();
        Ok(SpectralField::new(self.grid, self.spec.clone())?)
    }

    /// Computes `Q^` from `self.spec` in place.
    fn evaluate_spec(&mut self) {
        let n3 = self.grid.len();
        let n = self.grid.n_modes();
        let fine_len = self.fine.len();

        self.fine_fft.inverse_embedded(&self.embedding, &self.spec, &mut self.base);

        for i in 0..n3 {
            self.scaled[i] = self.spec[i] * self.a_scalar[i];
        }
        self.fine_fft.inverse_embedded(&self.embedding, &self.scaled, &mut self.left);
        for j in 0..fine_len {
            self.acc[j] = self.base[j] * self.left[j];
            self.magnitude[j] = self.acc[j].norm();
        }

        for (c, &(p, q)) in COMPONENTS.iter().enumerate() {
            let weight = if p == q { T::one() } else { T::lit(2.0) };
            for i in 0..n3 {
                let idx = [i / (n * n), (i / n) % n, i % n];
                let uu = self.xi[idx[p]] * self.xi[idx[q]];
                self.scaled[i] = self.spec[i] * uu;
            }
            self.fine_fft.inverse_embedded(&self.embedding, &self.scaled, &mut self.left);
            for i in 0..n3 {
                self.scaled[i] = self.spec[i] * self.s_hat[i][c];
            }
            self.fine_fft.inverse_embedded(&self.embedding, &self.scaled, &mut self.right);
            for j in 0..fine_len {
                let term = self.left[j] * self.right[j] * weight;
                self.acc[j] = self.acc[j] - term;
                self.magnitude[j] = self.magnitude[j] + term.norm();
            }
        }

        let peak = self.magnitude.iter().fold(T::zero(), |a, &b| a.max(b));
        self.finish(peak);
    }

    /// As [`Self::evaluate_spec`] for the coefficients of a real field with
    /// the unpaired Nyquist planes removed. Every padded factor is then a
    /// real field, and since the weights are real, `ifft(F (w1 + i w2))` has
    /// `ifft(w1 F)` as its real part and `ifft(w2 F)` as its imaginary part:
    /// seven inverse transforms instead of fourteen.
    fn evaluate_real(&mut self) {
        let n3 = self.grid.len();
        let n = self.grid.n_modes();

        for i in 0..n3 {
            self.scaled[i] = self.spec[i] * Complex::new(T::one(), self.a_scalar[i]);
        }
        // The imaginary half of `acc` collects the magnitude of the terms.
        let acc = &mut self.acc;
        self.fine_fft
            .inverse_embedded_visit(&self.embedding, &self.scaled, &mut self.base, |_, j, x| {
                let t = x.re * x.im;
                acc[j] = Complex::new(t, t.abs());
            });

        for (c, &(p, q)) in COMPONENTS.iter().enumerate() {
            let weight = if p == q { T::one() } else { T::lit(2.0) };
            for i in 0..n3 {
                let idx = [i / (n * n), (i / n) % n, i % n];
                let uu = self.xi[idx[p]] * self.xi[idx[q]];
                self.scaled[i] = self.spec[i] * Complex::new(uu, self.s_hat[i][c]);
            }
            let acc = &mut self.acc;
            self.fine_fft
                .inverse_embedded_visit(&self.embedding, &self.scaled, &mut self.base, |_, j, x| {
                    let t = x.re * x.im * weight;
                    let a = &mut acc[j];
                    *a = Complex::new(a.re - t, a.im + t.abs());
                });
        }
        let mut peak = T::zero();
        for a in self.acc.iter_mut() {
            peak = peak.max(a.im);
            a.im = T::zero();
        }
        self.finish(peak);
    }

    /// Transforms the accumulated product back and restricts it to the
    /// retained modes, recording the discarded tail.
    fn finish(&mut self, peak: T) {
        let n = self.grid.n_modes();
        let dropped = self
            .fine_fft
            .forward_restricted(&self.embedding, &mut self.acc, &mut self.spec);
        // sum_{k+k'=xi} A_k B_k' = M^{3/2} P'_xi on the fine grid; the
        // quadrature factor is (2 pi / N)^{3/2}.
        let m = self.fine.n_modes() as f64;
        let factor = T::lit((2.0 * PI * m / n as f64).powf(1.5));
        // Size of the uncancelled terms, in coarse-grid physical units.
        self.last_scale = peak * factor * T::lit((m / n as f64).powf(1.5));
        for c in self.spec.iter_mut() {
            *c = *c * factor;
        }
        self.last_tail = (dropped * factor * factor * self.grid.cell_volume()).sqrt();
    }

    /// `Q_u(g, g) = Pi^N Q(chi g, chi g)` as a real field.
    ///
    /// The unpaired `-N/2` planes are dropped from both input and output so
    /// the retained set is symmetric and the result exactly real.
    pub fn q_unconserved(
        &mut self,
        g: &VelocityField<T>,
        chi: &CutoffFunction,
    ) -> Result<VelocityField<T>, CollisionError> {
        if !g.grid().same_as(&self.grid) {
            return Err(CollisionError::GridMismatch);
        }
        let h = chi.apply(g);
        if let Some(i) = h.values().iter().position(|x| !x.is_finite()) {
            return Err(LatticeError::NonFinite {
                index: i,
                cell: self.grid.split(i),
            }
            .into());
        }
        for (c, &x) in self.spec.iter_mut().zip(h.values()) {
            *c = Complex::new(x, T::zero());
        }
        self.coarse_fft.forward(&mut self.spec);
        self.drop_nyquist();
        self.evaluate_real();
        self.drop_nyquist();
        let mut out = self.spec.clone();
        self.coarse_fft.inverse(&mut out);
        real_part_checked_with(self.grid, out, self.last_scale).map_err(|e| match e {
            LatticeError::ImaginaryResidue { residue, scale } => {
                CollisionError::Residue { residue, scale }
            }
            other => other.into(),
        })
    }

    fn drop_nyquist(&mut self) {
        let h = self.grid.n_modes() / 2;
        let n = self.grid.n_modes();
        for (i, c) in self.spec.iter_mut().enumerate() {
            if i / (n * n) == h || (i / n) % n == h || i % n == h {
                *c = cz();
            }
        }
    }

    /// Spectral approximations of `a_bar = a * g` (in [`COMPONENTS`] order)
    /// and of `c_bar` as the convolution of `div div a` with `g`, sampled on
    /// the grid. Used to estimate the stiffness of the semi-discrete system.
    pub fn coefficient_fields(
        &mut self,
        g: &VelocityField<T>,
    ) -> Result<([Vec<T>; 6], Vec<T>), CollisionError> {
        if !g.grid().same_as(&self.grid) {
            return Err(CollisionError::GridMismatch);
        }
        for (c, &x) in self.spec.iter_mut().zip(g.values()) {
            *c = Complex::new(x, T::zero());
        }
        self.coarse_fft.forward(&mut self.spec);
        self.drop_nyquist();
        let scale = T::lit((2.0 * PI).powf(1.5));
        let mut a: [Vec<T>; 6] = std::array::from_fn(|_| Vec::new());
        for (c, out) in a.iter_mut().enumerate() {
            for i in 0..self.spec.len() {
                self.scaled[i] = self.spec[i] * (self.s_hat[i][c] * scale);
            }
            self.coarse_fft.inverse(&mut self.scaled);
            *out = self.scaled.iter().map(|z| z.re).collect();
        }
        for i in 0..self.spec.len() {
            self.scaled[i] = self.spec[i] * (-self.a_scalar[i] * scale);
        }
        self.coarse_fft.inverse(&mut self.scaled);
        let c = self.scaled.iter().map(|z| z.re).collect();
        Ok((a, c))
    }

    /// Tolerance used by the residue check, exposed for diagnostics.
    pub fn residue_tolerance(&self) -> T {
        residue_tolerance::<T>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{build_table, KernelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn workspace(n: usize, l: f64, lambda: f64) -> CollisionWorkspace<f64> {
        let g = GridSpec::new(n, l).unwrap();
        let t = build_table(&g, &KernelParams::for_grid(lambda, &g).unwrap()).unwrap();
        CollisionWorkspace::new(&t, true)
    }

    #[test]
    fn padded_sizes() {
        assert_eq!(padded_size(8), 12);
        assert_eq!(padded_size(10), 16);
        assert_eq!(padded_size(16), 24);
        assert_eq!(padded_size(64), 96);
    }

    #[test]
    fn zero_in_zero_out() {
        let mut ws = workspace(8, 3.0, 1.0);
        let g = *ws.grid();
        let q = ws.q_unconserved(&VelocityField::zeros(g), &CutoffFunction::identity()).unwrap();
        assert!(q.values().iter().all(|&x| x == 0.0));
        let s = ws.q_hat(&SpectralField::zeros(g)).unwrap();
        assert!(s.coeffs().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn quadratic_homogeneity() {
        let mut ws = workspace(8, 3.0, 0.5);
        let g = *ws.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = VelocityField::new(g, (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect())
            .unwrap();
        let chi = CutoffFunction::identity();
        let q1 = ws.q_unconserved(&f, &chi).unwrap();
        let q2 = ws.q_unconserved(&f.scaled(2.0), &chi).unwrap();
        let scale = q1.max_abs();
        for (a, b) in q1.values().iter().zip(q2.values()) {
            assert!((4.0 * a - b).abs() <= 1e-12 * 4.0 * scale);
        }
    }

    #[test]
    fn packed_path_matches_complex_path() {
        for &pad in &[true, false] {
            let g = GridSpec::new(8, 3.0).unwrap();
            let t = build_table(&g, &KernelParams::for_grid(1.0, &g).unwrap()).unwrap();
            let mut ws = CollisionWorkspace::<f64>::new(&t, pad);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let f = VelocityField::new(g, (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect())
                .unwrap();
            let mut spec = crate::lattice::forward_transform(&f).unwrap();
            spec.drop_nyquist();
            let smooth = crate::lattice::inverse_transform(&spec).unwrap();
            let packed = ws.q_unconserved(&smooth, &CutoffFunction::identity()).unwrap();
            let mut general = ws.q_hat(&spec).unwrap();
            general.drop_nyquist();
            let general = crate::lattice::inverse_transform(&general).unwrap();
            let scale = general.max_abs();
            for (a, b) in packed.values().iter().zip(general.values()) {
                assert!((a - b).abs() <= 1e-11 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let mut ws = workspace(8, 3.0, 1.0);
        let other = GridSpec::new(8, 2.0).unwrap();
        assert!(matches!(
            ws.q_unconserved(&VelocityField::zeros(other), &CutoffFunction::identity()),
            Err(CollisionError::GridMismatch)
        ));
    }

    #[test]
    fn smoothstep_profile() {
        let chi = CutoffFunction::smoothstep(0.2);
        let l = 2.0;
        assert_eq!(chi.value([0.0, 0.0, 0.0], l), 1.0);
        assert_eq!(chi.value([1.6, 0.0, 0.0], l), 1.0);
        assert_eq!(chi.value([1.93, 0.0, 0.0], l), 0.0);
        let mid: f64 = chi.value([1.7, 0.0, 0.0], l);
        assert!(mid > 0.0 && mid < 1.0);
        let mut last = 1.0;
        for i in 0..100 {
            let x = 1.6 + 0.0033 * i as f64;
            let v: f64 = chi.value([x, 0.0, 0.0], l);
            assert!(v <= last + 1e-15 && (0.0..=1.0).contains(&v));
            last = v;
        }
    }
}
