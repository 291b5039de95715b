//! Discrete conservation of mass, momentum and energy.
//!
//! With `A` the `5 x N^3` matrix whose rows are the collision invariants
//! `1, v_1, v_2, v_3, |v|^2` times the cell volume, the conserved operator is
//! the orthogonal projection `q - A^T (A A^T)^{-1} A q`. Only the 5x5 Gram
//! matrix is ever factorized.

use thiserror::Error;

use crate::lattice::{GridSpec, VelocityField};
use crate::num::Real;

/// Number of collision invariants in three dimensions.
pub const N_INVARIANTS: usize = 5;

type Mat5<T> = [[T; N_INVARIANTS]; N_INVARIANTS];
type Vec5<T> = [T; N_INVARIANTS];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConserveError {
    #[error("field grid does not match the conservation grid")]
    GridMismatch,
    #[error("Gram matrix is numerically singular (condition estimate {condition:e})")]
    Singular { condition: f64 },
}

/// Invariant `k` evaluated at `v`.
pub fn invariant<T: Real>(k: usize, v: [T; 3]) -> T {
    match k {
        0 => T::one(),
        1..=3 => v[k - 1],
        4 => v[0] * v[0] + v[1] * v[1] + v[2] * v[2],
        _ => panic!("invariant index {k} out of range"),
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite 5x5.
fn cholesky<T: Real>(m: &Mat5<T>) -> Option<Mat5<T>> {
    let mut l = [[T::zero(); N_INVARIANTS]; N_INVARIANTS];
    for i in 0..N_INVARIANTS {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve<T: Real>(l: &Mat5<T>, b: &Vec5<T>) -> Vec5<T> {
    let mut y = [T::zero(); N_INVARIANTS];
    for i in 0..N_INVARIANTS {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [T::zero(); N_INVARIANTS];
    for i in (0..N_INVARIANTS).rev() {
        let mut s = y[i];
        for k in i + 1..N_INVARIANTS {
            s = s - l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

fn mat_vec<T: Real>(m: &Mat5<T>, x: &Vec5<T>) -> Vec5<T> {
    std::array::from_fn(|i| (0..N_INVARIANTS).map(|j| m[i][j] * x[j]).sum())
}

fn norm5<T: Real>(x: &Vec5<T>) -> T {
    x.iter().map(|&a| a * a).sum::<T>().sqrt()
}

/// Two-norm condition number by power iteration on `G` and on `G^{-1}`.
fn condition_estimate<T: Real>(g: &Mat5<T>, l: Option<&Mat5<T>>) -> f64 {
    let start: Vec5<T> = std::array::from_fn(|i| T::one() + T::lit(0.1) * T::of(i));
    let mut x = start;
    let mut lmax = T::zero();
    for _ in 0..200 {
        let y = mat_vec(g, &x);
        let n = norm5(&y);
        if n == T::zero() {
            return f64::INFINITY;
        }
        lmax = n / norm5(&x);
        x = y.map(|a| a / n);
    }
    let Some(l) = l else {
        return f64::INFINITY;
    };
    let mut x = start;
    let mut inv_max = T::zero();
    for _ in 0..200 {
        let y = cholesky_solve(l, &x);
        let n = norm5(&y);
        inv_max = n / norm5(&x);
        x = y.map(|a| a / n);
    }
    (lmax * inv_max).to_f64_lossy()
}

/// Gram factorizations for the two equivalent forms of the correction.
#[derive(Debug, Clone)]
pub struct ConservationOperator<T> {
    grid: GridSpec<T>,
    a_rows: [Vec<T>; N_INVARIANTS],
    gram: Mat5<T>,
    gram_factor: Mat5<T>,
    moment_factor: Mat5<T>,
    condition: f64,
}

/// Builds the operator for `grid`.
pub fn build_conservation<T: Real>(grid: GridSpec<T>) -> Result<ConservationOperator<T>, ConserveError> {
    ConservationOperator::new(grid)
}

impl<T: Real> ConservationOperator<T> {
    pub fn new(grid: GridSpec<T>) -> Result<Self, ConserveError> {
        let w = grid.cell_volume();
        let a_rows: [Vec<T>; N_INVARIANTS] = std::array::from_fn(|k| {
            (0..grid.len())
                .map(|i| invariant(k, grid.velocity(i)) * w)
                .collect()
        });
        let gram: Mat5<T> = std::array::from_fn(|i| {
            std::array::from_fn(|j| dot(&a_rows[i], &a_rows[j]))
        });
        // Same system in the moment basis: <phi_i, phi_j> = gram / dv^3.
        let moment: Mat5<T> = gram.map(|row| row.map(|x| x / w));
        let factor = cholesky(&gram);
        let condition = condition_estimate(&gram, factor.as_ref());
        let singular_limit = 0.01 / T::epsilon().to_f64_lossy();
        let (Some(gram_factor), Some(moment_factor)) = (factor, cholesky(&moment)) else {
            return Err(ConserveError::Singular { condition });
        };
        if !(condition < singular_limit) {
            return Err(ConserveError::Singular { condition });
        }
        Ok(Self {
            grid,
            a_rows,
            gram,
            gram_factor,
            moment_factor,
            condition,
        })
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    /// Row `k` of `A`.
    pub fn row(&self, k: usize) -> &[T] {
        &self.a_rows[k]
    }

    pub fn gram(&self) -> &Mat5<T> {
        &self.gram
    }

    pub fn gram_factor(&self) -> &Mat5<T> {
        &self.gram_factor
    }

    /// Two-norm condition number of the Gram matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Max-entry residual `|A A^T - L L^T|`.
    pub fn factor_residual(&self) -> T {
        let l = &self.gram_factor;
        let mut worst = T::zero();
        for i in 0..N_INVARIANTS {
            for j in 0..N_INVARIANTS {
                let s: T = (0..N_INVARIANTS).map(|k| l[i][k] * l[j][k]).sum();
                worst = worst.max((s - self.gram[i][j]).abs());
            }
        }
        worst
    }

    /// Frobenius norm of `A`.
    pub fn a_norm(&self) -> T {
        (0..N_INVARIANTS).map(|k| self.gram[k][k]).sum::<T>().sqrt()
    }

    fn check(&self, q: &VelocityField<T>) -> Result<(), ConserveError> {
        if q.grid().same_as(&self.grid) {
            Ok(())
        } else {
            Err(ConserveError::GridMismatch)
        }
    }

    /// `A q`: the discrete mass, momentum and energy of `q`.
    pub fn apply_a(&self, q: &VelocityField<T>) -> Result<Vec5<T>, ConserveError> {
        self.check(q)?;
        Ok(std::array::from_fn(|k| dot(&self.a_rows[k], q.values())))
    }

    /// `Lambda q`. A second correction pass removes the rounding left by
    /// the first, which matters when `q` is far from conservative.
    pub fn project(&self, q: &VelocityField<T>) -> Result<VelocityField<T>, ConserveError> {
        let mut out = q.clone();
        for _ in 0..2 {
            let r = self.apply_a(&out)?;
            let beta = cholesky_solve(&self.gram_factor, &r);
            let vals = out.values_mut();
            for (k, &b) in beta.iter().enumerate() {
                if b == T::zero() {
                    continue;
                }
                for (v, &a) in vals.iter_mut().zip(&self.a_rows[k]) {
                    *v = *v - b * a;
                }
            }
        }
        Ok(out)
    }

    /// The same projection written as `q - (1/2)(g_1 + g_2 v_1 + g_3 v_2 +
    /// g_4 v_3 + g_5 |v|^2)`, with the multipliers solved in the moment basis.
    pub fn gamma_correction(
        &self,
        q: &VelocityField<T>,
    ) -> Result<(Vec5<T>, VelocityField<T>), ConserveError> {
        self.check(q)?;
        let half = T::lit(0.5);
        let mut gammas = [T::zero(); N_INVARIANTS];
        let mut out = q.clone();
        for _ in 0..2 {
            let moments: Vec5<T> = std::array::from_fn(|k| dot(&self.a_rows[k], out.values()));
            let half_gamma = cholesky_solve(&self.moment_factor, &moments);
            let vals = out.values_mut();
            for (i, v) in vals.iter_mut().enumerate() {
                let vel = self.grid.velocity(i);
                let poly: T = (0..N_INVARIANTS).map(|k| half_gamma[k] * invariant(k, vel)).sum();
                *v = *v - poly;
            }
            for k in 0..N_INVARIANTS {
                gammas[k] = gammas[k] + half_gamma[k] / half;
            }
        }
        Ok((gammas, out))
    }

    /// `||q - Lambda q||_2` in the discrete `L^2` norm.
    pub fn correction_norm(&self, q: &VelocityField<T>) -> Result<T, ConserveError> {
        let p = self.project(q)?;
        Ok(q.axpy(-T::one(), &p).l2_norm())
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> GridSpec<f64> {
        GridSpec::new(n, 4.0).unwrap()
    }

    fn random_field(g: GridSpec<f64>, seed: u64) -> VelocityField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        VelocityField::new(g, vals).unwrap()
    }

    #[test]
    fn gram_entries() {
        let g = grid(8);
        let op = ConservationOperator::new(g).unwrap();
        let dv3 = g.cell_volume();
        assert!(op.row(0).iter().all(|&x| x == dv3));
        let expect = g.len() as f64 * dv3 * dv3;
        assert!((op.gram()[0][0] - expect).abs() < 1e-12 * expect);
        for j in 1..4 {
            assert!(op.gram()[0][j].abs() < 1e-12 * expect);
        }
        assert!(op.factor_residual() <= 1e-12 * op.a_norm().powi(2));
        assert!(op.condition().is_finite() && op.condition() >= 1.0);
    }

    #[test]
    fn projection_annihilates_moments() {
        let g = grid(8);
        let op = ConservationOperator::new(g).unwrap();
        let q = random_field(g, 3);
        let p = op.project(&q).unwrap();
        let bound = 1e-12 * op.a_norm() * q.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        for r in op.apply_a(&p).unwrap() {
            assert!(r.abs() <= bound, "{r:e} vs {bound:e}");
        }
    }

    #[test]
    fn conservative_input_is_fixed() {
        let g = grid(8);
        let op = ConservationOperator::new(g).unwrap();
        let p = op.project(&random_field(g, 5)).unwrap();
        let pp = op.project(&p).unwrap();
        let scale = p.max_abs();
        for (a, b) in p.values().iter().zip(pp.values()) {
            assert!((a - b).abs() <= 1e-14 * scale.max(1.0));
        }
        assert!(op.correction_norm(&p).unwrap() < 1e-13);
        let (gam, _) = op.gamma_correction(&p).unwrap();
        let qn = p.l2_norm();
        assert!(gam.iter().all(|x| x.abs() <= 1e-13 * qn));
    }

    #[test]
    fn invariant_field_is_removed() {
        let g = grid(8);
        let op = ConservationOperator::new(g).unwrap();
        let q = VelocityField::from_fn(g, |v| invariant(4, v));
        let p = op.project(&q).unwrap();
        assert!(p.max_abs() < 1e-12 * q.max_abs());
    }

    #[test]
    fn bases_agree() {
        let g = grid(10);
        let op = ConservationOperator::new(g).unwrap();
        let q = random_field(g, 11);
        let p = op.project(&q).unwrap();
        let (_, c) = op.gamma_correction(&q).unwrap();
        let diff = p.axpy(-1.0, &c).l2_norm();
        assert!(diff <= 1e-12 * q.l2_norm(), "{diff:e} {:e}", q.l2_norm());
    }

    #[test]
    fn correction_norm_is_homogeneous() {
        let g = grid(8);
        let op = ConservationOperator::new(g).unwrap();
        let q = random_field(g, 2);
        let a = op.correction_norm(&q).unwrap();
        let b = op.correction_norm(&q.scaled(-3.0)).unwrap();
        assert!((b - 3.0 * a).abs() <= 1e-12 * b);
    }

    #[test]
    fn grid_mismatch() {
        let op = ConservationOperator::new(grid(8)).unwrap();
        let q = VelocityField::zeros(grid(10));
        assert_eq!(op.project(&q).unwrap_err(), ConserveError::GridMismatch);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = [[0.0; 5]; 5];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        m[4][4] = -1.0;
        assert!(cholesky(&m).is_none());
    }
}
