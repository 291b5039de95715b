//! Scalar abstraction.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst};
use rustfft::FftNum;

/// Floating-point scalar usable by every solver component: FFT-capable,
/// thread-safe, and convertible from `f64` literals.
pub trait Real:
    Float + FloatConst + FftNum + Sum + Default + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Converts an `f64` constant. Never fails for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Converts a count or index.
    #[inline]
    fn of(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Float + FloatConst + FftNum + Sum + Default + Display + LowerExp + Debug + Send + Sync + 'static
{
}

pub type C<T> = Complex<T>;

#[inline]
pub(crate) fn cz<T: Real>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

/// Relative error `|a - b| / max(|b|, floor)`.
pub fn rel_err<T: Real>(a: T, b: T, floor: T) -> T {
    (a - b).abs() / b.abs().max(floor)
}
