//! Scalar abstraction shared by the numerical modules.
//!
//! Everything floating-point is written against [`Real`], implemented for
//! `f32` and `f64`. Complex amplitudes are `Complex<T>`. Exact arithmetic
//! (rationals, cyclotomic numbers) lives in [`crate::cyclotomic`] and plugs
//! into the generic linear solvers through [`crate::exact::SolveField`].

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar used by the numerical kernels.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Default {
    /// Lossy conversion from an `f64` constant.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal fits the scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Smallest tolerance that is meaningful at this precision.
    fn floor_tol(requested: f64) -> Self {
        let eps = Self::default_epsilon().as_f64();
        Self::lit(requested.max(64.0 * eps))
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Cx<T> = Complex<T>;

pub fn cx<T: Real>(re: f64, im: f64) -> Cx<T> {
    Complex::new(T::lit(re), T::lit(im))
}

pub fn re<T: Real>(x: T) -> Cx<T> {
    Complex::new(x, T::zero())
}
