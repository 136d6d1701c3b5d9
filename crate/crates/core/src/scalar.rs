//! Scalar abstraction shared by every numeric kernel in the crate.
//!
//! All closed-form functions, quadrature rules and matrix types are written
//! against [`Real`], so they run at either `f32` or `f64` precision. The
//! accuracy targets quoted in the docs (for example `1e-12` on the normal
//! CDF) are `f64` targets; `f32` instantiations are useful for fast sweeps
//! only.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
    /// Complementary error function at this precision.
    fn erfc(self) -> Self;

    /// Tolerance a quadrature of this precision can reasonably reach.
    fn quad_tolerance() -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }
}

impl Real for f64 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }

    fn quad_tolerance() -> Self {
        1e-13
    }
}

impl Real for f32 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }

    fn quad_tolerance() -> Self {
        1e-6
    }
}
