//! Scalar abstraction shared by every numerical module.
//!
//! All algorithms are written once over [`Real`] and instantiated for `f32` and
//! `f64`. Tolerances throughout the crate are stated for `f64`; [`Real::tol`]
//! maps them to the same fraction of the available digits in single precision.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the solvers: `f32` or `f64`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    /// Lossy conversion to `f64` for reporting and file output.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// A tolerance given for double precision, mapped to this type.
    ///
    /// `tol = ε₆₄^k` becomes `ε^k`, so 1e-10 in `f64` turns into about 4e-5
    /// in `f32`.
    #[inline]
    fn tol(f64_tol: f64) -> Self {
        let eps = Self::default_epsilon().as_f64();
        if eps <= f64::EPSILON || f64_tol >= 1.0 || f64_tol <= 0.0 {
            return Self::lit(f64_tol);
        }
        let k = f64_tol.ln() / f64::EPSILON.ln();
        Self::lit(eps.powf(k))
    }

    fn is_finite_val(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl Real for f32 {}
impl Real for f64 {}
