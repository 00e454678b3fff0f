//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real field the analytic code is generic over.
///
/// The two tolerance hooks scale the fixed thresholds used throughout
/// (identities that should hold to rounding, and results of linear solves)
/// to the precision of the type.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Tolerance for identities that hold up to rounding (row sums, moments).
    fn exact_tol() -> Self;

    /// Tolerance for quantities produced by a linear solve.
    fn solve_tol() -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f64 {
    fn exact_tol() -> Self {
        1e-12
    }
    fn solve_tol() -> Self {
        1e-10
    }
}

impl Scalar for f32 {
    fn exact_tol() -> Self {
        1e-5
    }
    fn solve_tol() -> Self {
        1e-4
    }
}
