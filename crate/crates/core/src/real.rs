//! Scalar abstraction: every numeric routine in this crate is generic over
//! [`Real`], instantiated as `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
///
/// Test suites run at `f64` (finite-difference gradient checks need the
/// headroom); training configurations may pick `f32`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Real")
    }

    /// Widen to `f64` for reporting and mixed-precision reductions.
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Real widens to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Free-function form of [`Real::c`], handy in generic expressions.
#[inline]
pub fn real<T: Real>(v: f64) -> T {
    T::c(v)
}
