//! Floating-point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the solvers and models are written against: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Absolute primal feasibility tolerance used by the LP solver.
    const FEASIBILITY_TOL: f64;
    /// Smallest pivot magnitude the LP solver accepts.
    const PIVOT_TOL: f64;
    /// Reduced-cost tolerance for optimality.
    const OPTIMALITY_TOL: f64;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Scalar")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to every Scalar")
    }

    fn half() -> Self {
        Self::of(0.5)
    }

    fn two() -> Self {
        Self::of(2.0)
    }
}

impl Scalar for f32 {
    const FEASIBILITY_TOL: f64 = 1e-4;
    const PIVOT_TOL: f64 = 1e-5;
    const OPTIMALITY_TOL: f64 = 1e-5;
}

impl Scalar for f64 {
    const FEASIBILITY_TOL: f64 = 1e-9;
    const PIVOT_TOL: f64 = 1e-10;
    const OPTIMALITY_TOL: f64 = 1e-9;
}

/// Sorts a slice of scalars ascending; NaNs sort last.
pub fn sort_scalars<F: Scalar>(values: &mut [F]) {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or_else(|| a.is_nan().cmp(&b.is_nan())));
}
