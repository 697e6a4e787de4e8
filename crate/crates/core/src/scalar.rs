//! Scalar abstraction for the numeric core.
//!
//! All models, integrators, and filters are generic over [`Real`], which is
//! any floating-point type that nalgebra can do linear algebra on (`f32`,
//! `f64`). Concrete `f64` aliases live at the crate root.

/// Floating-point scalar usable throughout the crate.
pub trait Real: nalgebra::RealField + num_traits::FromPrimitive + Copy {}

impl<T> Real for T where T: nalgebra::RealField + num_traits::FromPrimitive + Copy {}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal does not fit in scalar type")
}

/// Converts the working scalar back to `f64` (for diagnostics and output).
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    let v: Option<f64> = x.to_subset();
    v.unwrap_or(f64::NAN)
}
