//! Scalar abstraction for the retrieval math: f32 or f64.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar the scoring core is generic over.
pub trait Scalar:
    Float + FromPrimitive + Debug + Default + Serialize + DeserializeOwned + Send + Sync + 'static
{
    /// Lift an `f64` literal into the scalar type.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifts_literals() {
        assert_eq!(f64::lit(1.5), 1.5);
        assert_eq!(f32::lit(0.25), 0.25f32);
    }
}
