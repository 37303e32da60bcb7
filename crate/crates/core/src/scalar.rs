use std::any::TypeId;
use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type for every learned component: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; never fails for the two implementors.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }

    fn is_f32() -> bool {
        TypeId::of::<Self>() == TypeId::of::<f32>()
    }

    fn is_f64() -> bool {
        TypeId::of::<Self>() == TypeId::of::<f64>()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
