use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Floating-point scalar used by binarisation and the cost model: f32 or f64.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_u64(v: u64) -> Self {
        <Self as num_traits::FromPrimitive>::from_u64(v).expect("u64 converts to float")
    }

    fn from_f64_lossy(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("f64 converts to float")
    }
}

impl Real for f32 {}
impl Real for f64 {}
