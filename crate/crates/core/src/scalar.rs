use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar used for affinity scores, thresholds and set scores.
///
/// Implemented for `f32` and `f64`; counters stay integral and are only
/// converted at normalization time.
pub trait Score:
    'static
    + Float
    + FromPrimitive
    + NumAssign
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
{
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("u64 converts to a float")
    }

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to a float")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Score for f32 {}
impl Score for f64 {}
