//! Floating-point abstraction shared by every numeric routine in the crate.
//!
//! All learners, losses and smoothing code are written once against
//! [`Scalar`] and instantiated for `f32` and `f64`. Random draws and file
//! I/O always go through `f64` so both precisions see the same stream.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar usable by the laboratory.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Short name written into checkpoints and config echoes.
    const NAME: &'static str;

    /// Converts an `f64` literal. Never fails for finite inputs.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to every Scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

/// Probability floor applied before every logarithm.
pub const PROB_FLOOR: f64 = 1e-7;

/// Clamps a probability into `[PROB_FLOOR, 1 - PROB_FLOOR]`.
#[inline]
pub fn clamp_prob<F: Scalar>(p: F) -> F {
    let lo = F::lit(PROB_FLOOR);
    let hi = F::one() - lo;
    p.max(lo).min(hi)
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Class-1 probability of a two-logit softmax.
#[inline]
pub fn two_class_p1<F: Scalar>(logits: [F; 2]) -> F {
    sigmoid(logits[1] - logits[0])
}
