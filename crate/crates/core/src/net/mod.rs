//! Row-token transformer.
//!
//! Every table row is one token. Context tokens carry `phi_x(x) + phi_y(y)`,
//! query tokens carry `phi_x(x)`. Context tokens attend only to context
//! tokens; a query token attends to the context and to itself, never to other
//! queries. There are no positional encodings, so outputs are invariant to the
//! order of context rows. Gradients are computed by hand-written reverse-mode
//! passes over a recorded [`ForwardTrace`].

mod config;
mod model;
mod ops;
mod params;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub use self::config::{ModelConfig, C_MAX, F_MAX, SUPPORTED_GRID};
pub use self::model::{backward, forward, predict, ForwardOutput, ForwardTrace};
pub use self::params::{
    EncoderLayer, Head, LayerNorm, Linear, ModelParams, ParamRole,
};

/// Floating-point element type of model tensors (`f32` for training, `f64` for gradient checks).
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("representable")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}
