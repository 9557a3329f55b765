//! Storage precision for vector and tensor elements.
//!
//! Vectors, operators and autodiff tensors are generic over [`Element`], which
//! is implemented for `f64` (the default, used for oracle-grade numerics) and
//! `f32` (single precision, for studying rounding effects). Scalars that leave
//! a vector (inner products, Lanczos coefficients) are always `f64`.

use std::fmt::{self, Debug, Display, LowerExp};
use std::str::FromStr;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    /// Unit roundoff `u`, half the spacing of floating-point numbers at 1.
    pub fn unit_roundoff(self) -> f64 {
        match self {
            Precision::F32 => 2f64.powi(-24),
            Precision::F64 => 2f64.powi(-53),
        }
    }

    /// Machine epsilon, the spacing of floating-point numbers at 1.
    pub fn machine_epsilon(self) -> f64 {
        2.0 * self.unit_roundoff()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

pub trait Element:
    Float
    + LinalgScalar
    + ScalarOperand
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    fn widen(self) -> f64;

    /// Rounds an `f64` to this precision (round to nearest).
    fn narrow(value: f64) -> Self;
}

impl Element for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn widen(self) -> f64 {
        self
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value
    }
}

impl Element for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value as f32
    }
}
