use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use std::fmt::{Debug, Display};

/// Element dtype tag, used by the artifact container to label stored arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

/// Floating-point element type the graph is generic over.
///
/// Training runs in `f32` for throughput; gradient verification and metric
/// oracles run in `f64`. Everything here must behave identically across the
/// two apart from precision.
pub trait Scalar:
    LinalgScalar + Float + ScalarOperand + Debug + Display + Send + Sync + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `ln(1 + e^x)` computed without overflow for large `|x|`.
    fn softplus(self) -> Self {
        // softplus(x) = max(x, 0) + ln(1 + e^{-|x|})
        let z = self.abs().neg().exp();
        self.max(Self::zero()) + z.ln_1p()
    }

    /// Logistic sigmoid, evaluated in the numerically stable branch.
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            let z = self.neg().exp();
            Self::one() / (Self::one() + z)
        } else {
            let z = self.exp();
            z / (Self::one() + z)
        }
    }
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}
