//! Float element abstraction so the network stack can run in f32 for
//! training and f64 for gradient checking.

use ndarray::{LinalgScalar, NdFloat};

pub trait Scalar: NdFloat + LinalgScalar + std::iter::Sum + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}
