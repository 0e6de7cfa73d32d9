//! Dense row-major f64 tensors. These are plain values; differentiability
//! comes from recording operations on a [`crate::Graph`].

use crate::error::NdError;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense tensor with row-major layout. Values entering through the public
/// constructors are validated finite; NaN/Inf is a contract violation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from raw data, checking element count and finiteness.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NdError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NdError::invalid(
                "from_vec",
                format!("shape {shape:?} wants {numel} elements, got {}", data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(NdError::NonFinite {
                context: format!("tensor construction with shape {shape:?}"),
            });
        }
        Ok(Self::new_unchecked(shape.to_vec(), data))
    }

    pub(crate) fn new_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite tensor value");
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_unchecked(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite(), "non-finite fill value");
        Self::new_unchecked(shape.to_vec(), vec![value; shape.iter().product()])
    }

    /// Shape-`[1]` scalar.
    pub fn scalar(value: f64) -> Self {
        assert!(value.is_finite(), "non-finite scalar");
        Self::new_unchecked(vec![1], vec![value])
    }

    /// I.i.d. normal draws with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.iter().product())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::new_unchecked(shape.to_vec(), data)
    }

    /// I.i.d. uniform draws on `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.iter().product())
            .map(|_| rng.gen_range(lo..hi))
            .collect();
        Self::new_unchecked(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single element of a shape-`[1]`-like tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor with {} elements", self.numel());
        self.data[0]
    }

    /// Interprets the tensor as 2-D, treating 1-D `[n]` as `[n, 1]`.
    pub(crate) fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.len() {
            1 => Some((self.shape[0], 1)),
            2 => Some((self.shape[0], self.shape[1])),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_count_and_finiteness() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 4]).is_ok());
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_vec(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::from_vec(&[2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn scalar_roundtrip() {
        let t = Tensor::scalar(3.5);
        assert_eq!(t.shape(), &[1]);
        assert_eq!(t.item(), 3.5);
    }
}
