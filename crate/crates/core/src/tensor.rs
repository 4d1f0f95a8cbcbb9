//! Dense row-major tensor of f64 values.
//!
//! This is the carrier type for every kernel and all network math. It is
//! deliberately minimal: shape bookkeeping, elementwise arithmetic, and a
//! fixed-order pairwise reduction used everywhere a sum must be bit-stable.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        if expect != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} wants {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    /// 1-D tensor from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Tensor { shape: vec![values.len()], data: values.to_vec() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data.iter().map(|a| a * c).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    /// self + c * other, shape-checked.
    pub fn add_scaled(&self, other: &Tensor, c: f64) -> Result<Tensor> {
        self.check_same_shape(other, "add_scaled")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + c * b)
            .collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Squared Euclidean norm over all elements (pairwise reduction).
    pub fn sq_norm(&self) -> f64 {
        pairwise_sum_by(&self.data, |v| v * v)
    }

    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Fixed-order pairwise (tree) sum.
///
/// Splitting at the midpoint makes the reduction order a function of the
/// slice length alone, so results are bit-stable no matter how the caller
/// produced the slice.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    pairwise_sum_by(values, |v| v)
}

pub fn pairwise_sum_by<F: Fn(f64) -> f64 + Copy>(values: &[f64], f: F) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => f(values[0]),
        2 => f(values[0]) + f(values[1]),
        n => {
            let mid = n / 2;
            pairwise_sum_by(&values[..mid], f) + pairwise_sum_by(&values[mid..], f)
        }
    }
}

/// Arithmetic mean with pairwise accumulation.
pub fn pairwise_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    pairwise_sum(values) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn elementwise_ops() {
        let a = Tensor::vector(&[1.0, 2.0]);
        let b = Tensor::vector(&[3.0, 5.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 7.0]);
        assert_eq!(b.sub(&a).unwrap().data(), &[2.0, 3.0]);
        assert_eq!(a.scale(2.0).data(), &[2.0, 4.0]);
        let c = Tensor::vector(&[1.0]);
        assert!(a.add(&c).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
    }

    #[test]
    fn pairwise_sum_of_identical_values_is_exact_for_pow2() {
        let z = 0.1234567890123_f64;
        let v = vec![z; 8];
        assert_eq!(pairwise_sum(&v), z * 8.0);
        assert_eq!(pairwise_mean(&v), z);
    }
}
