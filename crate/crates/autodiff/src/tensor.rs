//! Dense 4-D tensors in (batch, channel, height, width) layout, row-major.

use crate::error::AutodiffError;
use crate::scalar::Scalar;

/// Shape of a 4-D activation or weight.
///
/// Convolution kernels reuse the same struct as (out, in, kh, kw).
/// Small vectors (logits, probability weights) are stored as (1, 1, 1, k).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { b, c, h, w }
    }

    /// Shape of a flat k-vector.
    pub fn vec(k: usize) -> Self {
        Shape { b: 1, c: 1, h: 1, w: k }
    }

    /// Shape of a scalar.
    pub fn scalar() -> Self {
        Shape { b: 1, c: 1, h: 1, w: 1 }
    }

    pub fn numel(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.b, self.c, self.h, self.w)
    }
}

/// Dense tensor with contiguous row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![T::ZERO; shape.numel()] }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self, AutodiffError> {
        if data.len() != shape.numel() {
            return Err(AutodiffError::ShapeMismatch {
                context: "from_vec",
                detail: format!("shape {shape} wants {} elements, got {}", shape.numel(), data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Flat k-vector from a slice.
    pub fn from_slice_vec(values: &[T]) -> Self {
        Tensor { shape: Shape::vec(values.len()), data: values.to_vec() }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        let s = &self.shape;
        self.data[((b * s.c + c) * s.h + y) * s.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, c: usize, y: usize, x: usize) -> &mut T {
        let s = self.shape;
        &mut self.data[((b * s.c + c) * s.h + y) * s.w + x]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map into a new tensor of the same shape.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Convert element type (used to run f32 nets under the f64 checker).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_numel_and_indexing() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.numel(), 120);
        let mut t = Tensor::<f64>::zeros(s);
        *t.at_mut(1, 2, 3, 4) = 7.0;
        assert_eq!(t.at(1, 2, 3, 4), 7.0);
        assert_eq!(t.data()[119], 7.0);
    }

    #[test]
    fn from_vec_rejects_wrong_len() {
        let err = Tensor::<f32>::from_vec(Shape::vec(3), vec![1.0, 2.0]);
        assert!(err.is_err());
    }

    #[test]
    fn cast_round_trip() {
        let t = Tensor::<f32>::from_slice_vec(&[1.5, -2.25, 0.125]);
        let d: Tensor<f64> = t.cast();
        let back: Tensor<f32> = d.cast();
        assert_eq!(t, back);
    }
}
