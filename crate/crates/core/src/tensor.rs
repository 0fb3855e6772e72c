use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = check_shape(shape).expect("tensor shape dimensions must be positive");
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); len],
        }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let len = check_shape(shape).expect("tensor shape dimensions must be positive");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::ShapeMismatch {
                context: format!("tensor of {} elements", data.len()),
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Reinterpret the same data under a new shape of equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor<S>> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[S] {
        debug_assert_eq!(self.rank(), 2);
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn at2(&self, r: usize, c: usize) -> S {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn at3(&self, r: usize, c: usize, ch: usize) -> S {
        debug_assert_eq!(self.rank(), 3);
        self.data[(r * self.shape[1] + c) * self.shape[2] + ch]
    }

    pub fn set3(&mut self, r: usize, c: usize, ch: usize, v: S) {
        debug_assert_eq!(self.rank(), 3);
        let idx = (r * self.shape[1] + c) * self.shape[2] + ch;
        self.data[idx] = v;
    }

    /// Stack same-shaped tensors along a new leading batch dimension.
    pub fn stack(items: &[&Tensor<S>]) -> Result<Tensor<S>> {
        let first = items.first().ok_or_else(|| {
            Error::InvalidArgument("cannot stack an empty list of tensors".into())
        })?;
        let mut shape = Vec::with_capacity(first.rank() + 1);
        shape.push(items.len());
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.len() * items.len());
        for item in items {
            if item.shape() != first.shape() {
                return Err(Error::ShapeMismatch {
                    context: "stack".into(),
                    expected: first.shape().to_vec(),
                    got: item.shape().to_vec(),
                });
            }
            data.extend_from_slice(item.data());
        }
        Tensor::from_vec(&shape, data)
    }

    /// Extract batch element `i` from a tensor with a leading batch dimension.
    pub fn batch_item(&self, i: usize) -> Tensor<S> {
        debug_assert!(self.rank() >= 2);
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// True when both tensors have identical shapes and identical bit patterns.
    pub fn bit_eq(&self, other: &Tensor<S>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "tensor shape {shape:?} has a zero dimension"
        )));
    }
    Ok(shape.iter().product())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 4]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn stack_and_unstack_round_trip() {
        let a = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert!(s.batch_item(0).bit_eq(&a));
        assert!(s.batch_item(1).bit_eq(&b));
    }

    #[test]
    fn stack_rejects_mismatched_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 2]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(Tensor::stack(&[&a, &b]).is_err());
    }
}
