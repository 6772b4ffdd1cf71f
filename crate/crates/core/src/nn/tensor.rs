use super::{NnError, Scalar};

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || n != data.len() {
            return Err(NnError::Shape {
                expected: shape,
                actual: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Slice of the `i`-th entry along the first axis.
    pub fn sample(&self, i: usize) -> &[T] {
        let step = self.data.len() / self.shape[0];
        &self.data[i * step..(i + 1) * step]
    }

    /// Stack equally sized samples into a `[n, ..inner]` tensor.
    pub fn stack(inner: &[usize], samples: &[&[T]]) -> Result<Self, NnError> {
        let step: usize = inner.iter().product();
        let mut data = Vec::with_capacity(step * samples.len());
        for s in samples {
            if s.len() != step {
                return Err(NnError::Shape {
                    expected: inner.to_vec(),
                    actual: vec![s.len()],
                });
            }
            data.extend_from_slice(s);
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(inner);
        Tensor::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        let t = Tensor::<f64>::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.sample(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn stack_prepends_batch_axis() {
        let a = [1.0f32, 2.0];
        let b = [3.0f32, 4.0];
        let t = Tensor::stack(&[1, 2], &[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2]);
        assert!(Tensor::stack(&[3], &[&a[..]]).is_err());
    }
}
