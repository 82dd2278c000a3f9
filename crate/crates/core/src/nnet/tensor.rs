use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Stacks equally sized examples into a (B, 1, h, w) batch.
    pub fn stack(examples: &[&[f64]], h: usize, w: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(examples.len() * h * w);
        for x in examples {
            if x.len() != h * w {
                return Err(Error::ShapeMismatch {
                    expected: vec![1, h, w],
                    got: vec![x.len()],
                });
            }
            data.extend_from_slice(x);
        }
        Ok(Self {
            shape: vec![examples.len(), 1, h, w],
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of the leading dimension.
    pub fn row(&self, i: usize) -> &[f64] {
        let per = self.data.len() / self.shape[0].max(1);
        &self.data[i * per..(i + 1) * per]
    }
}
