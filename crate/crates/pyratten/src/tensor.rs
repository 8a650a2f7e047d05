//! Dense rank-4 tensors in (batch, channel, height, width) layout.

use crate::error::{Error, Result};

/// Scalar element type. `f32` by default; the `f64` feature switches the
/// whole compute path to double precision for tight gradient checks.
#[cfg(not(feature = "f64"))]
pub type Elem = f32;
#[cfg(feature = "f64")]
pub type Elem = f64;

/// Dense rank-4 array of [`Elem`] in row-major (N, C, H, W) order, with an
/// optional same-shape gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<Elem>,
    grad: Option<Vec<Elem>>,
}

impl Tensor {
    /// Builds a tensor from raw data; the data length must equal the product
    /// of the extents and every extent must be at least one.
    pub fn from_vec(shape: [usize; 4], data: Vec<Elem>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Dim(format!(
                "tensor extents must all be >= 1, got {shape:?}"
            )));
        }
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::Dim(format!(
                "data length {} does not match shape {shape:?} ({} elements)",
                data.len(),
                expect
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            shape: [n, c, h, w],
            data: vec![0.0; n * c * h * w],
            grad: None,
        }
    }

    pub fn full(shape: [usize; 4], value: Elem) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    /// Scalar tensor (1, 1, 1, 1).
    pub fn scalar(value: Elem) -> Self {
        Tensor::full([1, 1, 1, 1], value)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Elem] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Elem] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Elem> {
        self.data
    }

    /// Gradient buffer, if one has been attached.
    pub fn grad(&self) -> Option<&[Elem]> {
        self.grad.as_deref()
    }

    /// Attaches a gradient buffer; the shape invariant is the caller's to keep.
    pub fn set_grad(&mut self, grad: Vec<Elem>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Dim(format!(
                "gradient length {} does not match tensor of {} elements",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> Elem {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: Elem) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// One batch item as a batch-1 tensor (copies).
    pub fn batch_item(&self, n: usize) -> Tensor {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        let start = n * per;
        Tensor {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[start..start + per].to_vec(),
            grad: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(Elem) -> Elem) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }
}

/// Convolution description: kernel geometry plus its weight tensor
/// (C_out, C_in, kh, kw) and optional per-output-channel bias.
#[derive(Clone, Debug)]
pub struct ConvSpec {
    pub weight: Tensor,
    /// Bias of shape (1, C_out, 1, 1).
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn new(weight: Tensor, bias: Option<Tensor>, stride: usize, pad: usize) -> Result<Self> {
        if stride < 1 {
            return Err(Error::Config("convolution stride must be >= 1".into()));
        }
        if let Some(b) = &bias {
            let want = [1, weight.shape()[0], 1, 1];
            if b.shape() != want {
                return Err(Error::Dim(format!(
                    "bias shape {:?} does not match C_out = {}",
                    b.shape(),
                    weight.shape()[0]
                )));
            }
        }
        Ok(ConvSpec {
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kh(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn kw(&self) -> usize {
        self.weight.shape()[3]
    }
}
