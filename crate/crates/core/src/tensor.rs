use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Extents of a rank-<=4 tensor in [N, C, H, W] order. Unused trailing
/// dimensions are 1, so a [N, C] matrix is stored as [N, C, 1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn nchw(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Flat row-major index of element (n, c, h, w).
    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.0[1] + c) * self.0[2] + h) * self.0[3] + w
    }

    /// Rank as stored in the DUT1 header: highest dimension index with
    /// extent != 1, plus one (minimum 1).
    pub fn rank(&self) -> usize {
        for d in (0..4).rev() {
            if self.0[d] != 1 {
                return d + 1;
            }
        }
        1
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

/// Dense row-major tensor. Immutable after creation except for the gradient
/// slot, which the tape populates during backward.
#[derive(Debug, Clone)]
pub struct Tensor<T: Scalar> {
    pub shape: Shape,
    pub data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::ZERO; shape.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    /// Uniform values in [lo, hi), deterministic for a given rng state.
    pub fn rand_uniform<R: Rng>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::from_f64(rng.gen_range(lo..hi)))
            .collect();
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64()).collect()
    }

    /// Cast between precisions.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

/// Integer label map [N, H, W], the companion of class-logit tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub labels: Vec<usize>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != n * h * w {
            return Err(Error::shape(format!(
                "label count {} does not match {}x{}x{}",
                labels.len(),
                n,
                h,
                w
            )));
        }
        Ok(LabelMap { n, h, w, labels })
    }

    #[inline(always)]
    pub fn at(&self, n: usize, h: usize, w: usize) -> usize {
        self.labels[(n * self.h + h) * self.w + w]
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::invalid(format!(
                    "label {} at flat index {} out of range for {} classes",
                    l, i, num_classes
                )));
            }
        }
        Ok(())
    }
}
