//! Dense row-major tensors and the scalar abstraction shared by the 32-bit
//! training path and the 64-bit gradient-check path.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element type of a [`Tensor`].
pub trait Scalar:
    Float + Default + Debug + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c`, all row-major with explicit strides.
    ///
    /// `a` is `m×k`, `b` is `k×n`, `c` is `m×n`; the strides describe how to
    /// walk each operand so transposes are expressed without copies.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(c.len() >= m * n, "gemm output too small");
                assert!(extent_ok(a.len(), m, k, a_strides), "gemm lhs out of bounds");
                assert!(extent_ok(b.len(), k, n, b_strides), "gemm rhs out of bounds");
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn from_f64(x: f64) -> Self {
                x as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

fn extent_ok(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize)) -> bool {
    if rows == 0 || cols == 0 {
        return true;
    }
    rs >= 0 && cs >= 0 && ((rows - 1) * rs as usize + (cols - 1) * cs as usize) < len
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Interprets the tensor as N×C×H×W.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::dim(op, format!("expected a 4-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), numel);
        }
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Element-type conversion; gradient state is dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Element at a 4-d index.
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cc, hh, ww] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3]];
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}
