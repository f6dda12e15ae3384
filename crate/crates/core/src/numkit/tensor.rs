use crate::error::{Error, Result};
use crate::numkit::Real;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<R = f32> {
    dims: Vec<usize>,
    data: Vec<R>,
}

/// Whether a matrix operand enters a product as-is or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

impl<R: Real> Tensor<R> {
    /// Checked constructor: dimensions must be positive, match the buffer
    /// length, and every entry must be finite.
    pub fn new(dims: Vec<usize>, data: Vec<R>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Shape(format!("dims must be positive, got {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Self { dims, data })
    }

    /// Unchecked constructor for internal kernels. Panics on a length mismatch.
    pub fn from_vec(dims: &[usize], data: Vec<R>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "dims {dims:?}");
        Self {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, R::zero())
    }

    pub fn full(dims: &[usize], value: R) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.dims.len(), 2);
        self.dims[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.dims.len(), 2);
        self.dims[1]
    }

    pub fn row(&self, i: usize) -> &[R] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [R] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> R {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: R) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn reshape(mut self, dims: &[usize]) -> Self {
        assert_eq!(dims.iter().product::<usize>(), self.data.len());
        self.dims = dims.to_vec();
        self
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| S::of(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn fill(&mut self, v: R) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: R, other: &Self) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: R) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn sum_sq(&self) -> R {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Self::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        matmul(self, Op::N, other, Op::N)
    }
}

/// Product of two 2-D tensors with optional transposition of either side.
pub fn matmul<R: Real>(a: &Tensor<R>, ta: Op, b: &Tensor<R>, tb: Op) -> Tensor<R> {
    let m = if ta == Op::N { a.rows() } else { a.cols() };
    let n = if tb == Op::N { b.cols() } else { b.rows() };
    let mut out = Tensor::zeros(&[m, n]);
    gemm_into(a, ta, b, tb, &mut out, R::zero());
    out
}

/// `out = op(a) op(b) + beta * out`.
pub fn gemm_into<R: Real>(a: &Tensor<R>, ta: Op, b: &Tensor<R>, tb: Op, out: &mut Tensor<R>, beta: R) {
    let (ar, ac) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    let (m, k, rsa, csa) = match ta {
        Op::N => (ar, ac, ac as isize, 1),
        Op::T => (ac, ar, 1, ac as isize),
    };
    let (k2, n, rsb, csb) = match tb {
        Op::N => (br, bc, bc as isize, 1),
        Op::T => (bc, br, 1, bc as isize),
    };
    assert_eq!(k, k2, "inner dimensions differ: {:?} x {:?}", a.dims(), b.dims());
    assert_eq!(out.dims(), [m, n], "output shape");
    // SAFETY: shapes and strides were validated against the buffers above,
    // and `out` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        R::gemm(
            m,
            k,
            n,
            R::one(),
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            beta,
            out.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
