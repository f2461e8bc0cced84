use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::{gemm_checked, Scalar};
use crate::{Result, TensorError};

/// Dense row-major matrix. Sequences are stored channels-first: `[channels, time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::Shape(format!(
                "{} elements cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, T::zero())
    }

    pub fn full(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(1, 1, value)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Column vector.
    pub fn column(values: &[T]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// I.i.d. standard normal entries times `std`. Draws are taken as `f64`
    /// so the same seed yields the same values for either precision.
    pub fn randn<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            let g: f64 = StandardNormal.sample(rng);
            T::lit(g * std)
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.at(c, r))
    }

    pub fn sum(&self) -> T {
        T::sum_wide(self.data.iter().copied())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    /// `op(self) · op(other)` where `op` optionally transposes.
    pub fn matmul(&self, trans_self: bool, other: &Self, trans_other: bool) -> Result<Self> {
        let (m, k) = oriented(self.shape(), trans_self);
        let (k2, n) = oriented(other.shape(), trans_other);
        if k != k2 {
            return Err(TensorError::Shape(format!(
                "matmul inner dims {k} vs {k2} ({:?}{} x {:?}{})",
                self.shape(),
                if trans_self { "ᵀ" } else { "" },
                other.shape(),
                if trans_other { "ᵀ" } else { "" },
            )));
        }
        let mut out = Self::zeros(m, n);
        gemm_into(self, trans_self, other, trans_other, T::one(), T::zero(), &mut out);
        Ok(out)
    }
}

pub(crate) fn oriented((r, c): (usize, usize), trans: bool) -> (usize, usize) {
    if trans {
        (c, r)
    } else {
        (r, c)
    }
}

fn strides<T>(t: &Tensor<T>, trans: bool) -> (usize, usize) {
    if trans {
        (1, t.cols)
    } else {
        (t.cols, 1)
    }
}

/// `out = alpha·op(a)·op(b) + beta·out`; shapes must already agree.
pub(crate) fn gemm_into<T: Scalar>(
    a: &Tensor<T>,
    ta: bool,
    b: &Tensor<T>,
    tb: bool,
    alpha: T,
    beta: T,
    out: &mut Tensor<T>,
) {
    let (m, k) = oriented(a.shape(), ta);
    let (_, n) = oriented(b.shape(), tb);
    debug_assert_eq!(out.shape(), (m, n));
    let sc = (out.cols, 1);
    gemm_checked(
        m,
        k,
        n,
        alpha,
        &a.data,
        strides(a, ta),
        &b.data,
        strides(b, tb),
        beta,
        &mut out.data,
        sc,
    );
}
