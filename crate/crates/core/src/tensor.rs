//! Dense row-major `f64` tensors and the GEMM helpers the model is built on.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `c[m×n] = a[m×k] · b[k×n] (+ c)` where every operand is described by a
/// slice plus row/column strides, so transposed views need no copy.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    (rsc, csc): (usize, usize),
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs + 1;
    assert!(span(m, n, rsc, csc) <= c.len(), "gemm: output out of bounds");
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    c[i * rsc + j * csc] = 0.0;
                }
            }
        }
        return;
    }
    assert!(span(m, k, rsa, csa) <= a.len(), "gemm: lhs out of bounds");
    assert!(span(k, n, rsb, csb) <= b.len(), "gemm: rhs out of bounds");
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Row-major `c[m×n] (+)= a · b` with `a`, `b` given by strides.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    accumulate: bool,
    c: &mut [f64],
) {
    gemm_strided(m, k, n, a, (rsa, csa), b, (rsb, csb), c, (n, 1), accumulate);
}

/// `y[t×out] = x[t×in] · Wᵀ + b` for a weight stored `[out, in]`.
pub(crate) fn linear(x: &[f64], t: usize, w: &[f64], b: Option<&[f64]>, n_in: usize, n_out: usize, y: &mut [f64]) {
    debug_assert_eq!(x.len(), t * n_in);
    debug_assert_eq!(w.len(), n_out * n_in);
    gemm(t, n_in, n_out, x, n_in, 1, w, 1, n_in, false, y);
    if let Some(b) = b {
        for row in y[..t * n_out].chunks_exact_mut(n_out) {
            for (yi, bi) in row.iter_mut().zip(b) {
                *yi += bi;
            }
        }
    }
}

/// Backward of [`linear`]: accumulates into `dw`, `db` and (when given) `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    dy: &[f64],
    x: &[f64],
    t: usize,
    w: &[f64],
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) {
    // dW[out×in] += dyᵀ[out×t] · x[t×in]
    gemm(n_out, t, n_in, dy, 1, n_out, x, n_in, 1, true, dw);
    if let Some(db) = db {
        for row in dy[..t * n_out].chunks_exact(n_out) {
            for (g, d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
    if let Some(dx) = dx {
        // dx[t×in] += dy[t×out] · W[out×in]
        gemm(t, n_out, n_in, dy, n_out, 1, w, n_in, 1, true, dx);
    }
}
