//! Thin safe wrapper over the `matrixmultiply` GEMM kernel.

/// Row-major operand view: `rows × cols` after the optional transpose.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Operand<'a> {
    pub data: &'a [f64],
    /// Extents of the stored (untransposed) row-major matrix.
    pub stored: (usize, usize),
    pub transpose: bool,
}

impl<'a> Operand<'a> {
    pub fn plain(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Operand {
            data,
            stored: (rows, cols),
            transpose: false,
        }
    }

    pub fn t(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Operand {
            data,
            stored: (rows, cols),
            transpose: true,
        }
    }

    /// Logical extents after transposition.
    pub fn dims(&self) -> (usize, usize) {
        if self.transpose {
            (self.stored.1, self.stored.0)
        } else {
            self.stored
        }
    }

    fn strides(&self) -> (isize, isize) {
        let row_stride = self.stored.1 as isize;
        if self.transpose {
            (1, row_stride)
        } else {
            (row_stride, 1)
        }
    }
}

/// `out = a·b + beta·out`, with `out` row-major `m × n`.
pub(crate) fn gemm(a: Operand<'_>, b: Operand<'_>, beta: f64, out: &mut [f64]) {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    assert_eq!(k, k2, "gemm inner extents");
    assert_eq!(a.data.len(), a.stored.0 * a.stored.1);
    assert_eq!(b.data.len(), b.stored.0 * b.stored.1);
    assert_eq!(out.len(), m * n, "gemm output extent");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: extents and strides were checked against the slice lengths above,
    // and `out` is a distinct mutable borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
