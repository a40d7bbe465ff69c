//! 1-D convolution kernels (im2col + gemm).
//!
//! Layouts: input `[B, C_in, L]`, weight `[C_out, C_in, K]`, output
//! `[B, C_out, L_out]`. Zero padding of `pad_left = (K-1)/2` on the left
//! and enough on the right that stride 1 preserves length; stride `s`
//! yields `ceil(L/s)` output positions.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        in_len: usize,
    ) -> Self {
        Self {
            batch,
            in_channels,
            out_channels,
            kernel,
            stride,
            in_len,
            out_len: in_len.div_ceil(stride),
            pad_left: (kernel - 1) / 2,
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.in_channels, self.in_len]
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_len]
    }

    fn cols(&self) -> usize {
        self.batch * self.out_len
    }

    /// Input position read by output `o` at tap `k`, if inside the signal.
    #[inline]
    fn source(&self, o: usize, k: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad_left as isize;
        (pos >= 0 && (pos as usize) < self.in_len).then_some(pos as usize)
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let n = g.cols();
    let mut cols = vec![T::zero(); g.in_channels * g.kernel * n];
    for ci in 0..g.in_channels {
        for k in 0..g.kernel {
            let row = &mut cols[(ci * g.kernel + k) * n..(ci * g.kernel + k + 1) * n];
            for b in 0..g.batch {
                let xin = &x[(b * g.in_channels + ci) * g.in_len..][..g.in_len];
                for o in 0..g.out_len {
                    if let Some(p) = g.source(o, k) {
                        row[b * g.out_len + o] = xin[p];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T]) -> Vec<T> {
    let n = g.cols();
    let mut x = vec![T::zero(); g.batch * g.in_channels * g.in_len];
    for ci in 0..g.in_channels {
        for k in 0..g.kernel {
            let row = &cols[(ci * g.kernel + k) * n..(ci * g.kernel + k + 1) * n];
            for b in 0..g.batch {
                let xin = &mut x[(b * g.in_channels + ci) * g.in_len..][..g.in_len];
                for o in 0..g.out_len {
                    if let Some(p) = g.source(o, k) {
                        xin[p] += row[b * g.out_len + o];
                    }
                }
            }
        }
    }
    x
}

/// `[B, C, Lo]` -> `[C, B*Lo]`
fn batch_major_to_channel_major<T: Scalar>(g: &ConvGeom, y: &[T]) -> Vec<T> {
    let n = g.cols();
    let mut out = vec![T::zero(); g.out_channels * n];
    for b in 0..g.batch {
        for c in 0..g.out_channels {
            let src = &y[(b * g.out_channels + c) * g.out_len..][..g.out_len];
            out[c * n + b * g.out_len..][..g.out_len].copy_from_slice(src);
        }
    }
    out
}

/// `[C, B*Lo]` -> `[B, C, Lo]`
fn channel_major_to_batch_major<T: Scalar>(g: &ConvGeom, y: &[T]) -> Vec<T> {
    let n = g.cols();
    let mut out = vec![T::zero(); g.out_channels * n];
    for b in 0..g.batch {
        for c in 0..g.out_channels {
            let src = &y[c * n + b * g.out_len..][..g.out_len];
            out[(b * g.out_channels + c) * g.out_len..][..g.out_len].copy_from_slice(src);
        }
    }
    out
}

pub fn conv1d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T]) -> Vec<T> {
    let cols = im2col(g, x);
    let (m, k, n) = (g.out_channels, g.in_channels * g.kernel, g.cols());
    let mut y2 = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        w,
        (k as isize, 1),
        &cols,
        (n as isize, 1),
        T::zero(),
        &mut y2,
        (n as isize, 1),
    );
    channel_major_to_batch_major(g, &y2)
}

/// Gradient of the convolution output with respect to its input, given
/// the output adjoint `dy`. Linear in both `dy` and `w`.
pub fn conv1d_input_grad<T: Scalar>(g: &ConvGeom, dy: &[T], w: &[T]) -> Vec<T> {
    let dy2 = batch_major_to_channel_major(g, dy);
    let (m, k, n) = (g.in_channels * g.kernel, g.out_channels, g.cols());
    let mut dcols = vec![T::zero(); m * n];
    // W^T: [C_in*K, C_out]
    T::gemm(
        m,
        k,
        n,
        T::one(),
        w,
        (1, m as isize),
        &dy2,
        (n as isize, 1),
        T::zero(),
        &mut dcols,
        (n as isize, 1),
    );
    col2im(g, &dcols)
}

/// Gradient of the convolution output with respect to its weight, given
/// the input `x` and output adjoint `dy`. Linear in both.
pub fn conv1d_weight_grad<T: Scalar>(g: &ConvGeom, x: &[T], dy: &[T]) -> Vec<T> {
    let cols = im2col(g, x);
    let dy2 = batch_major_to_channel_major(g, dy);
    let (m, k, n) = (g.out_channels, g.cols(), g.in_channels * g.kernel);
    let mut dw = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        &dy2,
        (k as isize, 1),
        &cols,
        (1, k as isize),
        T::zero(),
        &mut dw,
        (n as isize, 1),
    );
    dw
}
