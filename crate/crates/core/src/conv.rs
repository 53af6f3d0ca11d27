//! 2-D convolution with explicit per-side zero padding.
//!
//! Kernels lower each batch element to column form a few output rows at a
//! time and hand the product to a GEMM, so the scratch buffer stays small
//! regardless of frame size.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Target number of scratch elements per column chunk.
const COL_BUDGET: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::InvalidConv("channel counts must be positive".into()));
        }
        if kernel_h.is_multiple_of(2) || kernel_w.is_multiple_of(2) {
            return Err(Error::InvalidConv(format!(
                "kernel extents must be odd, got {kernel_h}x{kernel_w}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidConv("stride must be at least 1".into()));
        }
        Ok(ConvSpec {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
        })
    }

    /// Stride-1 square convolution that preserves spatial extents.
    pub fn same(out_channels: usize, in_channels: usize, kernel: usize) -> Result<Self> {
        Self::new(
            out_channels,
            in_channels,
            kernel,
            kernel,
            1,
            Padding::uniform(kernel / 2),
        )
    }

    /// Stride-2 square convolution mapping even extents `e` to exactly `e/2`.
    ///
    /// Output pixel `o` is centred on input pixel `2o`, so one fewer row and
    /// column of padding is needed after the image than before it.
    pub fn halving(out_channels: usize, in_channels: usize, kernel: usize) -> Result<Self> {
        if kernel < 3 {
            return Err(Error::InvalidConv(
                "halving convolution needs a kernel of at least 3".into(),
            ));
        }
        let before = kernel / 2;
        let padding = Padding {
            top: before,
            bottom: before - 1,
            left: before,
            right: before - 1,
        };
        Self::new(out_channels, in_channels, kernel, kernel, 2, padding)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }

    /// Trainable values: weights plus one bias per output channel.
    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_channels
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Output extents for an `h×w` input: `(padded − k) / stride + 1`, rounded
    /// down. Trailing padded rows or columns a strided kernel cannot reach
    /// are dropped.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let out = |len: usize, a: usize, b: usize, k: usize, axis: &str| {
            let padded = len + a + b;
            if padded < k {
                return Err(Error::InvalidConv(format!(
                    "{axis} extent {len} with padding ({a}, {b}) is smaller than kernel {k}"
                )));
            }
            Ok((padded - k) / self.stride + 1)
        };
        let p = self.padding;
        Ok((
            out(h, p.top, p.bottom, self.kernel_h, "height")?,
            out(w, p.left, p.right, self.kernel_w, "width")?,
        ))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    fn rows_per_chunk(&self, spec: &ConvSpec) -> usize {
        (COL_BUDGET / (spec.patch_len() * self.out_width).max(1)).clamp(1, self.out_height)
    }
}

/// Output columns `lo..hi` whose input column `ox·s + kx − pad` lies in `0..w`.
fn valid_cols(ow: usize, w: usize, s: usize, kx: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).div_ceil(s).min(ow);
    // largest ox with ox·s + kx − pad ≤ w − 1
    let hi = if w + pad > kx { ((w + pad - kx - 1) / s + 1).min(ow) } else { 0 };
    (lo, hi.max(lo))
}

/// Lower output rows `oy0..oy0+rows` of one image (`C×H×W`) to a
/// `patch_len × (rows·out_width)` column matrix.
fn im2col<T: Scalar>(
    spec: &ConvSpec,
    g: &ConvGeometry,
    image: &[T],
    oy0: usize,
    rows: usize,
    col: &mut [T],
) {
    let (h, w, ow) = (g.height, g.width, g.out_width);
    let cols = rows * ow;
    let s = spec.stride;
    for c in 0..spec.in_channels {
        let plane = &image[c * h * w..(c + 1) * h * w];
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let r = (c * spec.kernel_h + ky) * spec.kernel_w + kx;
                let dst = &mut col[r * cols..(r + 1) * cols];
                let (lo, hi) = valid_cols(ow, w, s, kx, spec.padding.left);
                for ri in 0..rows {
                    let seg = &mut dst[ri * ow..(ri + 1) * ow];
                    let iy = ((oy0 + ri) * s + ky) as isize - spec.padding.top as isize;
                    if iy < 0 || iy >= h as isize || lo == hi {
                        seg.fill(T::zero());
                        continue;
                    }
                    seg[..lo].fill(T::zero());
                    seg[hi..].fill(T::zero());
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let x0 = lo * s + kx - spec.padding.left;
                    if s == 1 {
                        seg[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                    } else {
                        for (v, &x) in seg[lo..hi].iter_mut().zip(src[x0..].iter().step_by(s)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add a column matrix back onto the image gradient.
fn col2im_add<T: Scalar>(
    spec: &ConvSpec,
    g: &ConvGeometry,
    col: &[T],
    oy0: usize,
    rows: usize,
    image: &mut [T],
) {
    let (h, w, ow) = (g.height, g.width, g.out_width);
    let cols = rows * ow;
    let s = spec.stride;
    for c in 0..spec.in_channels {
        let plane = &mut image[c * h * w..(c + 1) * h * w];
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let r = (c * spec.kernel_h + ky) * spec.kernel_w + kx;
                let src = &col[r * cols..(r + 1) * cols];
                let (lo, hi) = valid_cols(ow, w, s, kx, spec.padding.left);
                if lo == hi {
                    continue;
                }
                let x0 = lo * s + kx - spec.padding.left;
                for ri in 0..rows {
                    let iy = ((oy0 + ri) * s + ky) as isize - spec.padding.top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w + x0..(iy as usize + 1) * w];
                    let seg = &src[ri * ow + lo..ri * ow + hi];
                    for (d, &v) in dst.iter_mut().step_by(s).zip(seg) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(
    spec: &ConvSpec,
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let k = spec.patch_len();
    let in_plane = spec.in_channels * g.height * g.width;
    let out_hw = g.out_height * g.out_width;
    let chunk = g.rows_per_chunk(spec);
    let mut col = vec![T::zero(); k * chunk * g.out_width];
    for b in 0..g.batch {
        let image = &input[b * in_plane..(b + 1) * in_plane];
        let dst = &mut out[b * spec.out_channels * out_hw..(b + 1) * spec.out_channels * out_hw];
        let mut oy0 = 0;
        while oy0 < g.out_height {
            let rows = chunk.min(g.out_height - oy0);
            let p = rows * g.out_width;
            im2col(spec, g, image, oy0, rows, &mut col);
            let base = oy0 * g.out_width;
            T::gemm(
                spec.out_channels,
                k,
                p,
                weight,
                (k as isize, 1),
                &col[..k * p],
                (p as isize, 1),
                &mut dst[base..],
                (out_hw as isize, 1),
                false,
            );
            oy0 += rows;
        }
        for (co, &bv) in bias.iter().enumerate() {
            for v in &mut dst[co * out_hw..(co + 1) * out_hw] {
                *v = *v + bv;
            }
        }
    }
}

/// Accumulates gradients into whichever of `d_input`, `d_weight`, `d_bias`
/// are requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    spec: &ConvSpec,
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    d_out: &[T],
    mut d_input: Option<&mut [T]>,
    mut d_weight: Option<&mut [T]>,
    d_bias: Option<&mut [T]>,
) {
    let k = spec.patch_len();
    let in_plane = spec.in_channels * g.height * g.width;
    let out_hw = g.out_height * g.out_width;
    let out_plane = spec.out_channels * out_hw;

    if let Some(db) = d_bias {
        for b in 0..g.batch {
            for (co, acc) in db.iter_mut().enumerate() {
                let start = b * out_plane + co * out_hw;
                *acc = *acc + d_out[start..start + out_hw].iter().copied().sum::<T>();
            }
        }
    }
    if d_input.is_none() && d_weight.is_none() {
        return;
    }

    let chunk = g.rows_per_chunk(spec);
    let mut col = vec![T::zero(); k * chunk * g.out_width];
    let mut dcol = if d_input.is_some() {
        vec![T::zero(); k * chunk * g.out_width]
    } else {
        Vec::new()
    };
    for b in 0..g.batch {
        let image = &input[b * in_plane..(b + 1) * in_plane];
        let dy = &d_out[b * out_plane..(b + 1) * out_plane];
        let mut oy0 = 0;
        while oy0 < g.out_height {
            let rows = chunk.min(g.out_height - oy0);
            let p = rows * g.out_width;
            let dy_chunk = &dy[oy0 * g.out_width..];
            if let Some(dw) = d_weight.as_deref_mut() {
                im2col(spec, g, image, oy0, rows, &mut col);
                T::gemm(
                    spec.out_channels,
                    p,
                    k,
                    dy_chunk,
                    (out_hw as isize, 1),
                    &col[..k * p],
                    (1, p as isize),
                    dw,
                    (k as isize, 1),
                    true,
                );
            }
            if let Some(dx) = d_input.as_deref_mut() {
                T::gemm(
                    k,
                    spec.out_channels,
                    p,
                    weight,
                    (1, k as isize),
                    dy_chunk,
                    (out_hw as isize, 1),
                    &mut dcol[..k * p],
                    (p as isize, 1),
                    false,
                );
                col2im_add(
                    spec,
                    g,
                    &dcol[..k * p],
                    oy0,
                    rows,
                    &mut dx[b * in_plane..(b + 1) * in_plane],
                );
            }
            oy0 += rows;
        }
    }
}
