//! Grouped 2-D convolution kernels (cross-correlation, stride 1).

use super::TensorError;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps `H×W`; needs odd kernel sizes.
    Same,
    /// Valid convolution; each spatial dim shrinks by `k − 1`.
    None,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub groups: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        x_shape: &[usize],
        k_shape: &[usize],
        groups: usize,
        padding: Padding,
    ) -> Result<Self, TensorError> {
        if x_shape.len() != 3 || k_shape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: x_shape.to_vec(),
                right: k_shape.to_vec(),
            });
        }
        let (c_in, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
        let (c_out, c_per_group, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(TensorError::InvalidParameter(format!(
                "conv2d: channels {c_in}->{c_out} not divisible by {groups} groups"
            )));
        }
        if c_per_group != c_in / groups {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: x_shape.to_vec(),
                right: k_shape.to_vec(),
            });
        }
        let (pad_h, pad_w, out_h, out_w) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(TensorError::InvalidParameter(format!(
                        "conv2d: same padding needs odd kernel, got {kh}x{kw}"
                    )));
                }
                ((kh - 1) / 2, (kw - 1) / 2, h, w)
            }
            Padding::None => {
                if kh > h || kw > w {
                    return Err(TensorError::PatchTooSmall {
                        input: (h, w),
                        kernel: (kh, kw),
                    });
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
        };
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            groups,
            pad_h,
            pad_w,
            out_h,
            out_w,
        })
    }

    pub fn out_shape(&self) -> [usize; 3] {
        [self.c_out, self.out_h, self.out_w]
    }

    /// Output rows `oy` such that `oy + ky - pad_h` lands inside the input.
    #[inline]
    fn rows(&self, ky: usize) -> (usize, usize) {
        valid_range(ky, self.pad_h, self.h, self.out_h)
    }

    #[inline]
    fn cols(&self, kx: usize) -> (usize, usize) {
        valid_range(kx, self.pad_w, self.w, self.out_w)
    }

    /// Iterates `(out_channel, in_channel, kernel_base)` triples respecting groups.
    fn taps(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let cig = self.c_in / self.groups;
        let cog = self.c_out / self.groups;
        let ksz = self.kh * self.kw;
        (0..self.c_out).flat_map(move |co| {
            let g = co / cog;
            (0..cig).map(move |ci| (co, g * cig + ci, (co * cig + ci) * ksz))
        })
    }
}

#[inline]
fn valid_range(k: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (len + pad).saturating_sub(k).min(out_len);
    (lo, hi.max(lo))
}

pub(crate) fn forward<T: Real>(
    geo: &ConvGeometry,
    x: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let plane = geo.out_h * geo.out_w;
    let mut out = vec![T::zero(); geo.c_out * plane];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = b[co]);
        }
    }
    for (co, ci, kbase) in geo.taps() {
        let xin = &x[ci * geo.h * geo.w..(ci + 1) * geo.h * geo.w];
        let dst = &mut out[co * plane..(co + 1) * plane];
        for ky in 0..geo.kh {
            let (r0, r1) = geo.rows(ky);
            for kx in 0..geo.kw {
                let wv = kernel[kbase + ky * geo.kw + kx];
                if wv == T::zero() {
                    continue;
                }
                let (c0, c1) = geo.cols(kx);
                for oy in r0..r1 {
                    let iy = oy + ky - geo.pad_h;
                    let src = &xin[iy * geo.w..(iy + 1) * geo.w];
                    let row = &mut dst[oy * geo.out_w..(oy + 1) * geo.out_w];
                    for ox in c0..c1 {
                        row[ox] += wv * src[ox + kx - geo.pad_w];
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dkernel, dbias)`; each is computed only when requested.
pub(crate) fn backward<T: Real>(
    geo: &ConvGeometry,
    x: &[T],
    kernel: &[T],
    grad: &[T],
    needs: (bool, bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let plane = geo.out_h * geo.out_w;
    let mut dx = needs.0.then(|| vec![T::zero(); x.len()]);
    let mut dk = needs.1.then(|| vec![T::zero(); kernel.len()]);
    let db = needs.2.then(|| {
        grad.chunks(plane)
            .map(|c| c.iter().copied().sum::<T>())
            .collect::<Vec<T>>()
    });
    if dx.is_none() && dk.is_none() {
        return (dx, dk, db);
    }
    let in_plane = geo.h * geo.w;
    for (co, ci, kbase) in geo.taps() {
        let g = &grad[co * plane..(co + 1) * plane];
        let xin = &x[ci * in_plane..(ci + 1) * in_plane];
        for ky in 0..geo.kh {
            let (r0, r1) = geo.rows(ky);
            for kx in 0..geo.kw {
                let (c0, c1) = geo.cols(kx);
                let widx = kbase + ky * geo.kw + kx;
                let wv = kernel[widx];
                let mut acc = T::zero();
                for oy in r0..r1 {
                    let iy = oy + ky - geo.pad_h;
                    for ox in c0..c1 {
                        let ix = ox + kx - geo.pad_w;
                        let gv = g[oy * geo.out_w + ox];
                        acc += gv * xin[iy * geo.w + ix];
                        if let Some(dx) = dx.as_mut() {
                            dx[ci * in_plane + iy * geo.w + ix] += wv * gv;
                        }
                    }
                }
                if let Some(dk) = dk.as_mut() {
                    dk[widx] += acc;
                }
            }
        }
    }
    (dx, dk, db)
}
