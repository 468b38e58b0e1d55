//! Raw loops behind the spatial operations. Every output element is owned by
//! exactly one task and accumulated in a fixed order, so results do not depend
//! on how rayon schedules the work.

use rayon::prelude::*;

use super::tensor::Real;

#[derive(Clone, Copy, Debug)]
pub struct Geom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

/// Range of output rows `y` such that `y + k - 1` is a valid input row.
#[inline]
fn tap_range(k: usize, len: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { len - 1 } else { len };
    (lo, hi)
}

/// 3×3, stride 1, zero padding 1. `weight` is Cout×Cin×3×3.
pub fn conv3x3_forward<T: Real>(g: Geom, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let plane = g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.cout * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let (b, co) = (idx / g.cout, idx % g.cout);
        dst.fill(bias[co]);
        for ci in 0..g.cin {
            let src = &input[(b * g.cin + ci) * plane..][..plane];
            let wk = &weight[(co * g.cin + ci) * 9..][..9];
            for ky in 0..3 {
                let (y0, y1) = tap_range(ky, g.h);
                for kx in 0..3 {
                    let wv = wk[ky * 3 + kx];
                    let (x0, x1) = tap_range(kx, g.w);
                    for y in y0..y1 {
                        let iy = y + ky - 1;
                        let drow = &mut dst[y * g.w + x0..y * g.w + x1];
                        let srow = &src[iy * g.w + x0 + kx - 1..iy * g.w + x1 + kx - 1];
                        for (d, &s) in drow.iter_mut().zip(srow) {
                            *d = *d + wv * s;
                        }
                    }
                }
            }
        }
    });
    out
}

pub fn conv3x3_backward_input<T: Real>(g: Geom, grad_out: &[T], weight: &[T]) -> Vec<T> {
    let plane = g.h * g.w;
    let mut gin = vec![T::zero(); g.n * g.cin * plane];
    gin.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let (b, ci) = (idx / g.cin, idx % g.cin);
        for co in 0..g.cout {
            let gy = &grad_out[(b * g.cout + co) * plane..][..plane];
            let wk = &weight[(co * g.cin + ci) * 9..][..9];
            for ky in 0..3 {
                let (y0, y1) = tap_range(ky, g.h);
                for kx in 0..3 {
                    let wv = wk[ky * 3 + kx];
                    let (x0, x1) = tap_range(kx, g.w);
                    for y in y0..y1 {
                        let iy = y + ky - 1;
                        let grow = &gy[y * g.w + x0..y * g.w + x1];
                        let drow = &mut dst[iy * g.w + x0 + kx - 1..iy * g.w + x1 + kx - 1];
                        for (d, &s) in drow.iter_mut().zip(grow) {
                            *d = *d + wv * s;
                        }
                    }
                }
            }
        }
    });
    gin
}

pub fn conv3x3_backward_weight<T: Real>(g: Geom, grad_out: &[T], input: &[T]) -> Vec<T> {
    let plane = g.h * g.w;
    let mut gw = vec![T::zero(); g.cout * g.cin * 9];
    gw.par_chunks_mut(g.cin * 9).enumerate().for_each(|(co, dst)| {
        for b in 0..g.n {
            let gy = &grad_out[(b * g.cout + co) * plane..][..plane];
            for ci in 0..g.cin {
                let src = &input[(b * g.cin + ci) * plane..][..plane];
                for ky in 0..3 {
                    let (y0, y1) = tap_range(ky, g.h);
                    for kx in 0..3 {
                        let (x0, x1) = tap_range(kx, g.w);
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            let grow = &gy[y * g.w + x0..y * g.w + x1];
                            let srow = &src[iy * g.w + x0 + kx - 1..iy * g.w + x1 + kx - 1];
                            for (&a, &s) in grow.iter().zip(srow) {
                                acc = acc + a * s;
                            }
                        }
                        let slot = &mut dst[ci * 9 + ky * 3 + kx];
                        *slot = *slot + acc;
                    }
                }
            }
        }
    });
    gw
}

/// Per-channel sum of an N×C×plane buffer.
pub fn channel_sums<T: Real>(data: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); c];
    for b in 0..n {
        for (ch, s) in sums.iter_mut().enumerate() {
            let part: T = data[(b * c + ch) * plane..][..plane].iter().copied().sum();
            *s = *s + part;
        }
    }
    sums
}

/// Output coordinate of input index `i` under kernel tap `k` for the stride-2
/// transposed convolution with padding 1 and output padding 1.
#[inline]
fn up_index(i: usize, k: usize, out_len: usize) -> Option<usize> {
    let o = 2 * i + k;
    if o == 0 || o > out_len {
        None
    } else {
        Some(o - 1)
    }
}

/// 3×3 transposed convolution, stride 2, padding 1, output padding 1, so each
/// spatial dimension doubles exactly. `weight` is Cin×Cout×3×3.
pub fn convt_forward<T: Real>(g: Geom, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let plane_in = g.h * g.w;
    let plane_out = oh * ow;
    let mut out = vec![T::zero(); g.n * g.cout * plane_out];
    out.par_chunks_mut(plane_out).enumerate().for_each(|(idx, dst)| {
        let (b, co) = (idx / g.cout, idx % g.cout);
        dst.fill(bias[co]);
        for ci in 0..g.cin {
            let src = &input[(b * g.cin + ci) * plane_in..][..plane_in];
            let wk = &weight[(ci * g.cout + co) * 9..][..9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = wk[ky * 3 + kx];
                    for iy in 0..g.h {
                        let Some(oy) = up_index(iy, ky, oh) else { continue };
                        for ix in 0..g.w {
                            let Some(ox) = up_index(ix, kx, ow) else { continue };
                            let d = &mut dst[oy * ow + ox];
                            *d = *d + wv * src[iy * g.w + ix];
                        }
                    }
                }
            }
        }
    });
    out
}

pub fn convt_backward_input<T: Real>(g: Geom, grad_out: &[T], weight: &[T]) -> Vec<T> {
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let plane_in = g.h * g.w;
    let plane_out = oh * ow;
    let mut gin = vec![T::zero(); g.n * g.cin * plane_in];
    gin.par_chunks_mut(plane_in).enumerate().for_each(|(idx, dst)| {
        let (b, ci) = (idx / g.cin, idx % g.cin);
        for co in 0..g.cout {
            let gy = &grad_out[(b * g.cout + co) * plane_out..][..plane_out];
            let wk = &weight[(ci * g.cout + co) * 9..][..9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = wk[ky * 3 + kx];
                    for iy in 0..g.h {
                        let Some(oy) = up_index(iy, ky, oh) else { continue };
                        for ix in 0..g.w {
                            let Some(ox) = up_index(ix, kx, ow) else { continue };
                            let d = &mut dst[iy * g.w + ix];
                            *d = *d + wv * gy[oy * ow + ox];
                        }
                    }
                }
            }
        }
    });
    gin
}

pub fn convt_backward_weight<T: Real>(g: Geom, grad_out: &[T], input: &[T]) -> Vec<T> {
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let plane_in = g.h * g.w;
    let plane_out = oh * ow;
    let mut gw = vec![T::zero(); g.cin * g.cout * 9];
    gw.par_chunks_mut(g.cout * 9).enumerate().for_each(|(ci, dst)| {
        for b in 0..g.n {
            let src = &input[(b * g.cin + ci) * plane_in..][..plane_in];
            for co in 0..g.cout {
                let gy = &grad_out[(b * g.cout + co) * plane_out..][..plane_out];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let mut acc = T::zero();
                        for iy in 0..g.h {
                            let Some(oy) = up_index(iy, ky, oh) else { continue };
                            for ix in 0..g.w {
                                let Some(ox) = up_index(ix, kx, ow) else { continue };
                                acc = acc + src[iy * g.w + ix] * gy[oy * ow + ox];
                            }
                        }
                        let slot = &mut dst[co * 9 + ky * 3 + kx];
                        *slot = *slot + acc;
                    }
                }
            }
        }
    });
    gw
}

/// 2×2 max pool. Returns pooled values and the flat input index of each
/// window's maximum; ties resolve to the first element in row-major order.
pub fn maxpool_forward<T: Real>(nc: usize, h: usize, w: usize, input: &[T]) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); nc * oh * ow];
    let mut arg = vec![0u32; nc * oh * ow];
    for p in 0..nc {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + 2 * oy * w + 2 * ox;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                let o = (p * oh + oy) * ow + ox;
                out[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (out, arg)
}

pub fn upsample_forward<T: Real>(nc: usize, h: usize, w: usize, input: &[T]) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); nc * oh * ow];
    for p in 0..nc {
        for oy in 0..oh {
            let src = &input[(p * h + oy / 2) * w..][..w];
            let dst = &mut out[(p * oh + oy) * ow..][..ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / 2];
            }
        }
    }
    out
}

pub fn upsample_backward<T: Real>(nc: usize, h: usize, w: usize, grad_out: &[T]) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut gin = vec![T::zero(); nc * h * w];
    for p in 0..nc {
        for y in 0..h {
            for x in 0..w {
                let o = (p * oh + 2 * y) * ow + 2 * x;
                gin[(p * h + y) * w + x] = grad_out[o] + grad_out[o + 1] + grad_out[o + ow] + grad_out[o + ow + 1];
            }
        }
    }
    gin
}
