//! Plane-level resampling primitives shared by the augmentation pipeline, the
//! model's upsampling layers, and the synthetic data generator.
//!
//! Conventions, fixed once for the whole crate:
//! - half-pixel centers: a destination index `d` samples the source at
//!   `(d + 0.5) * (src/dst) - 0.5`,
//! - clamp-to-edge at borders,
//! - tap positions and weights are computed in `f64` regardless of the
//!   element type, so `f32` and `f64` pipelines sample identical geometry,
//! - a resize onto the same shape is an exact copy.

use ndarray::{s, Array2};

use crate::elem::Elem;

/// One-axis bilinear tap: source indices and the weight of the second tap.
#[derive(Clone, Copy, Debug)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Map a destination coordinate to its source coordinate (half-pixel centers).
#[inline]
pub fn src_coord(dst: f64, src_len: usize, dst_len: usize) -> f64 {
    (dst + 0.5) * (src_len as f64 / dst_len as f64) - 0.5
}

/// Clamped bilinear tap for a continuous source coordinate.
#[inline]
pub fn tap_at(x: f64, src_len: usize) -> Tap {
    let last = src_len - 1;
    if x <= 0.0 {
        Tap { lo: 0, hi: 0, frac: 0.0 }
    } else if x >= last as f64 {
        Tap { lo: last, hi: last, frac: 0.0 }
    } else {
        let lo = x.floor() as usize;
        Tap { lo, hi: lo + 1, frac: x - lo as f64 }
    }
}

fn axis_taps(src_len: usize, dst_len: usize) -> Vec<Tap> {
    (0..dst_len)
        .map(|d| tap_at(src_coord(d as f64, src_len, dst_len), src_len))
        .collect()
}

/// Bilinear sample at a continuous (row, col) position, clamped to the edge.
#[inline]
pub fn sample_bilinear<F: Elem>(src: &Array2<F>, row: f64, col: f64) -> F {
    let (h, w) = src.dim();
    let tr = tap_at(row, h);
    let tc = tap_at(col, w);
    let a = src[[tr.lo, tc.lo]].to_f64();
    let b = src[[tr.lo, tc.hi]].to_f64();
    let c = src[[tr.hi, tc.lo]].to_f64();
    let d = src[[tr.hi, tc.hi]].to_f64();
    let top = a + (b - a) * tc.frac;
    let bot = c + (d - c) * tc.frac;
    F::of(top + (bot - top) * tr.frac)
}

/// Bilinear resize. Same-shape calls return an exact copy.
pub fn resize_bilinear<F: Elem>(src: &Array2<F>, out_shape: (usize, usize)) -> Array2<F> {
    let (sh, sw) = src.dim();
    let (oh, ow) = out_shape;
    assert!(sh > 0 && sw > 0 && oh > 0 && ow > 0, "resize on empty plane");
    if (sh, sw) == (oh, ow) {
        return src.clone();
    }
    let row_taps = axis_taps(sh, oh);
    let col_taps = axis_taps(sw, ow);
    let mut out = Array2::zeros((oh, ow));
    for (r, tr) in row_taps.iter().enumerate() {
        for (c, tc) in col_taps.iter().enumerate() {
            let a = src[[tr.lo, tc.lo]].to_f64();
            let b = src[[tr.lo, tc.hi]].to_f64();
            let cc = src[[tr.hi, tc.lo]].to_f64();
            let d = src[[tr.hi, tc.hi]].to_f64();
            let top = a + (b - a) * tc.frac;
            let bot = cc + (d - cc) * tc.frac;
            out[[r, c]] = F::of(top + (bot - top) * tr.frac);
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: scatter output-side gradients back onto a
/// source-shaped plane. `resize_bilinear` is linear in its input, so this is
/// its exact transpose (including the same-shape copy special case).
pub fn resize_bilinear_transpose<F: Elem>(
    grad_out: &Array2<F>,
    src_shape: (usize, usize),
) -> Array2<F> {
    let (oh, ow) = grad_out.dim();
    let (sh, sw) = src_shape;
    if (sh, sw) == (oh, ow) {
        return grad_out.clone();
    }
    let row_taps = axis_taps(sh, oh);
    let col_taps = axis_taps(sw, ow);
    let mut grad_src = Array2::zeros((sh, sw));
    for (r, tr) in row_taps.iter().enumerate() {
        for (c, tc) in col_taps.iter().enumerate() {
            let g = grad_out[[r, c]].to_f64();
            if g == 0.0 {
                continue;
            }
            let wr = [1.0 - tr.frac, tr.frac];
            let wc = [1.0 - tc.frac, tc.frac];
            let rows = [tr.lo, tr.hi];
            let cols = [tc.lo, tc.hi];
            for (ri, &rr) in rows.iter().enumerate() {
                for (ci, &cc) in cols.iter().enumerate() {
                    let w = wr[ri] * wc[ci];
                    if w != 0.0 {
                        grad_src[[rr, cc]] = grad_src[[rr, cc]] + F::of(g * w);
                    }
                }
            }
        }
    }
    grad_src
}

/// Nearest-neighbor resize; used for label masks so values stay binary.
pub fn resize_nearest<F: Elem>(src: &Array2<F>, out_shape: (usize, usize)) -> Array2<F> {
    let (sh, sw) = src.dim();
    let (oh, ow) = out_shape;
    if (sh, sw) == (oh, ow) {
        return src.clone();
    }
    let pick = |d: usize, src_len: usize, dst_len: usize| -> usize {
        let x = src_coord(d as f64, src_len, dst_len);
        (x.round().max(0.0) as usize).min(src_len - 1)
    };
    let rows: Vec<usize> = (0..oh).map(|r| pick(r, sh, oh)).collect();
    let cols: Vec<usize> = (0..ow).map(|c| pick(c, sw, ow)).collect();
    let mut out = Array2::zeros((oh, ow));
    for (r, &sr) in rows.iter().enumerate() {
        for (c, &sc) in cols.iter().enumerate() {
            out[[r, c]] = src[[sr, sc]];
        }
    }
    out
}

/// Horizontal mirror (column reversal).
pub fn flip_h<F: Elem>(src: &Array2<F>) -> Array2<F> {
    src.slice(s![.., ..;-1]).to_owned()
}

/// Separable Gaussian blur with clamp-to-edge borders; kernel radius 3σ.
/// The data generator works in f64, so no generic variant is needed.
pub fn gaussian_blur(src: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return src.clone();
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 * inv).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let (h, w) = src.dim();
    let mut tmp = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let cc = (c as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += kv * src[[r, cc]];
            }
            tmp[[r, c]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let rr = (r as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[[rr, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}
