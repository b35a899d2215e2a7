//! Network layers with explicit forward/backward passes.
//!
//! Convolutions run as im2col + gemm per image, parallelized over the batch;
//! weight-gradient contributions are reduced in batch order so results are
//! independent of thread scheduling.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::elem::Elem;
use crate::model::params::{ParamGroup, ParamId, ParamStore};

/// Fill a (C_in*k*k, H*W) column matrix for a same-size convolution.
/// Every cell is written exactly once (copied or zeroed), so the buffer does
/// not need pre-clearing.
fn im2col<F: Elem>(x: &ArrayView3<'_, F>, k: usize, pad: usize, col: &mut Array2<F>) {
    let (c_in, h, w) = x.dim();
    debug_assert_eq!(col.dim(), (c_in * k * k, h * w));
    let xs = x.as_slice().expect("conv input must be contiguous");
    let cs = col.as_slice_mut().expect("col buffer must be contiguous");
    let zero = F::zero();
    for c in 0..c_in {
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                let row_base = row * h * w;
                // source column = output column + dx - pad
                let (dst_c0, src_c0) = if dx >= pad { (0, dx - pad) } else { (pad - dx, 0) };
                let n_cols = w - dst_c0 - src_c0;
                for r in 0..h {
                    let rr = r as isize + dy as isize - pad as isize;
                    let dst = row_base + r * w;
                    if rr < 0 || rr >= h as isize {
                        cs[dst..dst + w].fill(zero);
                        continue;
                    }
                    cs[dst..dst + dst_c0].fill(zero);
                    let src = (c * h + rr as usize) * w + src_c0;
                    cs[dst + dst_c0..dst + dst_c0 + n_cols]
                        .copy_from_slice(&xs[src..src + n_cols]);
                    cs[dst + dst_c0 + n_cols..dst + w].fill(zero);
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: scatter-add a column-matrix gradient back onto an
/// input-shaped (C, H, W) buffer.
fn col2im<F: Elem>(dcol: &Array2<F>, k: usize, pad: usize, dims: (usize, usize, usize), out: &mut [F]) {
    let (c_in, h, w) = dims;
    debug_assert_eq!(dcol.dim(), (c_in * k * k, h * w));
    debug_assert_eq!(out.len(), c_in * h * w);
    let ds = dcol.as_slice().expect("dcol must be contiguous");
    for c in 0..c_in {
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                let row_base = row * h * w;
                let (dst_c0, src_c0) = if dx >= pad { (0, dx - pad) } else { (pad - dx, 0) };
                let n_cols = w - dst_c0 - src_c0;
                for r in 0..h {
                    let rr = r as isize + dy as isize - pad as isize;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    let src = row_base + r * w + dst_c0;
                    let dst = (c * h + rr as usize) * w + src_c0;
                    for i in 0..n_cols {
                        out[dst + i] = out[dst + i] + ds[src + i];
                    }
                }
            }
        }
    }
}

/// Column matrices built during a conv forward, reused by its backward.
/// Empty for 1x1 convolutions (the input itself is the column matrix).
#[derive(Clone, Debug)]
pub struct ConvCache<F: Elem> {
    cols: Vec<Array2<F>>,
}

impl<F: Elem> Default for ConvCache<F> {
    fn default() -> Self {
        ConvCache { cols: Vec::new() }
    }
}

/// Same-size 2D convolution (kernel 3x3 pad 1, or 1x1 pad 0).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Kaiming-uniform weights, zero biases.
    pub fn new<F: Elem, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        group: ParamGroup,
        in_ch: usize,
        out_ch: usize,
        ksize: usize,
        rng: &mut R,
    ) -> Self {
        let pad = (ksize - 1) / 2;
        let fan_in = (in_ch * ksize * ksize) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let n = out_ch * in_ch * ksize * ksize;
        let data: Vec<F> = (0..n)
            .map(|_| F::of(rng.gen_range(-bound..bound)))
            .collect();
        let w = Array4::from_shape_vec((out_ch, in_ch, ksize, ksize), data)
            .expect("weight shape")
            .into_dyn();
        let weight = store.add(format!("{name}.weight"), group, false, w);
        let bias = store.add(
            format!("{name}.bias"),
            group,
            false,
            Array1::<F>::zeros(out_ch).into_dyn(),
        );
        Conv2d { weight, bias, in_ch, out_ch, ksize, pad }
    }

    fn weight_mat<'a, F: Elem>(&self, store: &'a ParamStore<F>) -> ArrayView2<'a, F> {
        let k = self.in_ch * self.ksize * self.ksize;
        store
            .value(self.weight)
            .view()
            .into_shape_with_order((self.out_ch, k))
            .expect("contiguous weight")
    }

    pub fn forward<F: Elem>(&self, store: &ParamStore<F>, x: &Array4<F>) -> Array4<F> {
        self.forward_cached(store, x).0
    }

    /// Forward that keeps the per-image column matrices for the backward.
    pub fn forward_cached<F: Elem>(
        &self,
        store: &ParamStore<F>,
        x: &Array4<F>,
    ) -> (Array4<F>, ConvCache<F>) {
        let (n, c_in, h, w) = x.dim();
        assert_eq!(c_in, self.in_ch, "conv input channels");
        let k = self.in_ch * self.ksize * self.ksize;
        let wmat = self.weight_mat(store);
        let bias = store.value(self.bias);

        let mut y = Array4::zeros((n, self.out_ch, h, w));
        let cols: Vec<Array2<F>> = x
            .axis_iter(Axis(0))
            .into_par_iter()
            .zip(y.axis_iter_mut(Axis(0)).into_par_iter())
            .map(|(xi, yi)| {
                let mut out = yi
                    .into_shape_with_order((self.out_ch, h * w))
                    .expect("contiguous");
                let col = if self.ksize == 1 {
                    let xmat = xi.into_shape_with_order((c_in, h * w)).expect("contiguous");
                    general_mat_mul(F::one(), &wmat, &xmat, F::zero(), &mut out);
                    Array2::zeros((0, 0))
                } else {
                    let mut col = Array2::<F>::zeros((k, h * w));
                    im2col(&xi, self.ksize, self.pad, &mut col);
                    general_mat_mul(F::one(), &wmat, &col, F::zero(), &mut out);
                    col
                };
                for (co, mut row) in out.rows_mut().into_iter().enumerate() {
                    let b = bias[[co]];
                    row.mapv_inplace(|v| v + b);
                }
                col
            })
            .collect();
        let cache = if self.ksize == 1 {
            ConvCache { cols: Vec::new() }
        } else {
            ConvCache { cols }
        };
        (y, cache)
    }

    /// Accumulates weight/bias gradients into the store and returns the
    /// input gradient. Recomputes column matrices if `cache` is empty.
    pub fn backward<F: Elem>(
        &self,
        store: &mut ParamStore<F>,
        x: &Array4<F>,
        grad_y: &Array4<F>,
    ) -> Array4<F> {
        self.backward_cached(store, x, &ConvCache::default(), grad_y)
    }

    pub fn backward_cached<F: Elem>(
        &self,
        store: &mut ParamStore<F>,
        x: &Array4<F>,
        cache: &ConvCache<F>,
        grad_y: &Array4<F>,
    ) -> Array4<F> {
        let (n, c_in, h, w) = x.dim();
        assert_eq!(grad_y.dim(), (n, self.out_ch, h, w), "conv grad shape");
        let k = self.in_ch * self.ksize * self.ksize;
        let wmat = self.weight_mat(store).to_owned();
        let have_cols = cache.cols.len() == n;

        let mut dx = Array4::zeros((n, c_in, h, w));
        // Per-image weight-gradient contributions computed in parallel,
        // reduced in batch order below.
        let parts: Vec<(Array2<F>, Array1<F>)> = x
            .axis_iter(Axis(0))
            .into_par_iter()
            .zip(grad_y.axis_iter(Axis(0)).into_par_iter())
            .zip(dx.axis_iter_mut(Axis(0)).into_par_iter())
            .enumerate()
            .map(|(ni, ((xi, gyi_raw), mut dxi))| {
                let gyi = gyi_raw
                    .into_shape_with_order((self.out_ch, h * w))
                    .expect("contiguous");
                let mut dw = Array2::<F>::zeros((self.out_ch, k));
                if self.ksize == 1 {
                    let xmat = xi.into_shape_with_order((c_in, h * w)).expect("contiguous");
                    general_mat_mul(F::one(), &gyi, &xmat.t(), F::zero(), &mut dw);
                    let mut dxmat = dxi
                        .view_mut()
                        .into_shape_with_order((c_in, h * w))
                        .expect("contiguous");
                    general_mat_mul(F::one(), &wmat.t(), &gyi, F::zero(), &mut dxmat);
                } else {
                    let mut dcol = Array2::<F>::zeros((k, h * w));
                    general_mat_mul(F::one(), &wmat.t(), &gyi, F::zero(), &mut dcol);
                    let dxi_slice = dxi.as_slice_mut().expect("contiguous");
                    col2im(&dcol, self.ksize, self.pad, (c_in, h, w), dxi_slice);
                    if have_cols {
                        general_mat_mul(F::one(), &gyi, &cache.cols[ni].t(), F::zero(), &mut dw);
                    } else {
                        let mut col = dcol; // reuse the buffer
                        im2col(&xi, self.ksize, self.pad, &mut col);
                        general_mat_mul(F::one(), &gyi, &col.t(), F::zero(), &mut dw);
                    }
                }
                let db = gyi.sum_axis(Axis(1));
                (dw, db)
            })
            .collect();

        let mut dw_total = Array2::<F>::zeros((self.out_ch, k));
        let mut db_total = Array1::<F>::zeros(self.out_ch);
        for (dw, db) in parts {
            dw_total += &dw;
            db_total += &db;
        }
        let dw_shaped = dw_total
            .into_shape_with_order((self.out_ch, self.in_ch, self.ksize, self.ksize))
            .expect("reshape")
            .into_dyn();
        store.add_grad(self.weight, &dw_shaped);
        store.add_grad(self.bias, &db_total.into_dyn());
        dx
    }
}

/// Running statistics of a batch-norm layer (state, not parameters).
#[derive(Clone, Debug)]
pub struct BnState<F: Elem> {
    pub name: String,
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

/// How a batch-norm forward normalizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Use batch statistics; optionally fold them into the running buffers.
    Batch { update_running: bool },
    /// Use the stored running statistics.
    Running,
}

#[derive(Clone, Debug)]
pub struct BnCache<F: Elem> {
    pub x_hat: Array4<F>,
    pub inv_std: Array1<F>,
    pub batch_mode: bool,
    /// Statistics the forward actually used (batch mode only); consumed by
    /// the statistics-replacement baseline.
    pub batch_mean: Option<Array1<F>>,
    pub batch_var: Option<Array1<F>>,
}

/// Batch normalization over (N, H, W) per channel, with affine parameters.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state_idx: usize,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<F: Elem>(
        store: &mut ParamStore<F>,
        states: &mut Vec<BnState<F>>,
        name: &str,
        group: ParamGroup,
        channels: usize,
        eps: f64,
        momentum: f64,
    ) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            group,
            true,
            Array1::<F>::from_elem(channels, F::one()).into_dyn(),
        );
        let beta = store.add(
            format!("{name}.beta"),
            group,
            true,
            Array1::<F>::zeros(channels).into_dyn(),
        );
        let state_idx = states.len();
        states.push(BnState {
            name: name.to_string(),
            mean: Array1::zeros(channels),
            var: Array1::from_elem(channels, F::one()),
        });
        BatchNorm2d { gamma, beta, state_idx, channels, eps, momentum }
    }

    pub fn forward<F: Elem>(
        &self,
        store: &ParamStore<F>,
        states: &mut [BnState<F>],
        x: &Array4<F>,
        mode: BnMode,
    ) -> (Array4<F>, BnCache<F>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "bn channels");
        let m = (n * h * w) as f64;
        let hw = h * w;
        let xs = x.as_slice().expect("contiguous");

        let (mean, var) = match mode {
            BnMode::Batch { .. } => {
                let mut mean = Array1::<F>::zeros(c);
                let mut var = Array1::<F>::zeros(c);
                for ci in 0..c {
                    let mut sum = 0.0f64;
                    let mut sumsq = 0.0f64;
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for &v in &xs[base..base + hw] {
                            let v = v.to_f64();
                            sum += v;
                            sumsq += v * v;
                        }
                    }
                    let mu = sum / m;
                    mean[ci] = F::of(mu);
                    var[ci] = F::of((sumsq / m - mu * mu).max(0.0));
                }
                (mean, var)
            }
            BnMode::Running => {
                let st = &states[self.state_idx];
                (st.mean.clone(), st.var.clone())
            }
        };

        if let BnMode::Batch { update_running: true } = mode {
            let st = &mut states[self.state_idx];
            let mom = F::of(self.momentum);
            let keep = F::of(1.0 - self.momentum);
            for ci in 0..c {
                st.mean[ci] = keep * st.mean[ci] + mom * mean[ci];
                st.var[ci] = keep * st.var[ci] + mom * var[ci];
            }
        }

        let inv_std =
            Array1::from_shape_fn(c, |ci| F::of(1.0 / (var[ci].to_f64() + self.eps).sqrt()));
        let gamma = store.value(self.gamma);
        let beta = store.value(self.beta);

        let mut x_hat = Array4::zeros((n, c, h, w));
        let mut y = Array4::zeros((n, c, h, w));
        {
            let xh = x_hat.as_slice_mut().expect("contiguous");
            let ys = y.as_slice_mut().expect("contiguous");
            for ni in 0..n {
                for ci in 0..c {
                    let mu = mean[ci];
                    let is = inv_std[ci];
                    let g = gamma[[ci]];
                    let b = beta[[ci]];
                    let base = (ni * c + ci) * hw;
                    for i in base..base + hw {
                        let normalized = (xs[i] - mu) * is;
                        xh[i] = normalized;
                        ys[i] = g * normalized + b;
                    }
                }
            }
        }

        let batch_mode = matches!(mode, BnMode::Batch { .. });
        let cache = BnCache {
            x_hat,
            inv_std,
            batch_mode,
            batch_mean: batch_mode.then(|| mean.clone()),
            batch_var: batch_mode.then(|| var.clone()),
        };
        (y, cache)
    }

    pub fn backward<F: Elem>(
        &self,
        store: &mut ParamStore<F>,
        cache: &BnCache<F>,
        grad_y: &Array4<F>,
    ) -> Array4<F> {
        let (n, c, h, w) = grad_y.dim();
        let m = (n * h * w) as f64;
        let hw = h * w;
        let gamma = store.value(self.gamma).clone();
        let gys = grad_y.as_slice().expect("contiguous");
        let xhs = cache.x_hat.as_slice().expect("contiguous");

        let mut dgamma = Array1::<F>::zeros(c);
        let mut dbeta = Array1::<F>::zeros(c);
        let mut dx = Array4::<F>::zeros((n, c, h, w));
        let dxs = dx.as_slice_mut().expect("contiguous");
        for ci in 0..c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for i in base..base + hw {
                    let g = gys[i].to_f64();
                    sum_dy += g;
                    sum_dy_xhat += g * xhs[i].to_f64();
                }
            }
            dbeta[ci] = F::of(sum_dy);
            dgamma[ci] = F::of(sum_dy_xhat);

            let g_s = gamma[[ci]].to_f64() * cache.inv_std[ci].to_f64();
            if cache.batch_mode {
                let a = F::of(g_s);
                let b = F::of(g_s * sum_dy / m);
                let cc = F::of(g_s * sum_dy_xhat / m);
                for ni in 0..n {
                    let base = (ni * c + ci) * hw;
                    for i in base..base + hw {
                        dxs[i] = a * gys[i] - b - cc * xhs[i];
                    }
                }
            } else {
                let a = F::of(g_s);
                for ni in 0..n {
                    let base = (ni * c + ci) * hw;
                    for i in base..base + hw {
                        dxs[i] = a * gys[i];
                    }
                }
            }
        }
        store.add_grad(self.gamma, &dgamma.into_dyn());
        store.add_grad(self.beta, &dbeta.into_dyn());
        dx
    }
}

pub fn relu_forward<F: Elem>(x: &Array4<F>) -> (Array4<F>, Array4<bool>) {
    let mask = x.mapv(|v| v > F::zero());
    let y = x.mapv(|v| if v > F::zero() { v } else { F::zero() });
    (y, mask)
}

pub fn relu_backward<F: Elem>(grad_y: &Array4<F>, mask: &Array4<bool>) -> Array4<F> {
    let mut dx = grad_y.clone();
    ndarray::Zip::from(&mut dx).and(mask).for_each(|d, &m| {
        if !m {
            *d = F::zero();
        }
    });
    dx
}

/// 2x2 max pooling with stride 2; requires even spatial extent.
pub fn maxpool2_forward<F: Elem>(x: &Array4<F>) -> (Array4<F>, Array4<u8>) {
    let (n, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool needs even extent");
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::zeros((n, c, oh, ow));
    let mut idx = Array4::zeros((n, c, oh, ow));
    let xs = x.as_slice().expect("contiguous");
    let ys = y.as_slice_mut().expect("contiguous");
    let is = idx.as_slice_mut().expect("contiguous");
    for p in 0..n * c {
        let x_base = p * h * w;
        let y_base = p * oh * ow;
        for r in 0..oh {
            let top = &xs[x_base + 2 * r * w..x_base + (2 * r + 1) * w];
            let bot = &xs[x_base + (2 * r + 1) * w..x_base + (2 * r + 2) * w];
            let yo = y_base + r * ow;
            for cc in 0..ow {
                let quad = [top[2 * cc], top[2 * cc + 1], bot[2 * cc], bot[2 * cc + 1]];
                let mut best = quad[0];
                let mut code = 0u8;
                for (k, &v) in quad.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        code = k as u8;
                    }
                }
                ys[yo + cc] = best;
                is[yo + cc] = code;
            }
        }
    }
    (y, idx)
}

pub fn maxpool2_backward<F: Elem>(grad_y: &Array4<F>, idx: &Array4<u8>) -> Array4<F> {
    let (n, c, oh, ow) = grad_y.dim();
    let (h, w) = (oh * 2, ow * 2);
    let mut dx = Array4::zeros((n, c, h, w));
    let gs = grad_y.as_slice().expect("contiguous");
    let is = idx.as_slice().expect("contiguous");
    let ds = dx.as_slice_mut().expect("contiguous");
    for p in 0..n * c {
        let g_base = p * oh * ow;
        let d_base = p * h * w;
        for r in 0..oh {
            let go = g_base + r * ow;
            for cc in 0..ow {
                let code = is[go + cc] as usize;
                let (dr, dc) = (code / 2, code % 2);
                ds[d_base + (2 * r + dr) * w + 2 * cc + dc] = gs[go + cc];
            }
        }
    }
    dx
}

fn plane_taps(src: usize, dst: usize) -> Vec<crate::image_ops::Tap> {
    use crate::image_ops::{src_coord, tap_at};
    (0..dst)
        .map(|d| tap_at(src_coord(d as f64, src, dst), src))
        .collect()
}

/// Bilinear upsample of every plane to `out_shape` (same half-pixel
/// convention as [`resize_bilinear`], taps precomputed once per call).
pub fn upsample_forward<F: Elem>(x: &Array4<F>, out_shape: (usize, usize)) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = out_shape;
    if (h, w) == (oh, ow) {
        return x.clone();
    }
    let row_taps = plane_taps(h, oh);
    let col_taps = plane_taps(w, ow);
    let col_w: Vec<F> = col_taps.iter().map(|t| F::of(t.frac)).collect();
    let mut y = Array4::zeros((n, c, oh, ow));
    let xs = x.as_slice().expect("contiguous");
    let ys = y.as_slice_mut().expect("contiguous");
    for p in 0..n * c {
        let x_base = p * h * w;
        let y_base = p * oh * ow;
        for (r, tr) in row_taps.iter().enumerate() {
            let top = &xs[x_base + tr.lo * w..x_base + tr.lo * w + w];
            let bot = &xs[x_base + tr.hi * w..x_base + tr.hi * w + w];
            let fr = F::of(tr.frac);
            let out = &mut ys[y_base + r * ow..y_base + r * ow + ow];
            for (cc, tc) in col_taps.iter().enumerate() {
                let fc = col_w[cc];
                let a = top[tc.lo] + (top[tc.hi] - top[tc.lo]) * fc;
                let b = bot[tc.lo] + (bot[tc.hi] - bot[tc.lo]) * fc;
                out[cc] = a + (b - a) * fr;
            }
        }
    }
    y
}

/// Exact transpose of [`upsample_forward`].
pub fn upsample_backward<F: Elem>(grad_y: &Array4<F>, in_shape: (usize, usize)) -> Array4<F> {
    let (n, c, oh, ow) = grad_y.dim();
    let (h, w) = in_shape;
    if (h, w) == (oh, ow) {
        return grad_y.clone();
    }
    let row_taps = plane_taps(h, oh);
    let col_taps = plane_taps(w, ow);
    let mut dx = Array4::zeros((n, c, h, w));
    let gs = grad_y.as_slice().expect("contiguous");
    let ds = dx.as_slice_mut().expect("contiguous");
    for p in 0..n * c {
        let g_base = p * oh * ow;
        let d_base = p * h * w;
        for (r, tr) in row_taps.iter().enumerate() {
            let wr = [F::of(1.0 - tr.frac), F::of(tr.frac)];
            let rows = [tr.lo, tr.hi];
            let grow = &gs[g_base + r * ow..g_base + r * ow + ow];
            for (cc, tc) in col_taps.iter().enumerate() {
                let g = grow[cc];
                if g == F::zero() {
                    continue;
                }
                let wc = [F::of(1.0 - tc.frac), F::of(tc.frac)];
                let cols = [tc.lo, tc.hi];
                for ri in 0..2 {
                    let wgt_r = wr[ri];
                    if wgt_r == F::zero() {
                        continue;
                    }
                    let base = d_base + rows[ri] * w;
                    for ci in 0..2 {
                        let wgt = wgt_r * wc[ci];
                        if wgt != F::zero() {
                            ds[base + cols[ci]] = ds[base + cols[ci]] + g * wgt;
                        }
                    }
                }
            }
        }
    }
    dx
}

pub fn sigmoid_forward<F: Elem>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| F::one() / (F::one() + (-v).exp()))
}

pub fn sigmoid_backward<F: Elem>(grad_y: &Array4<F>, y: &Array4<F>) -> Array4<F> {
    let mut dx = grad_y.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &yv| {
        *d = *d * yv * (F::one() - yv);
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::new(&mut store, "t", ParamGroup::Encoder, 1, 1, 3, &mut rng);
        // overwrite with a delta kernel
        let w = store.entry_mut(conv.weight);
        w.value.fill(0.0);
        w.value[ndarray::IxDyn(&[0, 0, 1, 1])] = 1.0;
        let x = rand4((2, 1, 6, 6), 1);
        let y = conv.forward(&store, &x);
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_gradient_matches_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::new(&mut store, "t", ParamGroup::Encoder, 2, 3, 3, &mut rng);
        let x = rand4((2, 2, 5, 5), 4);
        let proj = rand4((2, 3, 5, 5), 5);
        let loss = |store: &ParamStore<f64>, x: &Array4<f64>| -> f64 {
            (&conv.forward(store, x) * &proj).sum()
        };

        store.zero_grads();
        let dx = conv.backward(&mut store, &x, &proj);

        let h = 1e-5;
        // input gradient
        let mut xp = x.clone();
        for idx in [[0, 0, 2, 2], [1, 1, 0, 4], [0, 1, 3, 1]] {
            let orig = xp[idx];
            xp[idx] = orig + h;
            let up = loss(&store, &xp);
            xp[idx] = orig - h;
            let dn = loss(&store, &xp);
            xp[idx] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-6, "input fd {fd} vs {}", dx[idx]);
        }
        // weight gradient
        let widx = ndarray::IxDyn(&[1, 0, 2, 1]);
        let orig = store.value(conv.weight)[&widx];
        store.entry_mut(conv.weight).value[&widx] = orig + h;
        let up = loss(&store, &x);
        store.entry_mut(conv.weight).value[&widx] = orig - h;
        let dn = loss(&store, &x);
        store.entry_mut(conv.weight).value[&widx] = orig;
        let fd = (up - dn) / (2.0 * h);
        let analytic = store.entry(conv.weight).grad[&widx];
        assert!((fd - analytic).abs() < 1e-6, "weight fd {fd} vs {analytic}");
    }

    #[test]
    fn batchnorm_train_gradcheck() {
        let mut store = ParamStore::<f64>::new();
        let mut states = Vec::new();
        let bn = BatchNorm2d::new(&mut store, &mut states, "bn", ParamGroup::Encoder, 2, 1e-5, 0.1);
        let x = rand4((3, 2, 4, 4), 7);
        let proj = rand4((3, 2, 4, 4), 8);

        let loss = |store: &ParamStore<f64>, x: &Array4<f64>| -> f64 {
            let mut st = states.clone();
            let (y, _) = bn.forward(store, &mut st, x, BnMode::Batch { update_running: false });
            (&y * &proj).sum()
        };

        let mut st = states.clone();
        let (_, cache) = bn.forward(&store, &mut st, &x, BnMode::Batch { update_running: false });
        store.zero_grads();
        let dx = bn.backward(&mut store, &cache, &proj);

        let h = 1e-5;
        let mut xp = x.clone();
        for idx in [[0, 0, 1, 1], [2, 1, 3, 0], [1, 0, 0, 2]] {
            let orig = xp[idx];
            xp[idx] = orig + h;
            let up = loss(&store, &xp);
            xp[idx] = orig - h;
            let dn = loss(&store, &xp);
            xp[idx] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - dx[idx]).abs() < 1e-5 * (1.0 + fd.abs()),
                "bn input fd {fd} vs {}",
                dx[idx]
            );
        }
        // gamma gradient
        let gidx = ndarray::IxDyn(&[1]);
        let orig = store.value(bn.gamma)[&gidx];
        store.entry_mut(bn.gamma).value[&gidx] = orig + h;
        let up = loss(&store, &x);
        store.entry_mut(bn.gamma).value[&gidx] = orig - h;
        let dn = loss(&store, &x);
        store.entry_mut(bn.gamma).value[&gidx] = orig;
        let fd = (up - dn) / (2.0 * h);
        let analytic = store.entry(bn.gamma).grad[&gidx];
        assert!((fd - analytic).abs() < 1e-6);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut x = Array4::<f64>::zeros((1, 1, 4, 4));
        x[[0, 0, 1, 1]] = 5.0;
        x[[0, 0, 2, 3]] = 7.0;
        let (y, idx) = maxpool2_forward(&x);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 7.0);
        let mut gy = Array4::<f64>::zeros((1, 1, 2, 2));
        gy[[0, 0, 0, 0]] = 1.0;
        gy[[0, 0, 1, 1]] = 2.0;
        let dx = maxpool2_backward(&gy, &idx);
        assert_eq!(dx[[0, 0, 1, 1]], 1.0);
        assert_eq!(dx[[0, 0, 2, 3]], 2.0);
        assert_eq!(dx.sum(), 3.0);
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let x = rand4((1, 2, 4, 4), 11);
        let gy = rand4((1, 2, 9, 9), 12);
        let y = upsample_forward(&x, (9, 9));
        let dx = upsample_backward(&gy, (4, 4));
        let lhs: f64 = (&y * &gy).sum();
        let rhs: f64 = (&x * &dx).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
