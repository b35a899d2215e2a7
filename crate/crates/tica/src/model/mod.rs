//! Desk-scale encoder-decoder segmentation network.
//!
//! The encoder emits a four-level feature pyramid at strides {2, 4, 8, 16};
//! a lightweight decoder projects every level to a shared width, fuses them
//! at stride 2 and produces a full-resolution shadow probability map.
//! Parameters are partitioned into encoder and decoder groups so the
//! adaptation loop can restrict updates to the encoder.

pub mod layers;
pub mod params;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::elem::Elem;
use layers::{
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, sigmoid_backward,
    sigmoid_forward, upsample_backward, upsample_forward, BatchNorm2d, BnCache, BnMode, BnState,
    Conv2d, ConvCache,
};
use params::{ParamGroup, ParamStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input size {0}x{1} must be divisible by 16")]
    BadInputSize(usize, usize),
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
}

/// Architecture hyperparameters; serialized into checkpoints.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Encoder channel widths at strides {2, 4, 8, 16}.
    pub widths: [usize; 4],
    /// Shared width the decoder projects every pyramid level to.
    pub decoder_width: usize,
    /// (height, width) the network accepts; divisible by 16.
    pub input_size: (usize, usize),
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            widths: [16, 32, 64, 128],
            decoder_width: 32,
            input_size: (128, 128),
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(ModelError::BadInputSize(h, w));
        }
        Ok(())
    }
}

/// Whether a forward pass uses batch statistics (and updates the running
/// buffers) or the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Multi-scale encoder features, finest first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<F: Elem> {
    pub levels: Vec<Array4<F>>,
}

impl<F: Elem> FeaturePyramid<F> {
    /// Stride of each level relative to the encoder input.
    pub fn strides(&self) -> [usize; 4] {
        [2, 4, 8, 16]
    }
}

#[derive(Clone, Debug)]
struct EncStage {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

#[derive(Clone, Debug)]
struct StageCache<F: Elem> {
    col1: ConvCache<F>,
    bn1: BnCache<F>,
    relu1: Array4<bool>,
    conv2_in: Array4<F>,
    col2: ConvCache<F>,
    bn2: BnCache<F>,
    relu2: Array4<bool>,
    pool_idx: Array4<u8>,
}

/// Everything the backward pass needs; consumed by [`SegModel::backward`].
pub struct ForwardCache<F: Elem> {
    input: Array4<F>,
    stages: Vec<StageCache<F>>,
    /// Pyramid level k: output of stage k's pool (input to stage k+1 and to
    /// the decoder projection k).
    levels: Vec<Array4<F>>,
    proj_pre_up_shapes: Vec<(usize, usize)>,
    concat: Array4<F>,
    col_f1: ConvCache<F>,
    relu_f1: Array4<bool>,
    fuse2_in: Array4<F>,
    col_f2: ConvCache<F>,
    relu_f2: Array4<bool>,
    head_in: Array4<F>,
    sig_out: Array4<F>,
    fused_shape: (usize, usize),
}

impl<F: Elem> ForwardCache<F> {
    pub fn batch_size(&self) -> usize {
        self.input.dim().0
    }

    pub fn feature_pyramid(&self) -> FeaturePyramid<F> {
        FeaturePyramid { levels: self.levels.clone() }
    }
}

/// The segmentation model: parameters, normalization state and topology.
#[derive(Clone)]
pub struct SegModel<F: Elem> {
    pub cfg: ModelConfig,
    params: ParamStore<F>,
    bn_states: Vec<BnState<F>>,
    stages: Vec<EncStage>,
    projs: Vec<Conv2d>,
    fuse1: Conv2d,
    fuse2: Conv2d,
    head: Conv2d,
}

impl<F: Elem> SegModel<F> {
    /// Build a model with Kaiming-uniform weights drawn from `seed`.
    /// Equal seeds produce bit-identical parameters.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut bn_states = Vec::new();

        let mut stages = Vec::with_capacity(4);
        let mut in_ch = cfg.in_channels;
        for (k, &width) in cfg.widths.iter().enumerate() {
            let base = format!("encoder.stage{}", k + 1);
            let conv1 = Conv2d::new(
                &mut params,
                &format!("{base}.conv1"),
                ParamGroup::Encoder,
                in_ch,
                width,
                3,
                &mut rng,
            );
            let bn1 = BatchNorm2d::new(
                &mut params,
                &mut bn_states,
                &format!("{base}.bn1"),
                ParamGroup::Encoder,
                width,
                cfg.bn_eps,
                cfg.bn_momentum,
            );
            let conv2 = Conv2d::new(
                &mut params,
                &format!("{base}.conv2"),
                ParamGroup::Encoder,
                width,
                width,
                3,
                &mut rng,
            );
            let bn2 = BatchNorm2d::new(
                &mut params,
                &mut bn_states,
                &format!("{base}.bn2"),
                ParamGroup::Encoder,
                width,
                cfg.bn_eps,
                cfg.bn_momentum,
            );
            stages.push(EncStage { conv1, bn1, conv2, bn2 });
            in_ch = width;
        }

        let d = cfg.decoder_width;
        let projs = (0..4)
            .map(|k| {
                Conv2d::new(
                    &mut params,
                    &format!("decoder.proj{}", k + 1),
                    ParamGroup::Decoder,
                    cfg.widths[k],
                    d,
                    1,
                    &mut rng,
                )
            })
            .collect();
        let fuse1 = Conv2d::new(
            &mut params,
            "decoder.fuse1",
            ParamGroup::Decoder,
            4 * d,
            d,
            3,
            &mut rng,
        );
        let fuse2 = Conv2d::new(
            &mut params,
            "decoder.fuse2",
            ParamGroup::Decoder,
            d,
            d,
            3,
            &mut rng,
        );
        let head = Conv2d::new(&mut params, "decoder.head", ParamGroup::Decoder, d, 1, 1, &mut rng);

        Ok(SegModel { cfg, params, bn_states, stages, projs, fuse1, fuse2, head })
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BnState<F>] {
        &self.bn_states
    }

    pub fn bn_states_mut(&mut self) -> &mut [BnState<F>] {
        &mut self.bn_states
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grads();
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    fn check_input(&self, x: &Array4<F>) -> Result<(), ModelError> {
        let (n, c, h, w) = x.dim();
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if c != self.cfg.in_channels || (h, w) != self.cfg.input_size {
            return Err(ModelError::ShapeMismatch(format!(
                "expected (N,{},{},{}), got {:?}",
                self.cfg.in_channels, self.cfg.input_size.0, self.cfg.input_size.1,
                x.dim()
            )));
        }
        Ok(())
    }

    /// Encoder-only pass; used by the statistics-replacement baseline and by
    /// tests of the pyramid contract.
    pub fn encode(&mut self, x: &Array4<F>, mode: Mode) -> Result<FeaturePyramid<F>, ModelError> {
        let bn_mode = match mode {
            Mode::Train => BnMode::Batch { update_running: true },
            Mode::Eval => BnMode::Running,
        };
        let (levels, _) = self.encoder_pass(x, bn_mode)?;
        Ok(FeaturePyramid { levels })
    }

    fn encoder_pass(
        &mut self,
        x: &Array4<F>,
        bn_mode: BnMode,
    ) -> Result<(Vec<Array4<F>>, Vec<StageCache<F>>), ModelError> {
        self.check_input(x)?;
        let mut levels = Vec::with_capacity(4);
        let mut caches = Vec::with_capacity(4);
        let mut cur = x.clone();
        for stage in &self.stages {
            let (c1, col1) = stage.conv1.forward_cached(&self.params, &cur);
            let (b1, bn1_cache) = stage.bn1.forward(&self.params, &mut self.bn_states, &c1, bn_mode);
            let (r1, relu1) = relu_forward(&b1);
            let (c2, col2) = stage.conv2.forward_cached(&self.params, &r1);
            let (b2, bn2_cache) = stage.bn2.forward(&self.params, &mut self.bn_states, &c2, bn_mode);
            let (r2, relu2) = relu_forward(&b2);
            let (pooled, pool_idx) = maxpool2_forward(&r2);
            caches.push(StageCache {
                col1,
                bn1: bn1_cache,
                relu1,
                conv2_in: r1,
                col2,
                bn2: bn2_cache,
                relu2,
                pool_idx,
            });
            levels.push(pooled.clone());
            cur = pooled;
        }
        Ok((levels, caches))
    }

    /// Forward pass. `Mode::Train` normalizes with batch statistics and
    /// updates the running buffers with the configured momentum; `Mode::Eval`
    /// uses the running statistics and mutates nothing.
    pub fn forward(
        &mut self,
        x: &Array4<F>,
        mode: Mode,
    ) -> Result<(Array3<F>, ForwardCache<F>), ModelError> {
        let bn_mode = match mode {
            Mode::Train => BnMode::Batch { update_running: true },
            Mode::Eval => BnMode::Running,
        };
        self.forward_with_bn_mode(x, bn_mode)
    }

    /// Forward with explicit normalization behavior; the adaptation loop uses
    /// this for its eval-statistics variant.
    pub fn forward_with_bn_mode(
        &mut self,
        x: &Array4<F>,
        bn_mode: BnMode,
    ) -> Result<(Array3<F>, ForwardCache<F>), ModelError> {
        let (levels, stage_caches) = self.encoder_pass(x, bn_mode)?;
        let n = x.dim().0;
        let (h, w) = self.cfg.input_size;
        let fused = (h / 2, w / 2);

        let mut proj_pre_up_shapes = Vec::with_capacity(4);
        let mut upsampled = Vec::with_capacity(4);
        for (k, level) in levels.iter().enumerate() {
            let p = self.projs[k].forward(&self.params, level);
            let (ph, pw) = (p.dim().2, p.dim().3);
            proj_pre_up_shapes.push((ph, pw));
            upsampled.push(if (ph, pw) == fused {
                p
            } else {
                upsample_forward(&p, fused)
            });
        }
        let d = self.cfg.decoder_width;
        let mut concat = Array4::zeros((n, 4 * d, fused.0, fused.1));
        for (k, u) in upsampled.iter().enumerate() {
            concat
                .slice_mut(ndarray::s![.., k * d..(k + 1) * d, .., ..])
                .assign(u);
        }

        let (f1, col_f1) = self.fuse1.forward_cached(&self.params, &concat);
        let (r1, relu_f1) = relu_forward(&f1);
        let (f2, col_f2) = self.fuse2.forward_cached(&self.params, &r1);
        let (r2, relu_f2) = relu_forward(&f2);
        let logits = self.head.forward(&self.params, &r2);
        let sig = sigmoid_forward(&logits);
        let probs_full = upsample_forward(&sig, (h, w));

        let probs = probs_full
            .index_axis(Axis(1), 0)
            .to_owned();
        let cache = ForwardCache {
            input: x.clone(),
            stages: stage_caches,
            levels,
            proj_pre_up_shapes,
            concat,
            col_f1,
            relu_f1,
            fuse2_in: r1,
            col_f2,
            relu_f2,
            head_in: r2,
            sig_out: sig,
            fused_shape: fused,
        };
        Ok((probs, cache))
    }

    /// Backward pass: fills parameter gradient buffers (accumulating) and
    /// returns the gradient with respect to the input batch. Consumes the
    /// cache so it cannot be reused against updated parameters.
    pub fn backward(
        &mut self,
        cache: ForwardCache<F>,
        grad_probs: &Array3<F>,
    ) -> Result<Array4<F>, ModelError> {
        let (n, h, w) = grad_probs.dim();
        let (ch, cw) = self.cfg.input_size;
        if n != cache.batch_size() || (h, w) != (ch, cw) {
            return Err(ModelError::ShapeMismatch(format!(
                "gradient shape {:?} does not match cached forward (batch {}, {}x{})",
                grad_probs.dim(),
                cache.batch_size(),
                ch,
                cw
            )));
        }
        let g_full = grad_probs
            .to_owned()
            .insert_axis(Axis(1));

        // decoder head
        let g = upsample_backward(&g_full, cache.fused_shape);
        let g = sigmoid_backward(&g, &cache.sig_out);
        let g = self.head.backward(&mut self.params, &cache.head_in, &g);
        let g = relu_backward(&g, &cache.relu_f2);
        let g = self
            .fuse2
            .backward_cached(&mut self.params, &cache.fuse2_in, &cache.col_f2, &g);
        let g = relu_backward(&g, &cache.relu_f1);
        let g = self
            .fuse1
            .backward_cached(&mut self.params, &cache.concat, &cache.col_f1, &g);

        // split concat gradient back into per-level projection gradients
        let d = self.cfg.decoder_width;
        let mut level_grads: Vec<Array4<F>> = Vec::with_capacity(4);
        for k in 0..4 {
            let gk = g.slice(ndarray::s![.., k * d..(k + 1) * d, .., ..]).to_owned();
            let pre = cache.proj_pre_up_shapes[k];
            let gk = if pre == cache.fused_shape {
                gk
            } else {
                upsample_backward(&gk, pre)
            };
            level_grads.push(self.projs[k].backward(&mut self.params, &cache.levels[k], &gk));
        }

        // encoder, deepest stage first; pool output k feeds both stage k+1
        // and projection k, so gradients add.
        let mut d_level = level_grads.pop().expect("4 levels");
        for k in (0..4).rev() {
            let sc = &cache.stages[k];
            let g = maxpool2_backward(&d_level, &sc.pool_idx);
            let g = relu_backward(&g, &sc.relu2);
            let g = self.stages[k].bn2.backward(&mut self.params, &sc.bn2, &g);
            let g = self.stages[k]
                .conv2
                .backward_cached(&mut self.params, &sc.conv2_in, &sc.col2, &g);
            let g = relu_backward(&g, &sc.relu1);
            let g = self.stages[k].bn1.backward(&mut self.params, &sc.bn1, &g);
            let stage_in = if k == 0 { &cache.input } else { &cache.levels[k - 1] };
            let g = self
                .stages[k]
                .conv1
                .backward_cached(&mut self.params, stage_in, &sc.col1, &g);
            if k == 0 {
                return Ok(g);
            }
            d_level = level_grads.pop().expect("level grad") + g;
        }
        unreachable!("loop returns at k == 0")
    }

    /// Eval-mode inference on a single (C, H, W) image.
    pub fn predict(&mut self, image: &Array3<F>) -> Result<Array2<F>, ModelError> {
        let x = image.to_owned().insert_axis(Axis(0));
        let (probs, _) = self.forward(&x, Mode::Eval)?;
        Ok(probs.index_axis(Axis(0), 0).to_owned())
    }

    /// Eval-mode inference on a batch of images.
    pub fn predict_batch(&mut self, images: &[Array3<F>]) -> Result<Vec<Array2<F>>, ModelError> {
        if images.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let (c, h, w) = images[0].dim();
        let mut x = Array4::zeros((images.len(), c, h, w));
        for (i, img) in images.iter().enumerate() {
            if img.dim() != (c, h, w) {
                return Err(ModelError::ShapeMismatch(format!(
                    "image {i} has shape {:?}, expected {:?}",
                    img.dim(),
                    (c, h, w)
                )));
            }
            x.index_axis_mut(Axis(0), i).assign(img);
        }
        let (probs, _) = self.forward(&x, Mode::Eval)?;
        Ok((0..images.len())
            .map(|i| probs.index_axis(Axis(0), i).to_owned())
            .collect())
    }

    /// Replace every normalization layer's running statistics with moments
    /// recomputed over the full set of `images` (batched at `batch_size`),
    /// normalizing with batch statistics during the pass. Learnable
    /// parameters are untouched.
    pub fn replace_bn_stats(
        &mut self,
        images: &[Array3<F>],
        batch_size: usize,
    ) -> Result<(), ModelError> {
        if images.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let n_bn = self.bn_states.len();
        let mut sums: Vec<ndarray::Array1<f64>> = self
            .bn_states
            .iter()
            .map(|s| ndarray::Array1::zeros(s.mean.len()))
            .collect();
        let mut sumsqs = sums.clone();
        let mut counts = vec![0f64; n_bn];

        for chunk in images.chunks(batch_size.max(1)) {
            let (c, h, w) = chunk[0].dim();
            let mut x = Array4::zeros((chunk.len(), c, h, w));
            for (i, img) in chunk.iter().enumerate() {
                x.index_axis_mut(Axis(0), i).assign(img);
            }
            let (_, caches) = self.encoder_pass(&x, BnMode::Batch { update_running: false })?;
            let m = x.dim().0 as f64;
            for (k, sc) in caches.iter().enumerate() {
                for (j, bn_cache) in [&sc.bn1, &sc.bn2].into_iter().enumerate() {
                    let bn = if j == 0 { &self.stages[k].bn1 } else { &self.stages[k].bn2 };
                    let idx = bn.state_idx;
                    let mean = bn_cache.batch_mean.as_ref().expect("batch mode");
                    let var = bn_cache.batch_var.as_ref().expect("batch mode");
                    // spatial extent halves per stage; count = N*H*W at this layer
                    let (_, _, lh, lw) = bn_cache.x_hat.dim();
                    let m_layer = m * (lh * lw) as f64;
                    for ci in 0..mean.len() {
                        let mu = mean[ci].to_f64();
                        sums[idx][ci] += mu * m_layer;
                        sumsqs[idx][ci] += (var[ci].to_f64() + mu * mu) * m_layer;
                    }
                    counts[idx] += m_layer;
                }
            }
        }

        for (idx, state) in self.bn_states.iter_mut().enumerate() {
            if counts[idx] == 0.0 {
                continue;
            }
            for ci in 0..state.mean.len() {
                let mean = sums[idx][ci] / counts[idx];
                let var = (sumsqs[idx][ci] / counts[idx] - mean * mean).max(0.0);
                state.mean[ci] = F::of(mean);
                state.var[ci] = F::of(var);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            in_channels: 1,
            widths: [4, 8, 8, 16],
            decoder_width: 8,
            input_size: (32, 32),
            ..ModelConfig::default()
        }
    }

    #[test]
    fn default_config_output_in_unit_interval() {
        let cfg = ModelConfig {
            input_size: (64, 64),
            ..ModelConfig::default()
        };
        let mut model = SegModel::<f32>::new(cfg, 0).unwrap();
        let x = Array4::from_elem((1, 1, 64, 64), 0.3f32);
        let (probs, _) = model.forward(&x, Mode::Train).unwrap();
        assert_eq!(probs.dim(), (1, 64, 64));
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn equal_seeds_build_identical_parameters() {
        let a = SegModel::<f32>::new(small_cfg(), 7).unwrap();
        let b = SegModel::<f32>::new(small_cfg(), 7).unwrap();
        for (ea, eb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(ea.name, eb.name);
            assert_eq!(ea.value, eb.value);
        }
        let c = SegModel::<f32>::new(small_cfg(), 8).unwrap();
        assert!(a
            .params()
            .iter()
            .zip(c.params().iter())
            .any(|(x, y)| x.value != y.value));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut model = SegModel::<f32>::new(small_cfg(), 1).unwrap();
        let x = Array4::from_shape_fn((2, 1, 32, 32), |(n, _, r, c)| {
            ((n + r * 31 + c * 7) % 11) as f32 / 11.0
        });
        let (p1, _) = model.forward(&x, Mode::Eval).unwrap();
        let (p2, _) = model.forward(&x, Mode::Eval).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn network_is_not_flip_equivariant() {
        // negative control: flipping the input is not the same as flipping
        // the output
        let mut model = SegModel::<f32>::new(small_cfg(), 2).unwrap();
        let x = Array4::from_shape_fn((1, 1, 32, 32), |(_, _, r, c)| {
            ((r * 13 + c * 5) % 17) as f32 / 17.0
        });
        let flipped = {
            let mut f = x.clone();
            f.slice_mut(ndarray::s![0, 0, .., ..])
                .assign(&crate::image_ops::flip_h(&x.slice(ndarray::s![0, 0, .., ..]).to_owned()));
            f
        };
        let (p, _) = model.forward(&x, Mode::Eval).unwrap();
        let (pf, _) = model.forward(&flipped, Mode::Eval).unwrap();
        let p_plane = p.index_axis(Axis(0), 0).to_owned();
        let pf_plane = pf.index_axis(Axis(0), 0).to_owned();
        let flipped_back = crate::image_ops::flip_h(&pf_plane);
        let diff: f32 = (&p_plane - &flipped_back).mapv(f32::abs).sum();
        assert!(diff > 1e-3, "unexpectedly flip-equivariant (diff={diff})");
    }

    #[test]
    fn rejects_bad_input_size() {
        let cfg = ModelConfig {
            input_size: (40, 40),
            ..ModelConfig::default()
        };
        assert!(matches!(SegModel::<f32>::new(cfg, 0), Err(ModelError::BadInputSize(..))));

        let mut model = SegModel::<f32>::new(small_cfg(), 0).unwrap();
        let x = Array4::<f32>::zeros((1, 1, 16, 16));
        assert!(model.forward(&x, Mode::Eval).is_err());
    }

    #[test]
    fn pyramid_contract_holds() {
        let mut model = SegModel::<f32>::new(small_cfg(), 3).unwrap();
        let x = Array4::<f32>::zeros((2, 1, 32, 32));
        let pyr = model.encode(&x, Mode::Eval).unwrap();
        assert_eq!(pyr.levels.len(), 4);
        let mut prev = usize::MAX;
        for (k, level) in pyr.levels.iter().enumerate() {
            let (_, c, h, w) = level.dim();
            let stride = pyr.strides()[k];
            assert_eq!((h, w), (32 / stride, 32 / stride));
            assert_eq!(c, small_cfg().widths[k]);
            assert!(h * w < prev);
            prev = h * w;
        }
    }

    #[test]
    fn zero_grad_output_gives_zero_param_grads() {
        let mut model = SegModel::<f64>::new(small_cfg(), 4).unwrap();
        let x = Array4::from_elem((1, 1, 32, 32), 0.5f64);
        let (_, cache) = model.forward(&x, Mode::Train).unwrap();
        model.zero_grad();
        let g = Array3::zeros((1, 32, 32));
        let dx = model.backward(cache, &g).unwrap();
        assert!(dx.iter().all(|&v| v == 0.0));
        for e in model.params().iter() {
            assert!(e.grad.iter().all(|&v| v == 0.0), "{}", e.name);
        }
    }

    #[test]
    fn gradient_accumulates_linearly_over_backward_calls() {
        let mut model = SegModel::<f64>::new(small_cfg(), 5).unwrap();
        let x = Array4::from_shape_fn((1, 1, 32, 32), |(_, _, r, c)| {
            ((r + 2 * c) % 13) as f64 / 13.0
        });
        let g1 = Array3::from_elem((1, 32, 32), 0.3f64);
        let g2 = Array3::from_elem((1, 32, 32), -0.7f64);

        let (_, cache) = model.forward(&x, Mode::Eval).unwrap();
        model.zero_grad();
        model.backward(cache, &g1).unwrap();
        let (_, cache) = model.forward(&x, Mode::Eval).unwrap();
        model.backward(cache, &g2).unwrap();
        let accumulated: Vec<_> = model.params().iter().map(|e| e.grad.clone()).collect();

        let (_, cache) = model.forward(&x, Mode::Eval).unwrap();
        model.zero_grad();
        let summed = &g1 + &g2;
        model.backward(cache, &summed).unwrap();
        for (e, acc) in model.params().iter().zip(accumulated.iter()) {
            let diff = (&e.grad - acc).mapv(f64::abs).sum();
            assert!(diff < 1e-9, "{} diff {diff}", e.name);
        }
    }
}
