//! Supervised training and the test-time adaptation loops.
//!
//! Training minimizes per-image balanced BCE with AdamW under a cosine
//! schedule. Adaptation then updates the trained model on unlabeled test
//! images:
//!
//! - `tica`: two augmented views per image, both predictions mapped to the
//!   canonical frame, KL consistency over the foreground and background
//!   intersection regions, Adam steps restricted to the encoder;
//! - `tent`: entropy minimization over normalization affine parameters;
//! - `eta`: tent restricted to low-entropy batch elements;
//! - `bn`: running-statistics replacement, no gradient steps;
//! - `none`: the unadapted baseline.
//!
//! Gradient-based methods run their forward passes with batch statistics
//! (the running buffers evolve during adaptation); `eval_stats` switches to
//! frozen running statistics instead.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::elem::Elem;
use crate::geometry::{
    apply_transform, apply_transform_mask, sample_view_transform, to_canonical,
    to_canonical_backward, AugmentConfig, GeometryError,
};
use crate::losses::{
    bbce, entropy_loss, tica_loss_with_mode, BbceMode, KlMode, LossError, LossWeights,
};
use crate::model::layers::BnMode;
use crate::model::{Mode, ModelError, SegModel};
use crate::optim::{cosine_lr, Adam, AdamConfig, UpdateScope};
use crate::{data::SamplePair, util::derive_seed};

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("loss: {0}")]
    Loss(#[from] LossError),
}

/// Test-time adaptation method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Unadapted baseline.
    None,
    #[default]
    Tica,
    Tent,
    Bn,
    Eta,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Tica => "tica",
            Method::Tent => "tent",
            Method::Bn => "bn",
            Method::Eta => "eta",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "none" => Some(Method::None),
            "tica" => Some(Method::Tica),
            "tent" => Some(Method::Tent),
            "bn" => Some(Method::Bn),
            "eta" => Some(Method::Eta),
            _ => None,
        }
    }
}

/// Continual adaptation persists updates across the whole test set;
/// episodic adaptation resets to the starting checkpoint before each image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptMode {
    #[default]
    Continual,
    Episodic,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    /// Binarization threshold for region selection.
    pub threshold: f64,
    /// Update scope of the consistency method (tent/eta always use the
    /// normalization affine scope).
    pub update_scope: UpdateScope,
    pub kl_mode: KlMode,
    /// Mean-entropy cutoff below which a sample contributes (eta only).
    pub eta_entropy_threshold: f64,
    pub mode: AdaptMode,
    /// Optional global-norm gradient clip.
    pub grad_clip: Option<f64>,
    /// Normalize with frozen running statistics instead of batch statistics.
    pub eval_stats: bool,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            method: Method::Tica,
            epochs: 5,
            batch_size: 4,
            lr: 1e-4,
            weights: LossWeights::default(),
            threshold: 0.5,
            update_scope: UpdateScope::Encoder,
            kl_mode: KlMode::Sym,
            eta_entropy_threshold: 0.4 * std::f64::consts::LN_2,
            mode: AdaptMode::Continual,
            grad_clip: None,
            eval_stats: false,
            seed: 0,
        }
    }
}

/// One optimizer step's worth of trace.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub method: Method,
    pub loss: f64,
    pub loss_fg: f64,
    pub loss_bg: f64,
    pub fg_pixels: usize,
    pub bg_pixels: usize,
    /// Batch elements that contributed (eta's selection; batch size elsewhere).
    pub selected: usize,
}

#[derive(Debug, Default)]
pub struct AdaptReport<F: Elem> {
    pub trace: Vec<StepRecord>,
    /// Per-image predictions made right after adapting on each image
    /// (episodic mode only).
    pub episodic_predictions: Option<Vec<Array2<F>>>,
}

/// Supervised training configuration.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Cosine-decay the learning rate to zero over the run.
    pub cosine: bool,
    /// Apply flip/resize/crop augmentation to training samples.
    pub augment: bool,
    pub bbce_mode: BbceMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            lr: 2e-4,
            weight_decay: 0.01,
            cosine: true,
            augment: true,
            bbce_mode: BbceMode::InverseFrequency,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

fn stack_images<F: Elem>(images: &[&Array3<F>]) -> Array4<F> {
    let (c, h, w) = images[0].dim();
    let mut x = Array4::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        x.index_axis_mut(Axis(0), i).assign(img);
    }
    x
}

fn clip_gradients<F: Elem>(model: &mut SegModel<F>, max_norm: f64) {
    let mut sq = 0.0f64;
    for e in model.params().iter() {
        for &g in e.grad.iter() {
            let g = g.to_f64();
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = F::of(max_norm / norm);
        for e in model.params_mut().iter_mut() {
            e.grad.mapv_inplace(|g| g * scale);
        }
    }
}

/// Train the model on labeled pairs with AdamW and a cosine schedule;
/// returns the mean step loss per epoch. Deterministic under `cfg.seed`.
pub fn train_supervised<F: Elem>(
    model: &mut SegModel<F>,
    train_set: &[SamplePair<F>],
    cfg: &TrainConfig,
) -> Result<TrainReport, AdaptError> {
    if train_set.is_empty() {
        return Err(AdaptError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(AdamConfig::adamw(cfg.lr, cfg.weight_decay), model.params());
    let batch = cfg.batch_size.max(1);
    let steps_per_epoch = train_set.len().div_ceil(batch);
    let total_steps = cfg.epochs * steps_per_epoch;
    let aug = AugmentConfig::for_canonical(model.cfg.input_size);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        for chunk in order.chunks(batch) {
            let b = chunk.len();
            let mut imgs: Vec<Array3<F>> = Vec::with_capacity(b);
            let mut masks: Vec<Array2<F>> = Vec::with_capacity(b);
            for &i in chunk {
                let s = &train_set[i];
                if cfg.augment {
                    let t = sample_view_transform(&mut rng, &aug)?;
                    imgs.push(apply_transform(&s.image, &t)?);
                    masks.push(apply_transform_mask(&s.mask, &t)?);
                } else {
                    imgs.push(s.image.clone());
                    masks.push(s.mask.clone());
                }
            }
            let refs: Vec<&Array3<F>> = imgs.iter().collect();
            let x = stack_images(&refs);
            let (probs, cache) = model.forward(&x, Mode::Train)?;

            let mut grad = Array3::zeros(probs.dim());
            let mut batch_loss = 0.0;
            let inv_b = F::of(1.0 / b as f64);
            for i in 0..b {
                let p = probs.index_axis(Axis(0), i).to_owned();
                let l = bbce(&p, &masks[i], cfg.bbce_mode)?;
                batch_loss += l.value.to_f64() / b as f64;
                grad.index_axis_mut(Axis(0), i)
                    .assign(&l.grad.mapv(|g| g * inv_b));
            }
            if !batch_loss.is_finite() {
                return Err(AdaptError::NonFiniteLoss { epoch: _epoch, batch: step });
            }
            model.zero_grad();
            model.backward(cache, &grad)?;
            let lr = if cfg.cosine {
                cosine_lr(cfg.lr, step, total_steps)
            } else {
                cfg.lr
            };
            opt.step(model.params_mut(), UpdateScope::All, Some(lr));
            step += 1;
            epoch_loss += batch_loss;
            epoch_steps += 1;
        }
        epoch_losses.push(epoch_loss / epoch_steps as f64);
    }
    Ok(TrainReport { epoch_losses, steps: step })
}

/// Dispatch on `cfg.method`. See [`adapt_with_hook`] for the epoch callback.
pub fn adapt<F: Elem>(
    model: &mut SegModel<F>,
    test_images: &[Array3<F>],
    cfg: &AdaptConfig,
) -> Result<AdaptReport<F>, AdaptError> {
    adapt_with_hook(model, test_images, cfg, |_, _| {})
}

/// Adapt with a per-epoch callback (continual gradient methods only): after
/// each epoch the hook receives the epoch index and the current model, which
/// is how per-epoch evaluation curves are produced.
pub fn adapt_with_hook<F: Elem>(
    model: &mut SegModel<F>,
    test_images: &[Array3<F>],
    cfg: &AdaptConfig,
    mut hook: impl FnMut(usize, &mut SegModel<F>),
) -> Result<AdaptReport<F>, AdaptError> {
    if test_images.is_empty() {
        return Err(AdaptError::EmptyDataset);
    }
    match cfg.method {
        Method::None => Ok(AdaptReport { trace: Vec::new(), episodic_predictions: None }),
        Method::Bn => {
            model.replace_bn_stats(test_images, cfg.batch_size)?;
            Ok(AdaptReport { trace: Vec::new(), episodic_predictions: None })
        }
        Method::Tica | Method::Tent | Method::Eta => match cfg.mode {
            AdaptMode::Continual => {
                let trace = adapt_gradient_continual(model, test_images, cfg, &mut hook)?;
                Ok(AdaptReport { trace, episodic_predictions: None })
            }
            AdaptMode::Episodic => adapt_gradient_episodic(model, test_images, cfg),
        },
    }
}

fn bn_mode_for(cfg: &AdaptConfig) -> BnMode {
    if cfg.eval_stats {
        BnMode::Running
    } else {
        BnMode::Batch { update_running: true }
    }
}

fn adapt_gradient_continual<F: Elem>(
    model: &mut SegModel<F>,
    images: &[Array3<F>],
    cfg: &AdaptConfig,
    hook: &mut impl FnMut(usize, &mut SegModel<F>),
) -> Result<Vec<StepRecord>, AdaptError> {
    if cfg.method == Method::Tica
        && cfg.weights.lambda_fg == 0.0
        && cfg.weights.lambda_bg == 0.0
    {
        // zero objective: nothing to optimize, leave the checkpoint untouched
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(AdamConfig::adam(cfg.lr), model.params());
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        for (batch_idx, chunk) in images.chunks(cfg.batch_size.max(1)).enumerate() {
            let record = match cfg.method {
                Method::Tica => {
                    tica_step(model, chunk, cfg, &mut rng, &mut opt, epoch, batch_idx)?
                }
                Method::Tent | Method::Eta => {
                    entropy_step(model, chunk, cfg, &mut opt, epoch, batch_idx)?
                }
                _ => unreachable!("gradient methods only"),
            };
            trace.push(record);
        }
        hook(epoch, model);
    }
    Ok(trace)
}

fn adapt_gradient_episodic<F: Elem>(
    model: &mut SegModel<F>,
    images: &[Array3<F>],
    cfg: &AdaptConfig,
) -> Result<AdaptReport<F>, AdaptError> {
    let snapshot = model.clone();
    let mut trace = Vec::new();
    let mut predictions = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        *model = snapshot.clone();
        let per_image = AdaptConfig {
            mode: AdaptMode::Continual,
            seed: derive_seed(cfg.seed, 2, i),
            ..cfg.clone()
        };
        let sub = std::slice::from_ref(img);
        let mut sub_trace = adapt_gradient_continual(model, sub, &per_image, &mut |_, _| {})?;
        for r in &mut sub_trace {
            r.batch = i;
        }
        trace.extend(sub_trace);
        predictions.push(model.predict(img)?);
    }
    Ok(AdaptReport { trace, episodic_predictions: Some(predictions) })
}

#[allow(clippy::too_many_arguments)]
fn tica_step<F: Elem>(
    model: &mut SegModel<F>,
    chunk: &[Array3<F>],
    cfg: &AdaptConfig,
    rng: &mut ChaCha8Rng,
    opt: &mut Adam<F>,
    epoch: usize,
    batch_idx: usize,
) -> Result<StepRecord, AdaptError> {
    let b = chunk.len();
    let (_, h, w) = chunk[0].dim();
    let aug = AugmentConfig {
        output_size: model.cfg.input_size,
        ..AugmentConfig::for_canonical((h, w))
    };

    let mut views: Vec<Array3<F>> = Vec::with_capacity(2 * b);
    let mut transforms = Vec::with_capacity(2 * b);
    for img in chunk {
        let t1 = sample_view_transform(rng, &aug)?;
        let t2 = sample_view_transform(rng, &aug)?;
        views.push(apply_transform(img, &t1)?);
        transforms.push(t1);
        views.push(apply_transform(img, &t2)?);
        transforms.push(t2);
    }
    // batch layout: [view1 of image 0, view2 of image 0, view1 of image 1, ...]
    let refs: Vec<&Array3<F>> = views.iter().collect();
    let x = stack_images(&refs);
    let (probs, cache) = model.forward_with_bn_mode(&x, bn_mode_for(cfg))?;

    let threshold = F::of(cfg.threshold);
    let inv_b = F::of(1.0 / b as f64);
    let mut grad = Array3::zeros(probs.dim());
    let mut loss = 0.0;
    let mut loss_fg = 0.0;
    let mut loss_bg = 0.0;
    let mut fg_pixels = 0usize;
    let mut bg_pixels = 0usize;
    for i in 0..b {
        let p1 = probs.index_axis(Axis(0), 2 * i).to_owned();
        let p2 = probs.index_axis(Axis(0), 2 * i + 1).to_owned();
        let c1 = to_canonical(&p1, &transforms[2 * i])?;
        let c2 = to_canonical(&p2, &transforms[2 * i + 1])?;
        let tl = tica_loss_with_mode(&c1, &c2, &cfg.weights, threshold, cfg.kl_mode)?;
        loss += tl.value.to_f64() / b as f64;
        loss_fg += tl.fg_value.to_f64() / b as f64;
        loss_bg += tl.bg_value.to_f64() / b as f64;
        fg_pixels += tl.fg_pixels;
        bg_pixels += tl.bg_pixels;
        let g1 = to_canonical_backward(&tl.grad_y1.mapv(|g| g * inv_b), &transforms[2 * i])?;
        let g2 = to_canonical_backward(&tl.grad_y2.mapv(|g| g * inv_b), &transforms[2 * i + 1])?;
        grad.index_axis_mut(Axis(0), 2 * i).assign(&g1);
        grad.index_axis_mut(Axis(0), 2 * i + 1).assign(&g2);
    }
    if !loss.is_finite() {
        return Err(AdaptError::NonFiniteLoss { epoch, batch: batch_idx });
    }
    model.zero_grad();
    model.backward(cache, &grad)?;
    if let Some(clip) = cfg.grad_clip {
        clip_gradients(model, clip);
    }
    opt.step(model.params_mut(), cfg.update_scope, None);
    Ok(StepRecord {
        epoch,
        batch: batch_idx,
        method: Method::Tica,
        loss,
        loss_fg,
        loss_bg,
        fg_pixels,
        bg_pixels,
        selected: b,
    })
}

fn entropy_step<F: Elem>(
    model: &mut SegModel<F>,
    chunk: &[Array3<F>],
    cfg: &AdaptConfig,
    opt: &mut Adam<F>,
    epoch: usize,
    batch_idx: usize,
) -> Result<StepRecord, AdaptError> {
    let b = chunk.len();
    let refs: Vec<&Array3<F>> = chunk.iter().collect();
    let x = stack_images(&refs);
    let (probs, cache) = model.forward_with_bn_mode(&x, bn_mode_for(cfg))?;

    let mut per_image = Vec::with_capacity(b);
    for i in 0..b {
        let p = probs.index_axis(Axis(0), i).to_owned();
        per_image.push(entropy_loss(&p)?);
    }
    let selected: Vec<usize> = match cfg.method {
        Method::Eta => (0..b)
            .filter(|&i| per_image[i].value.to_f64() < cfg.eta_entropy_threshold)
            .collect(),
        _ => (0..b).collect(),
    };

    if selected.is_empty() {
        // no contributing sample: no gradient step
        return Ok(StepRecord {
            epoch,
            batch: batch_idx,
            method: cfg.method,
            loss: 0.0,
            loss_fg: 0.0,
            loss_bg: 0.0,
            fg_pixels: 0,
            bg_pixels: 0,
            selected: 0,
        });
    }

    let inv = F::of(1.0 / selected.len() as f64);
    let mut grad = Array3::zeros(probs.dim());
    let mut loss = 0.0;
    for &i in &selected {
        loss += per_image[i].value.to_f64() / selected.len() as f64;
        grad.index_axis_mut(Axis(0), i)
            .assign(&per_image[i].grad.mapv(|g| g * inv));
    }
    if !loss.is_finite() {
        return Err(AdaptError::NonFiniteLoss { epoch, batch: batch_idx });
    }
    model.zero_grad();
    model.backward(cache, &grad)?;
    if let Some(clip) = cfg.grad_clip {
        clip_gradients(model, clip);
    }
    // tent and eta always update normalization affine parameters only
    opt.step(model.params_mut(), UpdateScope::NormAffine, None);
    Ok(StepRecord {
        epoch,
        batch: batch_idx,
        method: cfg.method,
        loss,
        loss_fg: 0.0,
        loss_bg: 0.0,
        fg_pixels: 0,
        bg_pixels: 0,
        selected: selected.len(),
    })
}

/// Names of parameters whose values differ between two models.
pub fn param_diff_names<F: Elem>(a: &SegModel<F>, b: &SegModel<F>) -> Vec<String> {
    a.params()
        .iter()
        .zip(b.params().iter())
        .filter(|(x, y)| x.value != y.value)
        .map(|(x, _)| x.name.clone())
        .collect()
}

/// Names of normalization states whose running statistics differ.
pub fn state_diff_names<F: Elem>(a: &SegModel<F>, b: &SegModel<F>) -> Vec<String> {
    a.bn_states()
        .iter()
        .zip(b.bn_states().iter())
        .filter(|(x, y)| x.mean != y.mean || x.var != y.var)
        .map(|(x, _)| x.name.clone())
        .collect()
}
