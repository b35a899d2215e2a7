//! Dataset ingestion and the procedural shadow-scene generator.
//!
//! A scene is `albedo x illumination`: the albedo is smooth value noise with
//! optional dark distractor objects (which are not shadows and never enter
//! the label), the illumination is 1 except under shadow shapes where it is
//! multiplied by an attenuation factor, with a Gaussian penumbra. The ground
//! truth is the pre-blur shadow support. Test-split images additionally get
//! a monotone photometric shift `v -> clamp((g v)^gamma)`, which is the
//! train/test distribution gap the adaptation methods are evaluated on.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::elem::Elem;
use crate::image_ops::{gaussian_blur, resize_bilinear, resize_nearest};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image {0}: {1}")]
    Image(String, String),
    #[error("sample {0}: missing mask file")]
    MissingMask(String),
    #[error("sample {id}: image is {image:?} but mask is {mask:?}")]
    SizeMismatch {
        id: String,
        image: (usize, usize),
        mask: (usize, usize),
    },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

/// One labeled sample: (C, H, W) image in [0,1] and a binary H x W mask.
#[derive(Clone, Debug)]
pub struct SamplePair<F: Elem> {
    pub image: Array3<F>,
    pub mask: Array2<F>,
    pub id: String,
}

/// Shadow/distractor shape families.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Polygon,
    Ellipse,
    /// Each shape independently picks polygon or ellipse.
    #[default]
    Union,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub canvas: (usize, usize),
    pub train_count: usize,
    pub test_count: usize,
    /// Value-noise octaves of the background albedo.
    pub noise_octaves: usize,
    /// Peak-to-peak contrast of the albedo noise.
    pub albedo_contrast: f64,
    pub albedo_base: f64,
    pub shadow_count: (usize, usize),
    pub shadow_shapes: ShapeFamily,
    /// Multiplicative illumination factor inside a shadow.
    pub attenuation: (f64, f64),
    /// Penumbra blur sigma range, in pixels.
    pub penumbra_sigma: (f64, f64),
    pub distractor_count: (usize, usize),
    /// Albedo of distractor objects (dark, but not shadows).
    pub distractor_albedo: (f64, f64),
    /// Photometric shift applied to test images: v -> clamp((gain*v)^gamma).
    pub shift_gain: f64,
    pub shift_gamma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            canvas: (128, 128),
            train_count: 400,
            test_count: 100,
            noise_octaves: 3,
            albedo_contrast: 0.4,
            albedo_base: 0.7,
            shadow_count: (1, 3),
            shadow_shapes: ShapeFamily::Union,
            attenuation: (0.3, 0.7),
            penumbra_sigma: (1.0, 3.0),
            distractor_count: (1, 3),
            distractor_albedo: (0.05, 0.3),
            shift_gain: 1.4,
            shift_gamma: 1.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidConfig(msg));
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return bad("canvas must be positive".into());
        }
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(range_ok(self.attenuation)
            && self.attenuation.0 > 0.0
            && self.attenuation.1 <= 1.0)
        {
            return bad(format!("attenuation range {:?} must lie in (0,1]", self.attenuation));
        }
        if !range_ok(self.penumbra_sigma) || self.penumbra_sigma.0 < 0.0 {
            return bad(format!("penumbra sigma range {:?} invalid", self.penumbra_sigma));
        }
        if !range_ok(self.distractor_albedo) || self.distractor_albedo.0 < 0.0 {
            return bad(format!("distractor albedo range {:?} invalid", self.distractor_albedo));
        }
        if self.shadow_count.0 > self.shadow_count.1
            || self.distractor_count.0 > self.distractor_count.1
        {
            return bad("count ranges must be non-empty".into());
        }
        if !(self.shift_gain > 0.0 && self.shift_gamma > 0.0) {
            return bad("shift gain and gamma must be positive".into());
        }
        Ok(())
    }
}

fn sample_seed(base: u64, split: u64, index: usize) -> u64 {
    crate::util::derive_seed(base, split, index)
}

enum Shape {
    Polygon(Vec<(f64, f64)>),
    Ellipse {
        center: (f64, f64),
        axes: (f64, f64),
        rot: f64,
    },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Polygon(verts) => {
                // ray casting
                let mut inside = false;
                let n = verts.len();
                for i in 0..n {
                    let (y1, x1) = verts[i];
                    let (y2, x2) = verts[(i + 1) % n];
                    if ((y1 > y) != (y2 > y))
                        && (x < (x2 - x1) * (y - y1) / (y2 - y1) + x1)
                    {
                        inside = !inside;
                    }
                }
                inside
            }
            Shape::Ellipse { center, axes, rot } => {
                let dy = y - center.0;
                let dx = x - center.1;
                let (s, c) = rot.sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / axes.1).powi(2) + (v / axes.0).powi(2) <= 1.0
            }
        }
    }
}

fn sample_shape<R: Rng>(
    rng: &mut R,
    canvas: (usize, usize),
    family: ShapeFamily,
    radius_frac: (f64, f64),
) -> Shape {
    let min_side = canvas.0.min(canvas.1) as f64;
    let cy = rng.gen_range(0.0..canvas.0 as f64);
    let cx = rng.gen_range(0.0..canvas.1 as f64);
    let kind = match family {
        ShapeFamily::Polygon => 0,
        ShapeFamily::Ellipse => 1,
        ShapeFamily::Union => rng.gen_range(0..2u32) as usize,
    };
    if kind == 0 {
        let r = rng.gen_range(radius_frac.0..=radius_frac.1) * min_side;
        let k = rng.gen_range(3..=8usize);
        let verts = (0..k)
            .map(|i| {
                let jitter = rng.gen_range(-0.35..0.35);
                let angle = 2.0 * std::f64::consts::PI * (i as f64 + jitter) / k as f64;
                let ri = r * rng.gen_range(0.6..1.3);
                (cy + ri * angle.sin(), cx + ri * angle.cos())
            })
            .collect();
        Shape::Polygon(verts)
    } else {
        let a = rng.gen_range(radius_frac.0..=radius_frac.1) * min_side;
        let b = rng.gen_range(radius_frac.0..=radius_frac.1) * min_side;
        let rot = rng.gen_range(0.0..std::f64::consts::PI);
        Shape::Ellipse { center: (cy, cx), axes: (a, b), rot }
    }
}

fn rasterize(shape: &Shape, canvas: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(canvas, |(r, c)| {
        if shape.contains(r as f64, c as f64) {
            1.0
        } else {
            0.0
        }
    })
}

fn value_noise<R: Rng>(rng: &mut R, canvas: (usize, usize), octaves: usize) -> Array2<f64> {
    let mut total = Array2::<f64>::zeros(canvas);
    let mut weight_sum = 0.0;
    for o in 0..octaves.max(1) {
        let cells = 4usize << o;
        let lattice =
            Array2::from_shape_fn((cells + 1, cells + 1), |_| rng.gen::<f64>());
        let field = resize_bilinear(&lattice, canvas);
        let amp = 0.5f64.powi(o as i32);
        total = total + field * amp;
        weight_sum += amp;
    }
    total / weight_sum
}

/// Internals of one generated scene, for invariant checks.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct Scene {
    pub image: Array2<f64>,
    pub mask: Array2<f64>,
    pub illumination: Array2<f64>,
    pub distractor_support: Array2<bool>,
    pub attenuation: f64,
}

pub(crate) fn synth_scene(cfg: &SynthConfig, seed: u64) -> Scene {
    let canvas = cfg.canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // 1. background albedo from smooth noise
    let noise = value_noise(&mut rng, canvas, cfg.noise_octaves);
    let mut albedo = noise.mapv(|n| {
        (cfg.albedo_base + cfg.albedo_contrast * (n - 0.5)).clamp(0.25, 0.98)
    });

    // 2. shadow shapes -> hard matte (the label) and soft illumination
    let n_shadows = rng.gen_range(cfg.shadow_count.0..=cfg.shadow_count.1);
    let mut matte = Array2::<f64>::zeros(canvas);
    for _ in 0..n_shadows {
        let shape = sample_shape(&mut rng, canvas, cfg.shadow_shapes, (0.12, 0.30));
        let raster = rasterize(&shape, canvas);
        ndarray::Zip::from(&mut matte).and(&raster).for_each(|m, &r| {
            *m = m.max(r);
        });
    }
    let alpha = if cfg.attenuation.0 == cfg.attenuation.1 {
        cfg.attenuation.0
    } else {
        rng.gen_range(cfg.attenuation.0..=cfg.attenuation.1)
    };
    let sigma = if cfg.penumbra_sigma.0 == cfg.penumbra_sigma.1 {
        cfg.penumbra_sigma.0
    } else {
        rng.gen_range(cfg.penumbra_sigma.0..=cfg.penumbra_sigma.1)
    };
    let soft = gaussian_blur(&matte, sigma);
    let illumination = soft.mapv(|s| 1.0 - (1.0 - alpha) * s);

    // 3. distractors: dark albedo objects, rejected if they touch the label
    let n_distr = rng.gen_range(cfg.distractor_count.0..=cfg.distractor_count.1);
    let mut distractor_support = Array2::from_elem(canvas, false);
    for _ in 0..n_distr {
        for _attempt in 0..20 {
            let shape = sample_shape(&mut rng, canvas, cfg.shadow_shapes, (0.06, 0.16));
            let raster = rasterize(&shape, canvas);
            let overlaps = raster
                .iter()
                .zip(matte.iter())
                .any(|(&r, &m)| r > 0.0 && m > 0.0);
            if overlaps {
                continue;
            }
            let dark = rng.gen_range(cfg.distractor_albedo.0..=cfg.distractor_albedo.1);
            ndarray::Zip::from(&mut albedo)
                .and(&raster)
                .and(&mut distractor_support)
                .for_each(|a, &r, d| {
                    if r > 0.0 {
                        *a = dark;
                        *d = true;
                    }
                });
            break;
        }
    }

    let image = (&albedo * &illumination).mapv(|v| v.clamp(0.0, 1.0));
    Scene {
        image,
        mask: matte,
        illumination,
        distractor_support,
        attenuation: alpha,
    }
}

fn apply_shift(image: &Array2<f64>, gain: f64, gamma: f64) -> Array2<f64> {
    image.mapv(|v| ((gain * v).powf(gamma)).clamp(0.0, 1.0))
}

fn to_pair<F: Elem>(image: &Array2<f64>, mask: &Array2<f64>, id: String) -> SamplePair<F> {
    let (h, w) = image.dim();
    let mut img = Array3::zeros((1, h, w));
    for ((r, c), &v) in image.indexed_iter() {
        img[[0, r, c]] = F::of(v);
    }
    SamplePair {
        image: img,
        mask: mask.mapv(|v| F::of(v)),
        id,
    }
}

/// Generate the (train, test) splits. Shape parameters of both splits come
/// from the same distribution; only the test split gets the photometric
/// shift. Deterministic under `cfg.seed`.
pub fn generate_synthetic<F: Elem>(
    cfg: &SynthConfig,
) -> Result<(Vec<SamplePair<F>>, Vec<SamplePair<F>>), DataError> {
    cfg.validate()?;
    let mut train = Vec::with_capacity(cfg.train_count);
    for i in 0..cfg.train_count {
        let scene = synth_scene(cfg, sample_seed(cfg.seed, 0, i));
        train.push(to_pair(&scene.image, &scene.mask, format!("train-{i:04}")));
    }
    let mut test = Vec::with_capacity(cfg.test_count);
    for i in 0..cfg.test_count {
        let scene = synth_scene(cfg, sample_seed(cfg.seed, 1, i));
        let shifted = apply_shift(&scene.image, cfg.shift_gain, cfg.shift_gamma);
        test.push(to_pair(&shifted, &scene.mask, format!("test-{i:04}")));
    }
    Ok((train, test))
}

fn quantize<F: Elem>(v: F) -> u8 {
    (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// SHA-256 over the 8-bit quantized content of a list of samples; the
/// determinism fixture for generated datasets.
pub fn dataset_digest<F: Elem>(pairs: &[SamplePair<F>]) -> String {
    let mut hasher = Sha256::new();
    for p in pairs {
        hasher.update(p.id.as_bytes());
        hasher.update(b"I");
        for &v in p.image.iter() {
            hasher.update([quantize(v)]);
        }
        hasher.update(b"M");
        for &v in p.mask.iter() {
            hasher.update([if v.to_f64() >= 0.5 { 255u8 } else { 0u8 }]);
        }
    }
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write one split as `dir/images/NNNN.png` + `dir/masks/NNNN.png` (8-bit
/// grayscale; masks as {0, 255}).
pub fn save_dataset<F: Elem>(pairs: &[SamplePair<F>], dir: &Path) -> Result<(), DataError> {
    if pairs.is_empty() {
        return Err(DataError::Empty);
    }
    let images = dir.join("images");
    let masks = dir.join("masks");
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&masks)?;
    for (i, p) in pairs.iter().enumerate() {
        let (ch, h, w) = p.image.dim();
        let name = format!("{i:04}.png");
        if ch == 1 {
            let mut buf = image::GrayImage::new(w as u32, h as u32);
            for ((_, r, c), &v) in p.image.indexed_iter() {
                buf.put_pixel(c as u32, r as u32, image::Luma([quantize(v)]));
            }
            buf.save(images.join(&name))
                .map_err(|e| DataError::Image(p.id.clone(), e.to_string()))?;
        } else {
            let mut buf = image::RgbImage::new(w as u32, h as u32);
            for r in 0..h {
                for c in 0..w {
                    let px = [
                        quantize(p.image[[0, r, c]]),
                        quantize(p.image[[1.min(ch - 1), r, c]]),
                        quantize(p.image[[2.min(ch - 1), r, c]]),
                    ];
                    buf.put_pixel(c as u32, r as u32, image::Rgb(px));
                }
            }
            buf.save(images.join(&name))
                .map_err(|e| DataError::Image(p.id.clone(), e.to_string()))?;
        }
        let (mh, mw) = p.mask.dim();
        let mut mbuf = image::GrayImage::new(mw as u32, mh as u32);
        for ((r, c), &v) in p.mask.indexed_iter() {
            let byte = if v.to_f64() >= 0.5 { 255u8 } else { 0 };
            mbuf.put_pixel(c as u32, r as u32, image::Luma([byte]));
        }
        mbuf.save(masks.join(&name))
            .map_err(|e| DataError::Image(p.id.clone(), e.to_string()))?;
    }
    Ok(())
}

/// Load a split directory written in the [`save_dataset`] layout.
///
/// Images are scaled to [0,1] and bilinearly resized to `input_size`; masks
/// are binarized at 128 and resized with nearest-neighbor. `channels` selects
/// grayscale (1) or RGB (3) decoding. Pairs are sorted by filename.
pub fn load_dataset<F: Elem>(
    dir: &Path,
    input_size: (usize, usize),
    channels: usize,
) -> Result<Vec<SamplePair<F>>, DataError> {
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    let mut names: Vec<String> = fs::read_dir(&images_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(DataError::Empty);
    }

    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let id = name.trim_end_matches(".png").to_string();
        let img_path = images_dir.join(&name);
        let mask_path = masks_dir.join(&name);
        if !mask_path.exists() {
            return Err(DataError::MissingMask(id));
        }
        let img = image::open(&img_path)
            .map_err(|e| DataError::Image(id.clone(), e.to_string()))?;
        let mask_img = image::open(&mask_path)
            .map_err(|e| DataError::Image(id.clone(), e.to_string()))?;

        let (iw, ih) = (img.width() as usize, img.height() as usize);
        let (mw, mh) = (mask_img.width() as usize, mask_img.height() as usize);
        if (ih, iw) != (mh, mw) {
            return Err(DataError::SizeMismatch {
                id,
                image: (ih, iw),
                mask: (mh, mw),
            });
        }

        let mut planes: Vec<Array2<F>> = Vec::with_capacity(channels);
        if channels == 1 {
            let gray = img.to_luma8();
            planes.push(Array2::from_shape_fn((ih, iw), |(r, c)| {
                F::of(gray.get_pixel(c as u32, r as u32)[0] as f64 / 255.0)
            }));
        } else {
            let rgb = img.to_rgb8();
            for ch in 0..channels.min(3) {
                planes.push(Array2::from_shape_fn((ih, iw), |(r, c)| {
                    F::of(rgb.get_pixel(c as u32, r as u32)[ch] as f64 / 255.0)
                }));
            }
        }
        let mut image_arr = Array3::zeros((planes.len(), input_size.0, input_size.1));
        for (ch, plane) in planes.iter().enumerate() {
            image_arr
                .index_axis_mut(ndarray::Axis(0), ch)
                .assign(&resize_bilinear(plane, input_size));
        }

        let gray_mask = mask_img.to_luma8();
        let mask_native = Array2::from_shape_fn((mh, mw), |(r, c)| {
            if gray_mask.get_pixel(c as u32, r as u32)[0] >= 128 {
                F::one()
            } else {
                F::zero()
            }
        });
        let mask = resize_nearest(&mask_native, input_size);

        out.push(SamplePair { image: image_arr, mask, id });
    }
    Ok(out)
}

/// Manifest written next to a generated benchmark.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub synth: SynthConfig,
    pub train_count: usize,
    pub test_count: usize,
    pub train_digest: String,
    pub test_digest: String,
}

/// Generate and persist a benchmark under `root/{train,test}/{images,masks}`
/// with a `manifest.json` recording the config and content digests.
pub fn write_benchmark<F: Elem>(cfg: &SynthConfig, root: &Path) -> Result<Manifest, DataError> {
    let (train, test) = generate_synthetic::<F>(cfg)?;
    save_dataset(&train, &root.join("train"))?;
    save_dataset(&test, &root.join("test"))?;
    let manifest = Manifest {
        synth: cfg.clone(),
        train_count: train.len(),
        test_count: test.len(),
        train_digest: dataset_digest(&train),
        test_digest: dataset_digest(&test),
    };
    fs::create_dir_all(root)?;
    fs::write(
        root.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            canvas: (48, 48),
            train_count: 4,
            test_count: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let (tr1, te1) = generate_synthetic::<f32>(&cfg).unwrap();
        let (tr2, te2) = generate_synthetic::<f32>(&cfg).unwrap();
        assert_eq!(dataset_digest(&tr1), dataset_digest(&tr2));
        assert_eq!(dataset_digest(&te1), dataset_digest(&te2));
        let different = SynthConfig { seed: 1, ..cfg };
        let (tr3, _) = generate_synthetic::<f32>(&different).unwrap();
        assert_ne!(dataset_digest(&tr1), dataset_digest(&tr3));
    }

    #[test]
    fn ids_are_disjoint_across_splits() {
        let (train, test) = generate_synthetic::<f32>(&small_cfg()).unwrap();
        for t in &train {
            assert!(test.iter().all(|u| u.id != t.id));
        }
    }

    #[test]
    fn neutral_attenuation_hides_shadows_but_keeps_labels() {
        let cfg = SynthConfig {
            attenuation: (1.0, 1.0),
            ..small_cfg()
        };
        let mut saw_mask = false;
        for i in 0..4 {
            let scene = synth_scene(&cfg, sample_seed(cfg.seed, 0, i));
            for &v in scene.illumination.iter() {
                assert!((v - 1.0).abs() < 1e-12);
            }
            saw_mask |= scene.mask.iter().any(|&m| m > 0.0);
        }
        assert!(saw_mask, "labels must decouple from appearance");
    }

    #[test]
    fn identity_shift_leaves_test_images_unshifted() {
        let cfg = SynthConfig {
            shift_gain: 1.0,
            shift_gamma: 1.0,
            ..small_cfg()
        };
        // same per-sample seed stream: the test image equals its unshifted scene
        let scene = synth_scene(&cfg, sample_seed(cfg.seed, 1, 0));
        let (_, test) = generate_synthetic::<f64>(&cfg).unwrap();
        for ((_, r, c), &v) in test[0].image.indexed_iter() {
            assert!((v - scene.image[[r, c]]).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_is_monotone() {
        let vals = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
        let img = Array2::from_shape_vec((1, 7), vals.to_vec()).unwrap();
        let shifted = apply_shift(&img, 1.4, 1.3);
        for i in 1..7 {
            assert!(shifted[[0, i]] >= shifted[[0, i - 1]]);
        }
    }

    #[test]
    fn labeled_pixels_are_attenuated_and_never_distractors() {
        let cfg = small_cfg();
        for i in 0..6 {
            let scene = synth_scene(&cfg, sample_seed(cfg.seed, 0, i));
            if scene.attenuation >= 1.0 {
                continue;
            }
            for ((r, c), &m) in scene.mask.indexed_iter() {
                if m > 0.0 {
                    assert!(
                        scene.illumination[[r, c]] < 1.0,
                        "labeled pixel not attenuated at ({r},{c})"
                    );
                    assert!(
                        !scene.distractor_support[[r, c]],
                        "distractor overlaps label at ({r},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (train, _) = generate_synthetic::<f32>(&small_cfg()).unwrap();
        save_dataset(&train, dir.path()).unwrap();
        let loaded = load_dataset::<f32>(dir.path(), (48, 48), 1).unwrap();
        assert_eq!(loaded.len(), train.len());
        for (a, b) in train.iter().zip(loaded.iter()) {
            for (x, y) in a.image.iter().zip(b.image.iter()) {
                assert!((x - y).abs() <= 1.0 / 255.0 + 1e-6);
            }
            assert_eq!(a.mask, b.mask);
        }
    }

    #[test]
    fn loader_reports_missing_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let (train, _) = generate_synthetic::<f32>(&small_cfg()).unwrap();
        save_dataset(&train, dir.path()).unwrap();
        // orphan image
        std::fs::remove_file(dir.path().join("masks/0001.png")).unwrap();
        match load_dataset::<f32>(dir.path(), (48, 48), 1) {
            Err(DataError::MissingMask(id)) => assert_eq!(id, "0001"),
            other => panic!("expected MissingMask, got {other:?}"),
        }
    }

    #[test]
    fn empty_save_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let empty: Vec<SamplePair<f32>> = Vec::new();
        assert!(matches!(save_dataset(&empty, dir.path()), Err(DataError::Empty)));
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let cfg = SynthConfig {
            attenuation: (0.0, 0.5),
            ..small_cfg()
        };
        assert!(generate_synthetic::<f32>(&cfg).is_err());
        let cfg = SynthConfig {
            shadow_count: (3, 1),
            ..small_cfg()
        };
        assert!(generate_synthetic::<f32>(&cfg).is_err());
    }
}
