//! Invertible view augmentations and canonical-frame alignment.
//!
//! Adaptation compares predictions made on two independently augmented views
//! of the same image. Each view is produced by a [`ViewTransform`] (flip →
//! bilinear resize → crop → bilinear resize to the model input size), and each
//! prediction is mapped back into the original image frame by
//! [`to_canonical`], which inverse-samples the view prediction at every
//! canonical pixel the crop covered. The returned validity masks make the
//! foreground/background intersection regions well-defined.

use ndarray::{Array2, Array3};
use rand::Rng;
use thiserror::Error;

use crate::elem::Elem;
use crate::image_ops::{
    flip_h, resize_bilinear, resize_nearest, sample_bilinear, src_coord, tap_at,
};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Parameters governing [`sample_view_transform`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentConfig {
    /// Probability of a horizontal mirror.
    pub flip_prob: f64,
    /// Isotropic resize factor range `[lo, hi]`, `0 < lo <= hi`.
    pub scale_range: (f64, f64),
    /// Crop window extent (rows, cols) in the scaled image.
    pub crop_size: (usize, usize),
    /// Final view size; the crop is bilinearly resized to this.
    pub output_size: (usize, usize),
    /// Size of the source frame the transform applies to.
    pub canonical_size: (usize, usize),
}

impl AugmentConfig {
    /// Default augmentation for a given frame size: flip 0.5, scale in
    /// [0.8, 1.2], crop 0.75x per axis, views resized back to the frame size.
    pub fn for_canonical(canonical: (usize, usize)) -> Self {
        let crop = |n: usize| ((n as f64) * 0.75).round().max(1.0) as usize;
        AugmentConfig {
            flip_prob: 0.5,
            scale_range: (0.8, 1.2),
            crop_size: (crop(canonical.0), crop(canonical.1)),
            output_size: canonical,
            canonical_size: canonical,
        }
    }

    /// Identity configuration: every sampled transform is the identity map.
    pub fn identity(canonical: (usize, usize)) -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            scale_range: (1.0, 1.0),
            crop_size: canonical,
            output_size: canonical,
            canonical_size: canonical,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(GeometryError::InvalidConfig(format!(
                "scale range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(GeometryError::InvalidConfig(format!(
                "flip_prob must lie in [0,1], got {}",
                self.flip_prob
            )));
        }
        if self.crop_size.0 == 0
            || self.crop_size.1 == 0
            || self.output_size.0 == 0
            || self.output_size.1 == 0
            || self.canonical_size.0 == 0
            || self.canonical_size.1 == 0
        {
            return Err(GeometryError::InvalidConfig(
                "all sizes must be positive".into(),
            ));
        }
        let min_scaled = scaled_extent(self.canonical_size, lo);
        if self.crop_size.0 > min_scaled.0 || self.crop_size.1 > min_scaled.1 {
            return Err(GeometryError::InvalidConfig(format!(
                "crop {:?} exceeds the smallest scaled image {:?} (scale {lo})",
                self.crop_size, min_scaled
            )));
        }
        Ok(())
    }
}

fn scaled_extent(canonical: (usize, usize), scale: f64) -> (usize, usize) {
    (
        ((canonical.0 as f64 * scale).floor() as usize).max(1),
        ((canonical.1 as f64 * scale).floor() as usize).max(1),
    )
}

/// One sampled augmentation, recorded exactly so it can be inverted.
///
/// Value pipeline: horizontal flip → bilinear resize by `scale` → crop of
/// `crop_size` at `crop_origin` → bilinear resize to `output_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewTransform {
    pub flip: bool,
    pub scale: f64,
    /// (row, col) offset of the crop window in the scaled image.
    pub crop_origin: (usize, usize),
    pub crop_size: (usize, usize),
    pub output_size: (usize, usize),
    pub canonical_size: (usize, usize),
}

impl ViewTransform {
    pub fn identity(canonical: (usize, usize)) -> Self {
        ViewTransform {
            flip: false,
            scale: 1.0,
            crop_origin: (0, 0),
            crop_size: canonical,
            output_size: canonical,
            canonical_size: canonical,
        }
    }

    pub fn scaled_size(&self) -> (usize, usize) {
        scaled_extent(self.canonical_size, self.scale)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let sc = self.scaled_size();
        if self.scale <= 0.0 {
            return Err(GeometryError::InvalidConfig("scale must be positive".into()));
        }
        if self.crop_size.0 == 0 || self.crop_size.1 == 0 {
            return Err(GeometryError::InvalidConfig("crop must be positive".into()));
        }
        if self.crop_origin.0 + self.crop_size.0 > sc.0
            || self.crop_origin.1 + self.crop_size.1 > sc.1
        {
            return Err(GeometryError::InvalidConfig(format!(
                "crop window {:?}+{:?} exceeds scaled size {:?}",
                self.crop_origin, self.crop_size, sc
            )));
        }
        Ok(())
    }

    /// Map a canonical (row, col) position to view-output coordinates.
    pub fn map_canonical_to_view(&self, row: f64, col: f64) -> (f64, f64) {
        let sc = self.scaled_size();
        let col_f = if self.flip {
            (self.canonical_size.1 - 1) as f64 - col
        } else {
            col
        };
        let axis = |x: f64, can: usize, scd: usize, origin: usize, crop: usize, out: usize| {
            let x_sc = (x + 0.5) * (scd as f64 / can as f64) - 0.5;
            let x_cr = x_sc - origin as f64;
            (x_cr + 0.5) * (out as f64 / crop as f64) - 0.5
        };
        (
            axis(
                row,
                self.canonical_size.0,
                sc.0,
                self.crop_origin.0,
                self.crop_size.0,
                self.output_size.0,
            ),
            axis(
                col_f,
                self.canonical_size.1,
                sc.1,
                self.crop_origin.1,
                self.crop_size.1,
                self.output_size.1,
            ),
        )
    }

    /// Exact inverse of [`Self::map_canonical_to_view`].
    pub fn map_view_to_canonical(&self, row: f64, col: f64) -> (f64, f64) {
        let sc = self.scaled_size();
        let axis = |x: f64, can: usize, scd: usize, origin: usize, crop: usize, out: usize| {
            let x_cr = (x + 0.5) * (crop as f64 / out as f64) - 0.5;
            let x_sc = x_cr + origin as f64;
            (x_sc + 0.5) * (can as f64 / scd as f64) - 0.5
        };
        let r = axis(
            row,
            self.canonical_size.0,
            sc.0,
            self.crop_origin.0,
            self.crop_size.0,
            self.output_size.0,
        );
        let mut c = axis(
            col,
            self.canonical_size.1,
            sc.1,
            self.crop_origin.1,
            self.crop_size.1,
            self.output_size.1,
        );
        if self.flip {
            c = (self.canonical_size.1 - 1) as f64 - c;
        }
        (r, c)
    }

    /// Per-axis validity: whether each canonical row/column center falls
    /// inside the crop window. The joint validity is their outer product,
    /// which is an axis-aligned rectangle.
    fn axis_validity(&self) -> (Vec<bool>, Vec<bool>) {
        let sc = self.scaled_size();
        let inside = |x: f64, origin: usize, crop: usize| {
            let lo = origin as f64 - 0.5;
            x >= lo && x < lo + crop as f64
        };
        let rows = (0..self.canonical_size.0)
            .map(|r| {
                let x_sc = src_coord(r as f64, sc.0, self.canonical_size.0);
                inside(x_sc, self.crop_origin.0, self.crop_size.0)
            })
            .collect();
        let cols = (0..self.canonical_size.1)
            .map(|c| {
                let cf = if self.flip {
                    (self.canonical_size.1 - 1 - c) as f64
                } else {
                    c as f64
                };
                let x_sc = src_coord(cf, sc.1, self.canonical_size.1);
                inside(x_sc, self.crop_origin.1, self.crop_size.1)
            })
            .collect();
        (rows, cols)
    }
}

/// A view prediction mapped back into the canonical frame.
#[derive(Clone, Debug)]
pub struct CanonicalPrediction<F: Elem> {
    /// Values in the canonical frame; 0 at invalid pixels.
    pub values: Array2<F>,
    /// True exactly where the view's crop covered the canonical pixel.
    pub validity: Array2<bool>,
}

/// Draw a random transform. Draw order is fixed (flip, scale, row origin,
/// col origin) so equal seeds give equal transforms.
pub fn sample_view_transform<R: Rng>(
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<ViewTransform, GeometryError> {
    cfg.validate()?;
    let flip = rng.gen::<f64>() < cfg.flip_prob;
    let (lo, hi) = cfg.scale_range;
    let scale = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let scaled = scaled_extent(cfg.canonical_size, scale);
    let max_r = scaled.0 - cfg.crop_size.0;
    let max_c = scaled.1 - cfg.crop_size.1;
    let origin_r = if max_r == 0 { 0 } else { rng.gen_range(0..=max_r) };
    let origin_c = if max_c == 0 { 0 } else { rng.gen_range(0..=max_c) };
    let t = ViewTransform {
        flip,
        scale,
        crop_origin: (origin_r, origin_c),
        crop_size: cfg.crop_size,
        output_size: cfg.output_size,
        canonical_size: cfg.canonical_size,
    };
    t.validate()?;
    Ok(t)
}

fn check_plane_shape(
    what: &'static str,
    got: (usize, usize),
    expected: (usize, usize),
) -> Result<(), GeometryError> {
    if got != expected {
        return Err(GeometryError::ShapeMismatch { what, expected, got });
    }
    Ok(())
}

/// Apply the transform to a single plane with bilinear resampling.
pub fn apply_transform_plane<F: Elem>(
    plane: &Array2<F>,
    t: &ViewTransform,
) -> Result<Array2<F>, GeometryError> {
    check_plane_shape("apply_transform input", plane.dim(), t.canonical_size)?;
    t.validate()?;
    let flipped = if t.flip { flip_h(plane) } else { plane.clone() };
    let scaled = resize_bilinear(&flipped, t.scaled_size());
    let crop = scaled
        .slice(ndarray::s![
            t.crop_origin.0..t.crop_origin.0 + t.crop_size.0,
            t.crop_origin.1..t.crop_origin.1 + t.crop_size.1
        ])
        .to_owned();
    Ok(resize_bilinear(&crop, t.output_size))
}

/// Apply the transform to a (C, H, W) image, channel by channel.
pub fn apply_transform<F: Elem>(
    img: &Array3<F>,
    t: &ViewTransform,
) -> Result<Array3<F>, GeometryError> {
    let (ch, h, w) = img.dim();
    check_plane_shape("apply_transform input", (h, w), t.canonical_size)?;
    let mut out = Array3::zeros((ch, t.output_size.0, t.output_size.1));
    for c in 0..ch {
        let plane = apply_transform_plane(&img.index_axis(ndarray::Axis(0), c).to_owned(), t)?;
        out.index_axis_mut(ndarray::Axis(0), c).assign(&plane);
    }
    Ok(out)
}

/// Mask variant: nearest-neighbor resampling so {0,1} labels stay binary.
pub fn apply_transform_mask<F: Elem>(
    mask: &Array2<F>,
    t: &ViewTransform,
) -> Result<Array2<F>, GeometryError> {
    check_plane_shape("apply_transform_mask input", mask.dim(), t.canonical_size)?;
    t.validate()?;
    let flipped = if t.flip { flip_h(mask) } else { mask.clone() };
    let scaled = resize_nearest(&flipped, t.scaled_size());
    let crop = scaled
        .slice(ndarray::s![
            t.crop_origin.0..t.crop_origin.0 + t.crop_size.0,
            t.crop_origin.1..t.crop_origin.1 + t.crop_size.1
        ])
        .to_owned();
    Ok(resize_nearest(&crop, t.output_size))
}

/// Map a view prediction back to the canonical frame.
///
/// Every covered canonical pixel bilinearly samples the prediction at its
/// image under the forward coordinate map, so the operation is linear in
/// `pred` and [`to_canonical_backward`] is its exact transpose.
pub fn to_canonical<F: Elem>(
    pred: &Array2<F>,
    t: &ViewTransform,
) -> Result<CanonicalPrediction<F>, GeometryError> {
    check_plane_shape("to_canonical prediction", pred.dim(), t.output_size)?;
    t.validate()?;
    let (hc, wc) = t.canonical_size;
    let (row_ok, col_ok) = t.axis_validity();
    let mut values = Array2::zeros((hc, wc));
    let mut validity = Array2::from_elem((hc, wc), false);
    for r in 0..hc {
        if !row_ok[r] {
            continue;
        }
        for c in 0..wc {
            if !col_ok[c] {
                continue;
            }
            let (vr, vc) = t.map_canonical_to_view(r as f64, c as f64);
            values[[r, c]] = sample_bilinear(pred, vr, vc);
            validity[[r, c]] = true;
        }
    }
    Ok(CanonicalPrediction { values, validity })
}

/// Transpose of [`to_canonical`]: scatter canonical-frame gradients back into
/// the view frame. Entries of `grad_canonical` at invalid pixels are ignored.
pub fn to_canonical_backward<F: Elem>(
    grad_canonical: &Array2<F>,
    t: &ViewTransform,
) -> Result<Array2<F>, GeometryError> {
    check_plane_shape(
        "to_canonical_backward gradient",
        grad_canonical.dim(),
        t.canonical_size,
    )?;
    t.validate()?;
    let (row_ok, col_ok) = t.axis_validity();
    let (oh, ow) = t.output_size;
    let mut grad_pred = Array2::zeros((oh, ow));
    for r in 0..t.canonical_size.0 {
        if !row_ok[r] {
            continue;
        }
        for c in 0..t.canonical_size.1 {
            if !col_ok[c] {
                continue;
            }
            let g = grad_canonical[[r, c]].to_f64();
            if g == 0.0 {
                continue;
            }
            let (vr, vc) = t.map_canonical_to_view(r as f64, c as f64);
            let tr = tap_at(vr, oh);
            let tc = tap_at(vc, ow);
            let wr = [1.0 - tr.frac, tr.frac];
            let wc = [1.0 - tc.frac, tc.frac];
            let rows = [tr.lo, tr.hi];
            let cols = [tc.lo, tc.hi];
            for (ri, &rr) in rows.iter().enumerate() {
                for (ci, &cc) in cols.iter().enumerate() {
                    let w = wr[ri] * wc[ci];
                    if w != 0.0 {
                        grad_pred[[rr, cc]] = grad_pred[[rr, cc]] + F::of(g * w);
                    }
                }
            }
        }
    }
    Ok(grad_pred)
}

/// Foreground / background intersection masks of two canonical predictions.
///
/// A pixel is foreground iff both views cover it and both predict at least
/// `threshold`; background iff both cover it and both predict below it. The
/// masks are disjoint by construction and binarization carries no gradient.
pub fn intersection_masks<F: Elem>(
    a: &CanonicalPrediction<F>,
    b: &CanonicalPrediction<F>,
    threshold: F,
) -> Result<(Array2<bool>, Array2<bool>), GeometryError> {
    check_plane_shape("intersection_masks", b.values.dim(), a.values.dim())?;
    let dim = a.values.dim();
    let mut fg = Array2::from_elem(dim, false);
    let mut bg = Array2::from_elem(dim, false);
    for r in 0..dim.0 {
        for c in 0..dim.1 {
            if a.validity[[r, c]] && b.validity[[r, c]] {
                let pa = a.values[[r, c]] >= threshold;
                let pb = b.values[[r, c]] >= threshold;
                if pa && pb {
                    fg[[r, c]] = true;
                } else if !pa && !pb {
                    bg[[r, c]] = true;
                }
            }
        }
    }
    Ok((fg, bg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn degenerate_config_forces_identity() {
        let cfg = AugmentConfig::identity((40, 40));
        let t = sample_view_transform(&mut rng(0), &cfg).unwrap();
        assert_eq!(t, ViewTransform::identity((40, 40)));
    }

    #[test]
    fn flip_prob_one_always_flips() {
        let mut cfg = AugmentConfig::identity((32, 32));
        cfg.flip_prob = 1.0;
        for seed in 0..20 {
            let t = sample_view_transform(&mut rng(seed), &cfg).unwrap();
            assert!(t.flip);
        }
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let cfg = AugmentConfig::for_canonical((400, 400));
        let a = sample_view_transform(&mut rng(42), &cfg).unwrap();
        let b = sample_view_transform(&mut rng(42), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_crop_is_rejected() {
        let mut cfg = AugmentConfig::for_canonical((64, 64));
        cfg.crop_size = (64, 64);
        cfg.scale_range = (0.8, 1.2); // smallest scaled image is 51x51
        assert!(sample_view_transform(&mut rng(0), &cfg).is_err());
    }

    #[test]
    fn identity_transform_copies_bit_exactly() {
        let t = ViewTransform::identity((17, 23));
        let img = Array2::from_shape_fn((17, 23), |(r, c)| ((r * 31 + c) % 7) as f32 / 7.0);
        let out = apply_transform_plane(&img, &t).unwrap();
        assert_eq!(img, out);
        let canon = to_canonical(&out, &t).unwrap();
        assert_eq!(canon.values, img);
        assert!(canon.validity.iter().all(|&v| v));
    }

    #[test]
    fn flip_only_transform_is_involution_and_maps_back() {
        let mut t = ViewTransform::identity((12, 18));
        t.flip = true;
        let img = Array2::from_shape_fn((12, 18), |(r, c)| r as f64 * 0.05 + c as f64 * 0.01);
        let once = apply_transform_plane(&img, &t).unwrap();
        let twice = apply_transform_plane(&once, &t).unwrap();
        assert_eq!(img, twice);
        let canon = to_canonical(&once, &t).unwrap();
        assert_eq!(canon.values, img);
        assert!(canon.validity.iter().all(|&v| v));
    }

    #[test]
    fn downscale_preserves_constant() {
        let mut t = ViewTransform::identity((40, 40));
        t.scale = 0.5;
        t.crop_size = (20, 20);
        t.output_size = (20, 20);
        let img = Array2::from_elem((40, 40), 0.42f64);
        let out = apply_transform_plane(&img, &t).unwrap();
        assert_eq!(out.dim(), (20, 20));
        for &v in out.iter() {
            assert!((v - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn upper_left_crop_validity_rectangle() {
        let t = ViewTransform {
            flip: false,
            scale: 1.0,
            crop_origin: (0, 0),
            crop_size: (200, 200),
            output_size: (200, 200),
            canonical_size: (400, 400),
        };
        let pred = Array2::from_elem((200, 200), 0.5f32);
        let canon = to_canonical(&pred, &t).unwrap();
        for r in 0..400 {
            for c in 0..400 {
                assert_eq!(canon.validity[[r, c]], r < 200 && c < 200);
            }
        }
    }

    #[test]
    fn round_trip_coordinates_are_exact_inside_coverage() {
        let cfg = AugmentConfig::for_canonical((100, 80));
        for seed in 0..50 {
            let t = sample_view_transform(&mut rng(seed), &cfg).unwrap();
            for &(r, c) in &[(30.0, 30.0), (50.5, 20.25), (70.0, 60.0)] {
                let (vr, vc) = t.map_canonical_to_view(r, c);
                let (br, bc) = t.map_view_to_canonical(vr, vc);
                assert!((br - r).abs() < 0.5 && (bc - c).abs() < 0.5);
            }
        }
    }

    #[test]
    fn to_canonical_is_linear() {
        let cfg = AugmentConfig::for_canonical((48, 48));
        let t = sample_view_transform(&mut rng(7), &cfg).unwrap();
        let mut r = rng(8);
        use rand::Rng;
        let p = Array2::from_shape_fn(t.output_size, |_| r.gen::<f64>());
        let q = Array2::from_shape_fn(t.output_size, |_| r.gen::<f64>());
        let (alpha, beta) = (0.3, 1.7);
        let mixed = to_canonical(&(alpha * &p + beta * &q), &t).unwrap();
        let a = to_canonical(&p, &t).unwrap();
        let b = to_canonical(&q, &t).unwrap();
        let recon = alpha * &a.values + beta * &b.values;
        for (x, y) in mixed.values.iter().zip(recon.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_is_transpose_of_to_canonical() {
        use rand::Rng;
        let cfg = AugmentConfig::for_canonical((40, 40));
        let t = sample_view_transform(&mut rng(3), &cfg).unwrap();
        let mut r = rng(4);
        let pred = Array2::from_shape_fn(t.output_size, |_| r.gen::<f64>());
        let gout = Array2::from_shape_fn(t.canonical_size, |_| r.gen::<f64>());
        let fwd = to_canonical(&pred, &t).unwrap();
        // mask the canonical-side vector to validity, as losses do
        let mut gmask = gout.clone();
        for ((rr, cc), g) in gmask.indexed_iter_mut() {
            if !fwd.validity[[rr, cc]] {
                *g = 0.0;
            }
        }
        let bwd = to_canonical_backward(&gmask, &t).unwrap();
        let lhs: f64 = (&fwd.values * &gmask).sum();
        let rhs: f64 = (&pred * &bwd).sum();
        assert!((lhs - rhs).abs() < 1e-9, "lhs={lhs} rhs={rhs}");
    }

    #[test]
    fn intersection_masks_basic_cases() {
        let full = |v: f32| CanonicalPrediction {
            values: Array2::from_elem((8, 8), v),
            validity: Array2::from_elem((8, 8), true),
        };
        let (fg, bg) = intersection_masks(&full(0.9), &full(0.8), 0.5).unwrap();
        assert!(fg.iter().all(|&m| m) && bg.iter().all(|&m| !m));

        let (fg, bg) = intersection_masks(&full(0.9), &full(0.1), 0.5).unwrap();
        assert!(fg.iter().all(|&m| !m) && bg.iter().all(|&m| !m));
    }

    #[test]
    fn half_overlapping_validity_intersects_on_rectangle() {
        let make = |col0: usize| {
            let mut validity = Array2::from_elem((8, 8), false);
            for r in 0..8 {
                for c in col0..(col0 + 4) {
                    validity[[r, c]] = true;
                }
            }
            let mut values = Array2::zeros((8, 8));
            for ((r, c), v) in values.indexed_iter_mut() {
                if validity[[r, c]] {
                    *v = 0.9f32;
                }
            }
            CanonicalPrediction { values, validity }
        };
        let a = make(0);
        let b = make(2);
        let (fg, bg) = intersection_masks(&a, &b, 0.5).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(fg[[r, c]], (2..4).contains(&c), "r={r} c={c}");
                assert!(!bg[[r, c]]);
            }
        }
    }
}
