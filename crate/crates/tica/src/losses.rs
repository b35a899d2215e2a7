//! Differentiable loss kernels.
//!
//! Supervised training uses a class-balanced binary cross-entropy ([`bbce`]);
//! adaptation uses per-pixel Bernoulli KL consistency between two views,
//! restricted to the foreground/background intersection regions ([`fc_loss`],
//! [`bc_loss`], [`tica_loss`]), and the entropy objective of the TENT/ETA
//! baselines ([`entropy_loss`]).
//!
//! All logs are clamped at `EPS = 1e-7`; where a clamp is active the
//! corresponding gradient entry is zero, so every loss stays finite and the
//! analytic gradients match finite differences of the clamped function.

use ndarray::Array2;
use thiserror::Error;

use crate::elem::Elem;
use crate::geometry::{intersection_masks, CanonicalPrediction};

/// Log clamp applied to every probability before it reaches a logarithm.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("ground truth contains non-binary value {0}")]
    NonBinaryTarget(f64),
    #[error("loss input must contain at least one pixel")]
    EmptyInput,
}

/// Weighting mode for [`bbce`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BbceMode {
    /// Positive term weighted by `N_n / (N_p + N_n)` (and vice versa), so the
    /// minority class is up-weighted.
    #[default]
    InverseFrequency,
    /// Positive term weighted by `N_p / (N_p + N_n)`.
    Literal,
}

/// Direction of the per-pixel KL used by the consistency losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// `0.5 * (KL(y1 || y2) + KL(y2 || y1))`; neither view is privileged.
    #[default]
    Sym,
    Fwd,
    Rev,
}

/// Weights of the foreground and background consistency terms.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_fg: f64,
    pub lambda_bg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_fg: 0.5, lambda_bg: 1.0 }
    }
}

/// A loss over a single prediction.
#[derive(Clone, Debug)]
pub struct LossValue<F: Elem> {
    pub value: F,
    pub grad: Array2<F>,
    pub pixel_count: usize,
}

/// A loss over a pair of predictions; gradients flow into both.
#[derive(Clone, Debug)]
pub struct PairLossValue<F: Elem> {
    pub value: F,
    pub grad_y1: Array2<F>,
    pub grad_y2: Array2<F>,
    pub pixel_count: usize,
}

/// Combined consistency loss with its per-term breakdown.
#[derive(Clone, Debug)]
pub struct TicaLossValue<F: Elem> {
    pub value: F,
    pub grad_y1: Array2<F>,
    pub grad_y2: Array2<F>,
    pub fg_value: F,
    pub bg_value: F,
    pub fg_pixels: usize,
    pub bg_pixels: usize,
}

#[inline]
fn clamp01(x: f64) -> f64 {
    x.max(EPS).min(1.0 - EPS)
}

#[inline]
fn interior(x: f64) -> bool {
    x > EPS && x < 1.0 - EPS
}

fn check_shapes(
    what: &'static str,
    got: (usize, usize),
    expected: (usize, usize),
) -> Result<(), LossError> {
    if got != expected {
        return Err(LossError::ShapeMismatch { what, expected, got });
    }
    Ok(())
}

/// Two-class Bernoulli KL divergence `KL(p || q)`, clamped.
pub fn bernoulli_kl<F: Elem>(p: F, q: F) -> F {
    let p = clamp01(p.to_f64());
    let q = clamp01(q.to_f64());
    F::of(p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln())
}

/// KL(p || q) with partial derivatives in the clamped variables. A clamped
/// input contributes zero gradient.
fn kl_with_grads(p_raw: f64, q_raw: f64) -> (f64, f64, f64) {
    let p = clamp01(p_raw);
    let q = clamp01(q_raw);
    let v = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    let dp = if interior(p_raw) {
        (p / q).ln() - ((1.0 - p) / (1.0 - q)).ln()
    } else {
        0.0
    };
    let dq = if interior(q_raw) {
        -p / q + (1.0 - p) / (1.0 - q)
    } else {
        0.0
    };
    (v, dp, dq)
}

/// Per-pixel divergence of the selected mode with gradients for both inputs.
fn pixel_divergence(mode: KlMode, a: f64, b: f64) -> (f64, f64, f64) {
    match mode {
        KlMode::Fwd => kl_with_grads(a, b),
        KlMode::Rev => {
            let (v, db, da) = kl_with_grads(b, a);
            (v, da, db)
        }
        KlMode::Sym => {
            let (vf, daf, dbf) = kl_with_grads(a, b);
            let (vr, dbr, dar) = kl_with_grads(b, a);
            (0.5 * (vf + vr), 0.5 * (daf + dar), 0.5 * (dbf + dbr))
        }
    }
}

/// Mean divergence between two canonical predictions over a region mask.
///
/// The mask must be a subset of the joint validity region; an empty mask
/// yields zero loss and zero gradients.
pub fn consistency_loss<F: Elem>(
    y1: &CanonicalPrediction<F>,
    y2: &CanonicalPrediction<F>,
    mask: &Array2<bool>,
    mode: KlMode,
) -> Result<PairLossValue<F>, LossError> {
    let dim = y1.values.dim();
    check_shapes("consistency_loss y2", y2.values.dim(), dim)?;
    check_shapes("consistency_loss mask", mask.dim(), dim)?;
    debug_assert!(mask
        .indexed_iter()
        .all(|((r, c), &m)| !m || (y1.validity[[r, c]] && y2.validity[[r, c]])));

    let count = mask.iter().filter(|&&m| m).count();
    let mut grad_y1 = Array2::zeros(dim);
    let mut grad_y2 = Array2::zeros(dim);
    if count == 0 {
        return Ok(PairLossValue {
            value: F::zero(),
            grad_y1,
            grad_y2,
            pixel_count: 0,
        });
    }
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    for ((r, c), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        let a = y1.values[[r, c]].to_f64();
        let b = y2.values[[r, c]].to_f64();
        let (v, da, db) = pixel_divergence(mode, a, b);
        total += v;
        grad_y1[[r, c]] = F::of(da * inv);
        grad_y2[[r, c]] = F::of(db * inv);
    }
    Ok(PairLossValue {
        value: F::of(total * inv),
        grad_y1,
        grad_y2,
        pixel_count: count,
    })
}

/// Foreground consistency: mean symmetric KL over the foreground mask.
pub fn fc_loss<F: Elem>(
    y1: &CanonicalPrediction<F>,
    y2: &CanonicalPrediction<F>,
    fg_mask: &Array2<bool>,
) -> Result<PairLossValue<F>, LossError> {
    consistency_loss(y1, y2, fg_mask, KlMode::Sym)
}

/// Background consistency: [`fc_loss`] applied to the complements `1 - y`
/// over the background mask. Gradients pick up the complement sign.
pub fn bc_loss<F: Elem>(
    y1: &CanonicalPrediction<F>,
    y2: &CanonicalPrediction<F>,
    bg_mask: &Array2<bool>,
) -> Result<PairLossValue<F>, LossError> {
    bc_loss_with_mode(y1, y2, bg_mask, KlMode::Sym)
}

fn complement<F: Elem>(p: &CanonicalPrediction<F>) -> CanonicalPrediction<F> {
    let mut values = p.values.mapv(|v| F::one() - v);
    // invalid pixels stay defined as zero
    for ((r, c), v) in values.indexed_iter_mut() {
        if !p.validity[[r, c]] {
            *v = F::zero();
        }
    }
    CanonicalPrediction { values, validity: p.validity.clone() }
}

fn bc_loss_with_mode<F: Elem>(
    y1: &CanonicalPrediction<F>,
    y2: &CanonicalPrediction<F>,
    bg_mask: &Array2<bool>,
    mode: KlMode,
) -> Result<PairLossValue<F>, LossError> {
    let mut out = consistency_loss(&complement(y1), &complement(y2), bg_mask, mode)?;
    out.grad_y1.mapv_inplace(|g| -g);
    out.grad_y2.mapv_inplace(|g| -g);
    Ok(out)
}

/// Combined dual-region consistency loss:
/// `lambda_fg * fc + lambda_bg * bc` over the intersection masks binarized at
/// `threshold`. Region selection carries no gradient.
pub fn tica_loss<F: Elem>(
    y1: &CanonicalPrediction<F>,
    y2: &CanonicalPrediction<F>,
    w: &LossWeights,
    threshold: F,
) -> Result<TicaLossValue<F>, LossError> {
    tica_loss_with_mode(y1, y2, w, threshold, KlMode::Sym)
}

pub fn tica_loss_with_mode<F: Elem>(
    y1: &CanonicalPrediction<F>,
    y2: &CanonicalPrediction<F>,
    w: &LossWeights,
    threshold: F,
    mode: KlMode,
) -> Result<TicaLossValue<F>, LossError> {
    let dim = y1.values.dim();
    check_shapes("tica_loss y2", y2.values.dim(), dim)?;
    let (fg_mask, bg_mask) =
        intersection_masks(y1, y2, threshold).map_err(|_| LossError::ShapeMismatch {
            what: "tica_loss intersection",
            expected: dim,
            got: y2.values.dim(),
        })?;
    let fg = consistency_loss(y1, y2, &fg_mask, mode)?;
    let bg = bc_loss_with_mode(y1, y2, &bg_mask, mode)?;
    let lf = F::of(w.lambda_fg);
    let lb = F::of(w.lambda_bg);
    let grad_y1 = fg.grad_y1.mapv(|g| g * lf) + bg.grad_y1.mapv(|g| g * lb);
    let grad_y2 = fg.grad_y2.mapv(|g| g * lf) + bg.grad_y2.mapv(|g| g * lb);
    Ok(TicaLossValue {
        value: lf * fg.value + lb * bg.value,
        grad_y1,
        grad_y2,
        fg_value: fg.value,
        bg_value: bg.value,
        fg_pixels: fg.pixel_count,
        bg_pixels: bg.pixel_count,
    })
}

/// Class-balanced binary cross-entropy, summed over pixels.
///
/// With `N_p` shadow and `N_n` non-shadow pixels, the default
/// inverse-frequency mode weights the positive term by `N_n/(N_p+N_n)` and
/// the negative term by `N_p/(N_p+N_n)`; [`BbceMode::Literal`] swaps the
/// numerators.
pub fn bbce<F: Elem>(
    pred: &Array2<F>,
    gt: &Array2<F>,
    mode: BbceMode,
) -> Result<LossValue<F>, LossError> {
    check_shapes("bbce ground truth", gt.dim(), pred.dim())?;
    let n = pred.len();
    if n == 0 {
        return Err(LossError::EmptyInput);
    }
    let mut n_p = 0usize;
    for &y in gt.iter() {
        let y = y.to_f64();
        if y == 1.0 {
            n_p += 1;
        } else if y != 0.0 {
            return Err(LossError::NonBinaryTarget(y));
        }
    }
    let n_n = n - n_p;
    let (w_p, w_n) = match mode {
        BbceMode::InverseFrequency => (n_n as f64 / n as f64, n_p as f64 / n as f64),
        BbceMode::Literal => (n_p as f64 / n as f64, n_n as f64 / n as f64),
    };
    let mut total = 0.0;
    let mut grad = Array2::zeros(pred.dim());
    for ((r, c), &p_raw) in pred.indexed_iter() {
        let p_raw = p_raw.to_f64();
        let p = clamp01(p_raw);
        let positive = gt[[r, c]].to_f64() == 1.0;
        if positive {
            total += w_p * -p.ln();
            if interior(p_raw) {
                grad[[r, c]] = F::of(-w_p / p);
            }
        } else {
            total += w_n * -(1.0 - p).ln();
            if interior(p_raw) {
                grad[[r, c]] = F::of(w_n / (1.0 - p));
            }
        }
    }
    Ok(LossValue { value: F::of(total), grad, pixel_count: n })
}

/// Mean per-pixel binary entropy of a prediction map.
pub fn entropy_loss<F: Elem>(pred: &Array2<F>) -> Result<LossValue<F>, LossError> {
    let n = pred.len();
    if n == 0 {
        return Err(LossError::EmptyInput);
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(pred.dim());
    for ((r, c), &p_raw) in pred.indexed_iter() {
        let p_raw = p_raw.to_f64();
        let p = clamp01(p_raw);
        total += -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        if interior(p_raw) {
            grad[[r, c]] = F::of(((1.0 - p) / p).ln() * inv);
        }
    }
    Ok(LossValue { value: F::of(total * inv), grad, pixel_count: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn full<F: Elem>(dim: (usize, usize), v: f64) -> CanonicalPrediction<F> {
        CanonicalPrediction {
            values: Array2::from_elem(dim, F::of(v)),
            validity: Array2::from_elem(dim, true),
        }
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        assert_eq!(bernoulli_kl(0.3f64, 0.3f64), 0.0);
    }

    #[test]
    fn kl_scalar_values_match_hand_evaluation() {
        assert!((bernoulli_kl(0.9f64, 0.5) - 0.36806420716849714).abs() < 1e-12);
        assert!((bernoulli_kl(0.5f64, 0.9) - 0.5108256237659907).abs() < 1e-12);
        // asymmetry
        assert!(bernoulli_kl(0.9f64, 0.5) != bernoulli_kl(0.5f64, 0.9));
    }

    #[test]
    fn sym_kl_is_exactly_symmetric() {
        for &(a, b) in &[(0.9, 0.5), (0.2, 0.7), (0.01, 0.99)] {
            let ab = pixel_divergence(KlMode::Sym, a, b).0;
            let ba = pixel_divergence(KlMode::Sym, b, a).0;
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn fc_single_pixel_value() {
        let y1 = full::<f64>((1, 1), 0.9);
        let y2 = full::<f64>((1, 1), 0.5);
        let mask = Array2::from_elem((1, 1), true);
        let l = fc_loss(&y1, &y2, &mask).unwrap();
        assert!((l.value - 0.43944491546724396).abs() < 1e-12);
        assert_eq!(l.pixel_count, 1);
    }

    #[test]
    fn fc_zero_when_views_agree_and_on_empty_mask() {
        let y1 = full::<f64>((4, 4), 0.42);
        let l = fc_loss(&y1, &y1.clone(), &Array2::from_elem((4, 4), true)).unwrap();
        assert_eq!(l.value, 0.0);

        let empty = Array2::from_elem((4, 4), false);
        let l = fc_loss(&y1, &full((4, 4), 0.9), &empty).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.pixel_count, 0);
        assert!(l.grad_y1.iter().all(|&g| g == 0.0));
        assert!(l.grad_y2.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bc_equals_fc_on_complements() {
        let y1 = full::<f64>((3, 3), 0.1);
        let y2 = full::<f64>((3, 3), 0.5);
        let mask = Array2::from_elem((3, 3), true);
        let bc = bc_loss(&y1, &y2, &mask).unwrap();
        // definitional identity, bit-exact
        let c1 = super::complement(&y1);
        let c2 = super::complement(&y2);
        let fc_of_comp = fc_loss(&c1, &c2, &mask).unwrap();
        assert_eq!(bc.value, fc_of_comp.value);
        // sym-KL of complements equals sym-KL of originals (up to clamping)
        let fc_direct = fc_loss(&y1, &y2, &mask).unwrap();
        assert!((bc.value - fc_direct.value).abs() < 1e-12);
        // complement of the single-pixel fc example
        assert!((bc.value - 0.43944491546724396).abs() < 1e-12);
    }

    #[test]
    fn tica_combination_and_degenerate_weights() {
        let y1 = full::<f64>((4, 4), 0.9);
        let y2 = full::<f64>((4, 4), 0.8);
        let w = LossWeights { lambda_fg: 0.5, lambda_bg: 1.0 };
        let l = tica_loss(&y1, &y2, &w, 0.5).unwrap();
        // all pixels are foreground; bg region is empty
        assert_eq!(l.fg_pixels, 16);
        assert_eq!(l.bg_pixels, 0);
        assert!((l.fg_value - 0.040546510810816457).abs() < 1e-12);
        assert!((l.value - 0.020273255405408228).abs() < 1e-12);

        let zero = LossWeights { lambda_fg: 0.0, lambda_bg: 0.0 };
        let l = tica_loss(&y1, &y2, &zero, 0.5).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad_y1.iter().all(|&g| g == 0.0));

        let same = tica_loss(&y1, &y1.clone(), &w, 0.5).unwrap();
        assert_eq!(same.value, 0.0);
    }

    #[test]
    fn tica_is_linear_in_weights() {
        // top half is a background block, bottom half foreground, so both
        // terms are active
        let mut y1b = full::<f64>((4, 4), 0.7);
        let mut y2 = full::<f64>((4, 4), 0.6);
        for r in 0..2 {
            for c in 0..4 {
                y1b.values[[r, c]] = 0.3;
                y2.values[[r, c]] = 0.2;
            }
        }
        let base = tica_loss(&y1b, &y2, &LossWeights { lambda_fg: 1.0, lambda_bg: 0.0 }, 0.5)
            .unwrap()
            .value;
        let bg = tica_loss(&y1b, &y2, &LossWeights { lambda_fg: 0.0, lambda_bg: 1.0 }, 0.5)
            .unwrap()
            .value;
        let mixed = tica_loss(&y1b, &y2, &LossWeights { lambda_fg: 0.3, lambda_bg: 1.7 }, 0.5)
            .unwrap()
            .value;
        assert!((mixed - (0.3 * base + 1.7 * bg)).abs() < 1e-12);
    }

    #[test]
    fn bbce_closed_forms() {
        // pred == gt exactly: essentially zero after clamping
        let gt = Array2::from_shape_fn((4, 4), |(r, _)| if r < 2 { 1.0f64 } else { 0.0 });
        let l = bbce(&gt.clone(), &gt, BbceMode::InverseFrequency).unwrap();
        assert!(l.value >= 0.0 && l.value < 16.0 * (1.0 - EPS).ln().abs() + 1e-9);

        // pred = 0.5 with N_p = N_n = K: value = K ln 2 in either mode
        let k = 8.0;
        let pred = Array2::from_elem((4, 4), 0.5f64);
        for mode in [BbceMode::InverseFrequency, BbceMode::Literal] {
            let l = bbce(&pred, &gt, mode).unwrap();
            assert!((l.value - k * std::f64::consts::LN_2).abs() < 1e-9, "{mode:?}");
        }

        // all-shadow gt: negative term vanishes; weight depends on the mode
        let ones = Array2::from_elem((3, 3), 1.0f64);
        let pred = Array2::from_elem((3, 3), 0.8f64);
        let inv = bbce(&pred, &ones, BbceMode::InverseFrequency).unwrap();
        assert_eq!(inv.value, 0.0); // w_p = N_n / N = 0
        let lit = bbce(&pred, &ones, BbceMode::Literal).unwrap();
        assert!((lit.value - 9.0 * -(0.8f64.ln())).abs() < 1e-9); // w_p = 1
    }

    #[test]
    fn bbce_rejects_bad_targets() {
        let pred = Array2::from_elem((2, 2), 0.5f64);
        let gt = Array2::from_elem((2, 2), 0.25f64);
        assert!(matches!(
            bbce(&pred, &gt, BbceMode::InverseFrequency),
            Err(LossError::NonBinaryTarget(_))
        ));
        let gt3 = Array2::from_elem((3, 2), 1.0f64);
        assert!(matches!(
            bbce(&pred, &gt3, BbceMode::InverseFrequency),
            Err(LossError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn entropy_spot_values() {
        let confident = Array2::from_elem((4, 4), 1.0f64);
        assert!(entropy_loss(&confident).unwrap().value < 1e-5);
        let half = Array2::from_elem((4, 4), 0.5f64);
        assert!((entropy_loss(&half).unwrap().value - std::f64::consts::LN_2).abs() < 1e-12);
        let p9 = Array2::from_elem((4, 4), 0.9f64);
        assert!((entropy_loss(&p9).unwrap().value - 0.3250829733914482).abs() < 1e-12);
    }

    #[test]
    fn masked_pixels_do_not_contribute() {
        let mut y1 = full::<f64>((4, 4), 0.9);
        let y2 = full::<f64>((4, 4), 0.7);
        let mut mask = Array2::from_elem((4, 4), true);
        mask[[0, 0]] = false;
        let before = fc_loss(&y1, &y2, &mask).unwrap();
        // perturbing the masked-out pixel changes nothing
        y1.values[[0, 0]] = 0.123;
        let after = fc_loss(&y1, &y2, &mask).unwrap();
        assert_eq!(before.value, after.value);
        assert_eq!(before.grad_y1, after.grad_y1);
        assert_eq!(after.grad_y1[[0, 0]], 0.0);
    }
}
