//! Alignment losses and their gradients.
//!
//! Every loss returns its value together with the gradient with respect to
//! its immediate input (probabilities, scores, or unit-norm point features).

use crate::association::{FusedPointFeatures, LabelMap2D, LabelMap3D, ScoreMap2D};
use crate::embedding::EmbeddingBank;
use crate::error::{Error, Result};
use crate::scalar::{self, sigmoid, Scalar};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<S: Scalar> {
    pub value: S,
    pub grad: Vec<S>,
}

/// Per-point, per-class probabilities `N × classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prob3D<S: Scalar> {
    pub classes: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Prob3D<S> {
    pub fn len(&self) -> usize {
        if self.classes == 0 {
            0
        } else {
            self.data.len() / self.classes
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }
}

/// `P[i,c] = sigmoid(cos(f_i, t_c) / tau2)`; `f3d` is `N × dim`, unit rows.
pub fn prob_3d<S: Scalar>(f3d: &[S], bank: &EmbeddingBank<S>, tau2: S) -> Result<Prob3D<S>> {
    let dim = bank.dim();
    if dim == 0 || f3d.len() % dim != 0 {
        return Err(Error::Dimension {
            context: "point features vs text dim",
            expected: dim,
            found: f3d.len(),
        });
    }
    if !(tau2 > S::zero()) {
        return Err(Error::Invalid(format!("tau2 {tau2} must be positive")));
    }
    let text = bank.matrix();
    let mut data = Vec::with_capacity(f3d.len() / dim * bank.len());
    for f in f3d.chunks_exact(dim) {
        for t in text.chunks_exact(dim) {
            let cos = scalar::dot(f, t).max(-S::one()).min(S::one());
            data.push(sigmoid(cos / tau2));
        }
    }
    Ok(Prob3D {
        classes: bank.len(),
        data,
    })
}

/// Mean clamped BCE over the entries whose row is included, with the
/// gradient wrt the probabilities (zero on excluded or clamped entries).
fn bce_mean<S: Scalar>(
    probs: &[S],
    targets: &[u8],
    classes: usize,
    include_row: impl Fn(usize) -> bool,
) -> LossGrad<S> {
    let lo = S::lit(PROB_CLAMP);
    let hi = S::one() - lo;
    let rows = if classes == 0 { 0 } else { probs.len() / classes };
    let included: Vec<bool> = (0..rows).map(&include_row).collect();
    let count = included.iter().filter(|&&b| b).count() * classes;
    let mut grad = vec![S::zero(); probs.len()];
    if count == 0 {
        return LossGrad { value: S::zero(), grad };
    }
    let inv = S::one() / S::from_count(count);
    let mut total = S::zero();
    for (i, _) in included.iter().enumerate().filter(|(_, &b)| b) {
        for k in i * classes..(i + 1) * classes {
            let p = probs[k];
            let pc = p.max(lo).min(hi);
            let positive = targets[k] == 1;
            total += if positive { -pc.ln() } else { -(S::one() - pc).ln() };
            if p > lo && p < hi {
                grad[k] = if positive { -inv / p } else { inv / (S::one() - p) };
            }
        }
    }
    LossGrad {
        value: total * inv,
        grad,
    }
}

/// Tag loss: mean BCE over labeled points and all classes.
pub fn loss_tag<S: Scalar>(probs: &Prob3D<S>, labels: &LabelMap3D) -> Result<LossGrad<S>> {
    if probs.classes != labels.classes || probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "probabilities {}x{} vs labels {}x{}",
            probs.len(),
            probs.classes,
            labels.len(),
            labels.classes
        )));
    }
    Ok(bce_mean(&probs.data, &labels.bits, probs.classes, |i| {
        labels.labeled[i]
    }))
}

/// Caption loss: for each caption with positives, mean over its positive
/// points of `1 - cos(caption, f_i)`; then mean over those captions.
/// Gradient is wrt `f3d` (`N × dim`).
pub fn loss_llm<S: Scalar>(f3d: &[S], captions: &EmbeddingBank<S>, masks: &LabelMap3D) -> Result<LossGrad<S>> {
    let dim = captions.dim();
    if masks.classes != captions.len() || f3d.len() != masks.len() * dim {
        return Err(Error::Shape(format!(
            "caption loss: {} captions / {} mask columns, {} feature values for {} points of dim {dim}",
            captions.len(),
            masks.classes,
            f3d.len(),
            masks.len()
        )));
    }
    let mut grad = vec![S::zero(); f3d.len()];
    let positives: Vec<Vec<usize>> = (0..captions.len()).map(|c| masks.positives(c)).collect();
    let active = positives.iter().filter(|p| !p.is_empty()).count();
    if active == 0 {
        return Ok(LossGrad { value: S::zero(), grad });
    }
    let per_caption = S::one() / S::from_count(active);
    let mut total = S::zero();
    for (c, pos) in positives.iter().enumerate().filter(|(_, p)| !p.is_empty()) {
        let e = captions.vector(c);
        let w = per_caption / S::from_count(pos.len());
        let mut sum = S::zero();
        for &i in pos {
            let f = &f3d[i * dim..(i + 1) * dim];
            sum += S::one() - scalar::dot(f, e).max(-S::one()).min(S::one());
            grad[i * dim..(i + 1) * dim]
                .iter_mut()
                .zip(e)
                .for_each(|(g, &ek)| *g -= w * ek);
        }
        total += sum / S::from_count(pos.len());
    }
    Ok(LossGrad {
        value: total * per_caption,
        grad,
    })
}

/// 2D–3D loss: mean over points seen in at least one view of
/// `1 - cos(fused_i, f_i)`. Gradient is wrt `f3d`.
pub fn loss_2d3d<S: Scalar>(fused: &FusedPointFeatures<S>, f3d: &[S]) -> Result<LossGrad<S>> {
    let dim = fused.dim;
    if f3d.len() != fused.data.len() {
        return Err(Error::Shape(format!(
            "fused features have {} values, point features {}",
            fused.data.len(),
            f3d.len()
        )));
    }
    let mut grad = vec![S::zero(); f3d.len()];
    let labeled: Vec<usize> = (0..fused.len()).filter(|&i| fused.counts[i] > 0).collect();
    if labeled.is_empty() {
        return Ok(LossGrad { value: S::zero(), grad });
    }
    let inv = S::one() / S::from_count(labeled.len());
    let mut total = S::zero();
    for &i in &labeled {
        let target = fused.row(i);
        let f = &f3d[i * dim..(i + 1) * dim];
        total += S::one() - scalar::dot(f, target).max(-S::one()).min(S::one());
        grad[i * dim..(i + 1) * dim]
            .iter_mut()
            .zip(target)
            .for_each(|(g, &t)| *g = -inv * t);
    }
    Ok(LossGrad {
        value: total * inv,
        grad,
    })
}

/// Text-to-2D loss: mean BCE over every pixel and class of every view.
/// Gradient is wrt the scores, views concatenated in order.
pub fn loss_text2d<S: Scalar>(scores: &[ScoreMap2D<S>], masks: &[LabelMap2D]) -> Result<LossGrad<S>> {
    if scores.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} score maps vs {} masks",
            scores.len(),
            masks.len()
        )));
    }
    let mut probs = Vec::new();
    let mut targets = Vec::new();
    let mut classes = None;
    for (s, m) in scores.iter().zip(masks) {
        if s.view_id != m.view_id || s.height != m.height || s.width != m.width || s.classes != m.classes {
            return Err(Error::Shape(format!(
                "score map {} {}x{}x{} vs mask {} {}x{}x{}",
                s.view_id, s.height, s.width, s.classes, m.view_id, m.height, m.width, m.classes
            )));
        }
        if *classes.get_or_insert(s.classes) != s.classes {
            return Err(Error::Shape("score maps disagree on class count".into()));
        }
        probs.extend_from_slice(&s.data);
        targets.extend_from_slice(&m.bits);
    }
    Ok(bce_mean(&probs, &targets, classes.unwrap_or(0), |_| true))
}

/// Softmax cross-entropy summed over every positive class of each included
/// row, averaged over rows. Mutually exclusive counterpart of the BCE loss.
/// Gradient is wrt the logits.
pub fn softmax_cross_entropy<S: Scalar>(logits: &[S], targets: &[u8], classes: usize) -> Result<LossGrad<S>> {
    if classes == 0 || logits.len() % classes != 0 || targets.len() != logits.len() {
        return Err(Error::Shape("softmax cross-entropy shapes".into()));
    }
    let rows = logits.len() / classes;
    let mut grad = vec![S::zero(); logits.len()];
    if rows == 0 {
        return Ok(LossGrad { value: S::zero(), grad });
    }
    let inv = S::one() / S::from_count(rows);
    let mut total = S::zero();
    for r in 0..rows {
        let z = &logits[r * classes..(r + 1) * classes];
        let t = &targets[r * classes..(r + 1) * classes];
        let m = z.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<S>().ln();
        let positives = S::from_count(t.iter().filter(|&&b| b == 1).count());
        for c in 0..classes {
            let p = (z[c] - lse).exp();
            if t[c] == 1 {
                total += lse - z[c];
            }
            let indicator = if t[c] == 1 { S::one() } else { S::zero() };
            grad[r * classes + c] = inv * (positives * p - indicator);
        }
    }
    Ok(LossGrad {
        value: total * inv,
        grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<S: Scalar> {
    pub tag: S,
    pub llm: S,
    pub pair: S,
    pub text2d: S,
}

impl<S: Scalar> Default for LossWeights<S> {
    fn default() -> Self {
        Self {
            tag: S::one(),
            llm: S::one(),
            pair: S::one(),
            text2d: S::one(),
        }
    }
}

impl<S: Scalar> LossWeights<S> {
    pub fn zero() -> Self {
        Self {
            tag: S::zero(),
            llm: S::zero(),
            pair: S::zero(),
            text2d: S::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_tag", self.tag),
            ("w_llm", self.llm),
            ("w_2d3d", self.pair),
            ("w_text2d", self.text2d),
        ] {
            if !(w >= S::zero() && w.is_finite()) {
                return Err(Error::Invalid(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<S: Scalar> {
    pub tag: S,
    pub llm: S,
    /// 2D–3D feature alignment.
    pub pair: S,
    pub text2d: S,
    pub total: S,
}

pub fn total_loss<S: Scalar>(parts: &LossBreakdown<S>, weights: &LossWeights<S>) -> S {
    weights.tag * parts.tag + weights.llm * parts.llm + weights.pair * parts.pair + weights.text2d * parts.text2d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::LabelSource;
    use crate::embedding::{normalize, EntryKind};

    fn labels(classes: usize, bits: Vec<u8>, labeled: Vec<bool>) -> LabelMap3D {
        LabelMap3D {
            classes,
            source: LabelSource::Tag,
            bits,
            labeled,
        }
    }

    /// Scalar-loop BCE reference.
    fn bce_oracle(p: &[f64], m: &[u8], classes: usize, labeled: &[bool]) -> f64 {
        let mut sum = 0.0;
        let mut count = 0.0;
        for (i, &l) in labeled.iter().enumerate() {
            if !l {
                continue;
            }
            for c in 0..classes {
                let pc = p[i * classes + c].clamp(1e-7, 1.0 - 1e-7);
                let y = f64::from(m[i * classes + c]);
                sum -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
                count += 1.0;
            }
        }
        sum / count
    }

    #[test]
    fn tag_loss_examples() {
        let p = Prob3D {
            classes: 2,
            data: vec![0.5; 6],
        };
        let l = loss_tag(&p, &labels(2, vec![1, 0, 0, 1, 1, 1], vec![true; 3])).unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-15);

        let perfect = Prob3D {
            classes: 2,
            data: vec![1.0 - 1e-7, 1e-7, 1e-7, 1.0 - 1e-7],
        };
        let l = loss_tag(&perfect, &labels(2, vec![1, 0, 0, 1], vec![true; 2])).unwrap();
        assert!(l.value <= 1e-6);

        let data = vec![0.13, 0.92, 0.51, 0.02, 0.77, 0.4];
        let bits = vec![0, 1, 1, 0, 0, 1];
        let m = labels(2, bits.clone(), vec![true, true, true]);
        let l = loss_tag(
            &Prob3D {
                classes: 2,
                data: data.clone(),
            },
            &m,
        )
        .unwrap();
        assert!((l.value - bce_oracle(&data, &bits, 2, &[true; 3])).abs() < 1e-12);

        let partial = labels(2, bits.clone(), vec![true, false, true]);
        let l = loss_tag(
            &Prob3D {
                classes: 2,
                data: data.clone(),
            },
            &partial,
        )
        .unwrap();
        assert!((l.value - bce_oracle(&data, &bits, 2, &[true, false, true])).abs() < 1e-12);
        assert_eq!(&l.grad[2..4], &[0.0, 0.0]);
        assert!(loss_tag(
            &Prob3D {
                classes: 3,
                data: vec![0.5; 6]
            },
            &m
        )
        .is_err());
    }

    fn caption_bank(v: &[f64]) -> EmbeddingBank<f64> {
        let mut b = EmbeddingBank::new(v.len());
        b.push("cap", EntryKind::Caption, normalize(v).unwrap()).unwrap();
        b
    }

    #[test]
    fn caption_loss_examples() {
        let bank = caption_bank(&[1.0, 0.0]);
        let mask = labels(1, vec![1, 0], vec![true, true]);
        let l = |f: [f64; 4]| loss_llm(&f, &bank, &mask).unwrap().value;
        assert_eq!(l([1.0, 0.0, 0.0, 1.0]), 0.0);
        assert_eq!(l([0.0, 1.0, 1.0, 0.0]), 1.0);
        assert_eq!(l([-1.0, 0.0, 1.0, 0.0]), 2.0);
        let empty = labels(1, vec![0, 0], vec![true, true]);
        assert_eq!(loss_llm(&[0.0, 1.0, 0.0, 1.0], &bank, &empty).unwrap().value, 0.0);
    }

    #[test]
    fn pair_loss_examples() {
        let fused = FusedPointFeatures {
            dim: 2,
            data: vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            counts: vec![1, 2, 0],
        };
        assert_eq!(loss_2d3d(&fused, &[1.0, 0.0, 0.0, 1.0, 0.3, 0.7]).unwrap().value, 0.0);
        assert_eq!(loss_2d3d(&fused, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap().value, 1.0);
        let f = [0.6, 0.8, 0.8, -0.6, 1.0, 0.0];
        let oracle: f64 = ((1.0 - 0.6) + (1.0 + 0.6)) / 2.0;
        assert!((loss_2d3d(&fused, &f).unwrap().value - oracle).abs() < 1e-12);
        assert!(loss_2d3d(&fused, &[1.0, 0.0]).is_err());
    }

    fn smap(data: Vec<f64>) -> ScoreMap2D<f64> {
        ScoreMap2D {
            view_id: "v".into(),
            height: 1,
            width: 2,
            classes: 2,
            data,
        }
    }

    fn pmask(bits: Vec<u8>) -> LabelMap2D {
        LabelMap2D {
            view_id: "v".into(),
            height: 1,
            width: 2,
            classes: 2,
            bits,
        }
    }

    #[test]
    fn text2d_examples() {
        let l = loss_text2d(&[smap(vec![0.5; 4])], &[pmask(vec![1, 0, 0, 1])]).unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-15);
        let lo = 1e-7;
        let l = loss_text2d(&[smap(vec![1.0 - lo, lo, lo, 1.0 - lo])], &[pmask(vec![1, 0, 0, 1])]).unwrap();
        assert!(l.value <= 1e-6);
        let data = vec![0.3, 0.8, 0.65, 0.1];
        let bits = vec![1, 1, 0, 0];
        let l = loss_text2d(&[smap(data.clone())], &[pmask(bits.clone())]).unwrap();
        assert!((l.value - bce_oracle(&data, &bits, 2, &[true, true])).abs() < 1e-12);
        assert!(loss_text2d(&[smap(data)], &[]).is_err());
    }

    #[test]
    fn totals() {
        let parts = LossBreakdown {
            tag: 1.0,
            llm: 2.0,
            pair: 3.0,
            text2d: 4.0,
            total: 0.0,
        };
        assert_eq!(total_loss(&parts, &LossWeights::default()), 10.0);
        assert_eq!(total_loss(&parts, &LossWeights::zero()), 0.0);
        let no2d = LossWeights {
            text2d: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(total_loss(&parts, &no2d), 6.0);
        assert!(LossWeights {
            tag: -1.0,
            ..LossWeights::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn prob_examples() {
        let mut bank = EmbeddingBank::<f64>::new(2);
        bank.push("a", EntryKind::Tag, normalize(&[1.0, 0.0]).unwrap()).unwrap();
        bank.push("b", EntryKind::Tag, normalize(&[0.0, 1.0]).unwrap()).unwrap();
        let p = prob_3d(&[1.0, 0.0], &bank, 0.1).unwrap();
        assert!((p.data[0] - 0.9999546).abs() < 1e-7);
        assert_eq!(p.data[1], 0.5);
        assert!(prob_3d(&[1.0, 0.0, 0.0], &bank, 0.1).is_err());
    }

    #[test]
    fn softmax_ce_with_duplicate_targets_is_bounded() {
        // Two identical logits both marked positive: each softmax output is at most 1/2.
        let l = softmax_cross_entropy(&[10.0, 10.0, -10.0], &[1, 1, 0], 3).unwrap();
        assert!(l.value >= 2.0 * std::f64::consts::LN_2 - 1e-12);
        let single = softmax_cross_entropy(&[0.0, 0.0], &[1, 0], 2).unwrap();
        assert!((single.value - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
