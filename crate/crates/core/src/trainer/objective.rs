//! The combined alignment objective and its analytic gradient.

use crate::association::{score_map_2d, FusedPointFeatures, LabelMap2D, LabelMap3D, ScoreMap2D};
use crate::embedding::{EmbeddingBank, FeatureMap2D, FeaturePath};
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

use super::loss::{loss_2d3d, loss_llm, loss_tag, loss_text2d, prob_3d, total_loss, LossBreakdown, LossWeights};
use super::model::{backward_model, forward_cached, PointFeatureModel, INPUT_DIM};

/// Trainable raw (unnormalized) mask-path features of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskFeatures<S: Scalar> {
    pub view_id: String,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub raw: Vec<S>,
}

impl<S: Scalar> MaskFeatures<S> {
    pub fn from_map(map: &FeatureMap2D<S>) -> Self {
        Self {
            view_id: map.view_id().to_string(),
            height: map.height(),
            width: map.width(),
            dim: map.dim(),
            raw: map.data().to_vec(),
        }
    }

    /// Current normalized mask-path feature map.
    pub fn to_map(&self) -> Result<FeatureMap2D<S>> {
        let mut data = self.raw.clone();
        for (p, px) in data.chunks_exact_mut(self.dim).enumerate() {
            let n = scalar::norm(px);
            if !(n > S::zero()) {
                return Err(Error::ZeroNorm(format!(
                    "mask features of view {} at pixel {p}",
                    self.view_id
                )));
            }
            px.iter_mut().for_each(|v| *v = *v / n);
        }
        FeatureMap2D::new(
            self.view_id.clone(),
            self.height,
            self.width,
            self.dim,
            FeaturePath::Mask,
            data,
        )
    }
}

/// Text-to-2D supervision: starting mask-path maps and per-view binary targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Text2dTargets<S: Scalar> {
    pub init_mask_maps: Vec<FeatureMap2D<S>>,
    pub masks: Vec<LabelMap2D>,
}

/// Everything the objective compares the point features against.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervision<S: Scalar> {
    /// Text embeddings for the tag label columns, in column order.
    pub tag_bank: EmbeddingBank<S>,
    pub tag_labels: LabelMap3D,
    /// Caption embeddings and their positive-point masks.
    pub captions: Option<(EmbeddingBank<S>, LabelMap3D)>,
    pub fused: Option<FusedPointFeatures<S>>,
    pub text2d: Option<Text2dTargets<S>>,
}

impl<S: Scalar> Supervision<S> {
    pub fn validate(&self, points: usize) -> Result<()> {
        let check = |what: &str, n: usize| {
            if n == points {
                Ok(())
            } else {
                Err(Error::Shape(format!("{what} covers {n} points, cloud has {points}")))
            }
        };
        check("tag labels", self.tag_labels.len())?;
        if self.tag_labels.classes != self.tag_bank.len() {
            return Err(Error::Shape(format!(
                "tag labels have {} classes, tag bank {}",
                self.tag_labels.classes,
                self.tag_bank.len()
            )));
        }
        if let Some((bank, masks)) = &self.captions {
            check("caption masks", masks.len())?;
            if bank.len() != masks.classes || bank.dim() != self.tag_bank.dim() {
                return Err(Error::Shape("caption bank does not match caption masks".into()));
            }
        }
        if let Some(fused) = &self.fused {
            check("fused features", fused.len())?;
            if fused.dim != self.tag_bank.dim() {
                return Err(Error::Dimension {
                    context: "fused features",
                    expected: self.tag_bank.dim(),
                    found: fused.dim,
                });
            }
        }
        if let Some(t) = &self.text2d {
            if t.init_mask_maps.len() != t.masks.len() {
                return Err(Error::Shape("text-2d maps and masks differ in count".into()));
            }
            for (m, mask) in t.init_mask_maps.iter().zip(&t.masks) {
                if m.view_id() != mask.view_id
                    || m.height() != mask.height
                    || m.width() != mask.width
                    || mask.classes != self.tag_bank.len()
                    || m.dim() != self.tag_bank.dim()
                {
                    return Err(Error::Shape(format!(
                        "text-2d target for view {} does not match",
                        m.view_id()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Model plus trainable mask-path features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableState<S: Scalar> {
    pub model: PointFeatureModel<S>,
    pub mask: Vec<MaskFeatures<S>>,
}

impl<S: Scalar> TrainableState<S> {
    pub fn new(model: PointFeatureModel<S>, supervision: &Supervision<S>) -> Self {
        let mask = supervision
            .text2d
            .as_ref()
            .map(|t| t.init_mask_maps.iter().map(MaskFeatures::from_map).collect())
            .unwrap_or_default();
        Self { model, mask }
    }

    pub fn param_count(&self) -> usize {
        self.model.param_count() + self.mask.iter().map(|m| m.raw.len()).sum::<usize>()
    }

    /// Reads the `index`-th parameter in the flat order (model, then mask views).
    pub fn param(&self, mut index: usize) -> S {
        if index < self.model.param_count() {
            return self.model.params()[index];
        }
        index -= self.model.param_count();
        for m in &self.mask {
            if index < m.raw.len() {
                return m.raw[index];
            }
            index -= m.raw.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, index: usize, value: S) {
        *self.locate_mut(index) = value;
    }

    fn locate_mut(&mut self, mut index: usize) -> &mut S {
        if index < self.model.param_count() {
            return &mut self.model.params_mut()[index];
        }
        index -= self.model.param_count();
        for m in &mut self.mask {
            if index < m.raw.len() {
                return &mut m.raw[index];
            }
            index -= m.raw.len();
        }
        panic!("parameter index out of range");
    }

    /// Mutable parameter blocks in flat order.
    pub(crate) fn blocks_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = vec![self.model.params_mut()];
        out.extend(self.mask.iter_mut().map(|m| m.raw.as_mut_slice()));
        out
    }
}

/// Gradient blocks aligned with [`TrainableState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<S: Scalar> {
    pub model: Vec<S>,
    pub mask: Vec<Vec<S>>,
}

impl<S: Scalar> Gradient<S> {
    pub fn flat(&self) -> Vec<S> {
        let mut out = self.model.clone();
        for m in &self.mask {
            out.extend_from_slice(m);
        }
        out
    }

    pub fn blocks(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = vec![&self.model];
        out.extend(self.mask.iter().map(Vec::as_slice));
        out
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.flat().iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFiniteGradient { index }),
            None => Ok(()),
        }
    }
}

/// Temperatures of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperatures<S: Scalar> {
    /// Pixel–text temperature (text-to-2D term).
    pub tau1: S,
    /// Point–text temperature.
    pub tau2: S,
}

/// Evaluates every loss term and, if requested, the gradient of the
/// weighted total wrt all trainable parameters.
pub fn evaluate<S: Scalar>(
    state: &TrainableState<S>,
    inputs: &[[S; INPUT_DIM]],
    supervision: &Supervision<S>,
    weights: &LossWeights<S>,
    temps: &Temperatures<S>,
    with_gradient: bool,
) -> Result<(LossBreakdown<S>, Option<Gradient<S>>)> {
    let dim = supervision.tag_bank.dim();
    if state.model.out_dim() != dim {
        return Err(Error::Dimension {
            context: "model output vs text dim",
            expected: dim,
            found: state.model.out_dim(),
        });
    }
    let cache = forward_cached(&state.model, inputs);
    let f3d = &cache.features;
    let mut grad_f = vec![S::zero(); f3d.len()];
    let accumulate = |grad_f: &mut Vec<S>, g: &[S], w: S| {
        if with_gradient && w != S::zero() {
            grad_f.iter_mut().zip(g).for_each(|(a, &b)| *a += w * b);
        }
    };

    // Tag term: chain dL/dP through the sigmoid and the cosine.
    let probs = prob_3d(f3d, &supervision.tag_bank, temps.tau2)?;
    let tag = loss_tag(&probs, &supervision.tag_labels)?;
    if with_gradient && weights.tag != S::zero() {
        let classes = probs.classes;
        let text = supervision.tag_bank.matrix();
        for (i, gf) in grad_f.chunks_exact_mut(dim).enumerate() {
            for c in 0..classes {
                let p = probs.data[i * classes + c];
                let dz = tag.grad[i * classes + c] * p * (S::one() - p) / temps.tau2;
                if dz != S::zero() {
                    let w = weights.tag * dz;
                    gf.iter_mut()
                        .zip(&text[c * dim..(c + 1) * dim])
                        .for_each(|(g, &t)| *g += w * t);
                }
            }
        }
    }

    let llm = match &supervision.captions {
        Some((bank, masks)) => {
            let l = loss_llm(f3d, bank, masks)?;
            accumulate(&mut grad_f, &l.grad, weights.llm);
            l.value
        }
        None => S::zero(),
    };

    let pair = match &supervision.fused {
        Some(fused) => {
            let l = loss_2d3d(fused, f3d)?;
            accumulate(&mut grad_f, &l.grad, weights.pair);
            l.value
        }
        None => S::zero(),
    };

    let mut mask_grads: Vec<Vec<S>> = state.mask.iter().map(|m| vec![S::zero(); m.raw.len()]).collect();
    let text2d = match &supervision.text2d {
        Some(targets) if !state.mask.is_empty() => {
            let maps: Vec<FeatureMap2D<S>> = state.mask.iter().map(MaskFeatures::to_map).collect::<Result<_>>()?;
            let scores: Vec<ScoreMap2D<S>> = maps
                .iter()
                .map(|m| score_map_2d(m, &supervision.tag_bank, temps.tau1))
                .collect::<Result<_>>()?;
            let l = loss_text2d(&scores, &targets.masks)?;
            if with_gradient && weights.text2d != S::zero() {
                text2d_backward(
                    state,
                    &maps,
                    &scores,
                    &l.grad,
                    supervision,
                    weights.text2d,
                    temps.tau1,
                    &mut mask_grads,
                );
            }
            l.value
        }
        _ => S::zero(),
    };

    let mut parts = LossBreakdown {
        tag: tag.value,
        llm,
        pair,
        text2d,
        total: S::zero(),
    };
    parts.total = total_loss(&parts, weights);

    let gradient = with_gradient.then(|| Gradient {
        model: backward_model(&state.model, &cache, &grad_f),
        mask: mask_grads,
    });
    if let Some(g) = &gradient {
        g.check_finite()?;
    }
    Ok((parts, gradient))
}

#[allow(clippy::too_many_arguments)]
fn text2d_backward<S: Scalar>(
    state: &TrainableState<S>,
    maps: &[FeatureMap2D<S>],
    scores: &[ScoreMap2D<S>],
    grad_scores: &[S],
    supervision: &Supervision<S>,
    weight: S,
    tau1: S,
    out: &mut [Vec<S>],
) {
    let text = supervision.tag_bank.matrix();
    let classes = supervision.tag_bank.len();
    let mut offset = 0;
    for (((mask, map), score), g_out) in state.mask.iter().zip(maps).zip(scores).zip(out.iter_mut()) {
        let dim = mask.dim;
        let mut gm = vec![S::zero(); dim];
        for (p, (m, raw)) in map.pixels().zip(mask.raw.chunks_exact(dim)).enumerate() {
            gm.iter_mut().for_each(|v| *v = S::zero());
            for c in 0..classes {
                let k = p * classes + c;
                let s = score.data[k];
                let dz = weight * grad_scores[offset + k] * s * (S::one() - s) / tau1;
                if dz != S::zero() {
                    gm.iter_mut()
                        .zip(&text[c * dim..(c + 1) * dim])
                        .for_each(|(g, &t)| *g += dz * t);
                }
            }
            let n = scalar::norm(raw);
            let proj = scalar::dot(m, &gm);
            for (k, g) in g_out[p * dim..(p + 1) * dim].iter_mut().enumerate() {
                *g = (gm[k] - m[k] * proj) / n;
            }
        }
        offset += score.data.len();
    }
}
