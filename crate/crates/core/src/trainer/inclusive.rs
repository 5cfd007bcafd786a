//! Inclusive (sigmoid + BCE) versus exclusive (softmax + CE) supervision of
//! a point that is positive for two identical text embeddings.

use crate::association::{LabelMap3D, LabelSource};
use crate::embedding::{normalize, orthonormalize_against, random_unit, EmbeddingBank, EmbeddingVector, EntryKind};
use crate::error::Result;
use crate::rng;
use crate::scalar::{self, Scalar};

use super::adam::{Adam, AdamConfig};
use super::loss::{loss_tag, prob_3d, softmax_cross_entropy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InclusionOutcome<S: Scalar> {
    /// Final mean BCE of the sigmoid objective.
    pub bce: S,
    /// Final softmax cross-entropy summed over the two positive targets.
    pub softmax_ce: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InclusionConfig<S: Scalar> {
    pub dim: usize,
    pub steps: usize,
    pub learning_rate: S,
    pub tau: S,
    pub seed: u64,
}

impl<S: Scalar> Default for InclusionConfig<S> {
    fn default() -> Self {
        Self {
            dim: 16,
            steps: 500,
            learning_rate: S::lit(0.05),
            tau: S::lit(0.1),
            seed: 0,
        }
    }
}

/// Bank `[t, t, u]` with `u ⟂ t`; the point is positive for both copies of
/// `t` and negative for `u`. A free point feature is optimized with Adam
/// under each objective.
pub fn mutual_inclusion_experiment<S: Scalar>(cfg: &InclusionConfig<S>) -> Result<InclusionOutcome<S>> {
    let mut rng = rng::stream(cfg.seed, "inclusion");
    let t: Vec<S> = random_unit(&mut rng, cfg.dim);
    let u = loop {
        let raw: Vec<S> = random_unit(&mut rng, cfg.dim);
        if let Some(u) = orthonormalize_against(&raw, std::slice::from_ref(&t)) {
            break u;
        }
    };
    let mut bank = EmbeddingBank::new(cfg.dim);
    bank.push("t1", EntryKind::Tag, EmbeddingVector::from_unit(t.clone())?)?;
    bank.push("t2", EntryKind::Tag, EmbeddingVector::from_unit(t)?)?;
    bank.push("u", EntryKind::Tag, EmbeddingVector::from_unit(u)?)?;
    let labels = LabelMap3D {
        classes: 3,
        source: LabelSource::Tag,
        bits: vec![1, 1, 0],
        labeled: vec![true],
    };
    let start: Vec<S> = random_unit(&mut rng, cfg.dim);
    let text = bank.matrix();
    let dim = cfg.dim;

    // Returns (loss, dL/dlogits) for the unit feature.
    let run = |objective: &dyn Fn(&[S]) -> Result<(S, Vec<S>)>| -> Result<S> {
        let mut raw = start.clone();
        let mut adam = Adam::new(AdamConfig::default(), cfg.learning_rate, &[dim]);
        for _ in 0..cfg.steps {
            let f = normalize(&raw)?.into_inner();
            let (_, dlogits) = objective(&f)?;
            let mut gf = vec![S::zero(); dim];
            for (c, &dz) in dlogits.iter().enumerate() {
                gf.iter_mut()
                    .zip(&text[c * dim..(c + 1) * dim])
                    .for_each(|(g, &tc)| *g += dz * tc / cfg.tau);
            }
            let n = scalar::norm(&raw);
            let proj = scalar::dot(&f, &gf);
            let graw: Vec<S> = gf.iter().zip(&f).map(|(&g, &fk)| (g - fk * proj) / n).collect();
            adam.step(&mut [raw.as_mut_slice()], &[&graw]);
        }
        Ok(objective(&normalize(&raw)?.into_inner())?.0)
    };

    let bce = run(&|f: &[S]| {
        let p = prob_3d(f, &bank, cfg.tau)?;
        let l = loss_tag(&p, &labels)?;
        let dz = l
            .grad
            .iter()
            .zip(&p.data)
            .map(|(&g, &pc)| g * pc * (S::one() - pc))
            .collect();
        Ok((l.value, dz))
    })?;
    let softmax_ce = run(&|f: &[S]| {
        let logits: Vec<S> = text.chunks_exact(dim).map(|t| scalar::dot(f, t) / cfg.tau).collect();
        let l = softmax_cross_entropy(&logits, &labels.bits, 3)?;
        Ok((l.value, l.grad))
    })?;
    Ok(InclusionOutcome { bce, softmax_ce })
}
