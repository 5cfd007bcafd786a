//! Glue between the stages: vocabulary → pseudo-labels → supervision →
//! training → closed-set evaluation.

use crate::association::{
    aggregate_scores_3d, build_2d_label_map, build_label_map, fuse_2d_features, score_map_2d, AssociationConfig,
    FusedPointFeatures, LabelMap3D, LabelSource, PointScores3D,
};
use crate::embedding::{blend_dual_path, EmbeddingBank, FeatureMap2D, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::evaluation::{predict_labels, ConfusionMatrix};
use crate::scalar::Scalar;
use crate::scene::{PointCloud, Scene};
use crate::synth::{self, SceneSpec};
use crate::text::{self, CaptionSet, FilterReport, NoiseFilter, SceneTagSet, ViewTags};
use crate::trainer::{self, prob_3d, LossBreakdown, Supervision, Text2dTargets, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelConfig<S: Scalar> {
    pub assoc: AssociationConfig<S>,
    /// Weight of the clip path in the dual-path blend.
    pub alpha: S,
}

impl<S: Scalar> Default for LabelConfig<S> {
    fn default() -> Self {
        Self {
            assoc: AssociationConfig::default(),
            alpha: S::lit(DEFAULT_ALPHA),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub filtered: Vec<ViewTags>,
    pub reports: Vec<FilterReport>,
    pub scene_tags: SceneTagSet,
    /// Threshold actually applied after clamping to the view count.
    pub min_views: usize,
}

/// Denoises each view's tags, then keeps those seen in enough views.
pub fn build_vocabulary<F: NoiseFilter + ?Sized>(
    views: &[ViewTags],
    filter: &F,
    min_views: usize,
) -> Result<Vocabulary> {
    if min_views == 0 {
        return Err(Error::Invalid("min_views must be at least 1".into()));
    }
    let (filtered, reports): (Vec<_>, Vec<_>) = views.iter().map(|v| text::filter_tags(v, filter)).unzip();
    let min_views = text::effective_min_views(min_views, views.len());
    let scene_tags = text::multi_view_vote(&filtered, min_views)?;
    Ok(Vocabulary {
        filtered,
        reports,
        scene_tags,
        min_views,
    })
}

/// Everything derived from the 2D features for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet<S: Scalar> {
    pub tag_bank: EmbeddingBank<S>,
    pub tag_scores: PointScores3D<S>,
    pub tag_labels: LabelMap3D,
    pub captions: Option<(EmbeddingBank<S>, LabelMap3D)>,
    pub fused: FusedPointFeatures<S>,
    pub text2d: Text2dTargets<S>,
}

impl<S: Scalar> LabelSet<S> {
    pub fn supervision(&self) -> Supervision<S> {
        Supervision {
            tag_bank: self.tag_bank.clone(),
            tag_labels: self.tag_labels.clone(),
            captions: self.captions.clone(),
            fused: Some(self.fused.clone()),
            text2d: Some(self.text2d.clone()),
        }
    }
}

/// Builds tag and caption pseudo-label maps from the blended features, the
/// fused per-point 2D features, and the text-to-2D targets (thresholded
/// clip-path scores).
pub fn build_labels<S: Scalar>(
    scene: &Scene<S>,
    bank: &EmbeddingBank<S>,
    clip_maps: &[FeatureMap2D<S>],
    mask_maps: &[FeatureMap2D<S>],
    scene_tags: &SceneTagSet,
    captions: Option<&CaptionSet>,
    cfg: &LabelConfig<S>,
) -> Result<LabelSet<S>> {
    cfg.assoc.validate()?;
    if scene_tags.is_empty() {
        return Err(Error::Invalid("no scene-level tags survived voting".into()));
    }
    if clip_maps.len() != mask_maps.len() {
        return Err(Error::Shape(format!(
            "{} clip maps vs {} mask maps",
            clip_maps.len(),
            mask_maps.len()
        )));
    }
    let tag_bank = bank.select(scene_tags.tags())?;
    let blended = clip_maps
        .iter()
        .zip(mask_maps)
        .map(|(c, m)| blend_dual_path(c, m, cfg.alpha))
        .collect::<Result<Vec<_>>>()?;
    let tau1 = cfg.assoc.tau1;
    let label_map = |b: &EmbeddingBank<S>, source| -> Result<(PointScores3D<S>, LabelMap3D)> {
        let maps = blended
            .iter()
            .map(|f| score_map_2d(f, b, tau1))
            .collect::<Result<Vec<_>>>()?;
        let scores = aggregate_scores_3d(scene, &maps, &cfg.assoc)?;
        let labels = build_label_map(&scores, cfg.assoc.threshold, source)?;
        Ok((scores, labels))
    };
    let (tag_scores, tag_labels) = label_map(&tag_bank, LabelSource::Tag)?;
    let captions = match captions {
        Some(set) if !set.captions().is_empty() => {
            let caption_bank = set.associate(bank)?;
            let (_, labels) = label_map(&caption_bank, LabelSource::Caption)?;
            Some((caption_bank, labels))
        }
        _ => None,
    };
    let fused = fuse_2d_features(scene, &blended, &cfg.assoc)?;
    let masks = clip_maps
        .iter()
        .map(|f| build_2d_label_map(&score_map_2d(f, &tag_bank, tau1)?, cfg.assoc.threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelSet {
        tag_bank,
        tag_scores,
        tag_labels,
        captions,
        fused,
        text2d: Text2dTargets {
            init_mask_maps: mask_maps.to_vec(),
            masks,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelSummary {
    pub points: usize,
    pub labeled: usize,
    pub positives: usize,
}

impl LabelSummary {
    pub fn of(map: &LabelMap3D) -> Self {
        Self {
            points: map.len(),
            labeled: map.labeled_count(),
            positives: map.bits.iter().map(|&b| usize::from(b)).sum(),
        }
    }

    pub fn coverage(&self) -> f64 {
        self.labeled as f64 / self.points as f64
    }

    /// Mean positives per labeled point (0 when nothing is labeled).
    pub fn mean_labels(&self) -> f64 {
        if self.labeled == 0 {
            0.0
        } else {
            self.positives as f64 / self.labeled as f64
        }
    }

    pub fn format(&self, prefix: &str) -> String {
        format!(
            "{prefix}.points = {}\n{prefix}.labeled = {}\n{prefix}.positives = {}\n{prefix}.coverage = {:.6}\n{prefix}.mean_labels = {:.6}\n",
            self.points,
            self.labeled,
            self.positives,
            self.coverage(),
            self.mean_labels()
        )
    }
}

/// Argmax class per point against the closed-set class embeddings.
pub fn closed_set_predictions<S: Scalar>(f3d: &[S], class_bank: &EmbeddingBank<S>, tau2: S) -> Result<Vec<usize>> {
    Ok(predict_labels(&prob_3d(f3d, class_bank, tau2)?))
}

/// Confusion over points that are both annotated and seen by some view.
pub fn closed_set_confusion<S: Scalar>(
    cloud: &PointCloud<S>,
    f3d: &[S],
    class_bank: &EmbeddingBank<S>,
    tau2: S,
    labeled: &[bool],
) -> Result<ConfusionMatrix> {
    if labeled.len() != cloud.len() {
        return Err(Error::Shape(format!(
            "{} labeled flags for {} points",
            labeled.len(),
            cloud.len()
        )));
    }
    let pred = closed_set_predictions(f3d, class_bank, tau2)?;
    let mut m = ConfusionMatrix::new(class_bank.len());
    for ((p, point), &l) in pred.iter().zip(cloud.points()).zip(labeled) {
        if let (true, Some(gt)) = (l, point.gt_label) {
            m.add(gt, *p)?;
        }
    }
    Ok(m)
}

/// Settings for a full synthetic run of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig<S: Scalar> {
    pub scene: SceneSpec,
    pub labels: LabelConfig<S>,
    pub train: TrainConfig<S>,
    pub min_views: usize,
}

#[derive(Debug, Clone)]
pub struct SceneRun<S: Scalar> {
    pub confusion: ConfusionMatrix,
    pub history: Vec<LossBreakdown<S>>,
    pub features: Vec<S>,
}

/// Generate → vocabulary → labels → train → closed-set confusion.
pub fn run_synthetic_scene<S: Scalar>(cfg: &RunConfig<S>) -> Result<SceneRun<S>> {
    let world = synth::generate::<S>(&cfg.scene)?;
    let vocab = build_vocabulary(&world.view_tags, &world.stoplist, cfg.min_views)?;
    let labels = build_labels(
        &world.scene,
        &world.bank,
        &world.clip_maps,
        &world.mask_maps,
        &vocab.scene_tags,
        Some(&world.captions),
        &cfg.labels,
    )?;
    let cloud = world.scene.cloud();
    let outcome = trainer::train(cloud, &labels.supervision(), &cfg.train)?;
    let features = trainer::forward(&outcome.state.model, cloud);
    let class_bank = world.bank.select(&world.class_names)?;
    let confusion = closed_set_confusion(
        cloud,
        &features,
        &class_bank,
        cfg.train.tau2,
        &labels.tag_labels.labeled,
    )?;
    Ok(SceneRun {
        confusion,
        history: outcome.history,
        features,
    })
}
