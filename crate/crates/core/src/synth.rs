//! Deterministic synthetic scenes: boxes on a ring, cameras on a circle
//! around them, and the embeddings, tags and captions a real tagger,
//! captioner and 2D backbone would have produced.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::embedding::{
    self, gaussian_vec, normalize_into, orthonormalize_against, random_unit, EmbeddingBank, EmbeddingVector, EntryKind,
    FeatureMap2D, SynthConfig,
};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::scalar::Scalar;
use crate::scene::{self, CameraView, Point3D, PointCloud, Scene};
use crate::text::{self, Caption, CaptionSet, Stoplist, ViewTags};

const CLASS_NAMES: [&str; 20] = [
    "chair",
    "table",
    "sofa",
    "bookshelf",
    "door",
    "window",
    "cabinet",
    "desk",
    "bed",
    "sink",
    "toilet",
    "bathtub",
    "curtain",
    "counter",
    "refrigerator",
    "picture",
    "lamp",
    "shelf",
    "pillow",
    "monitor",
];

/// Words a tagger emits that are not objects; they go into the stoplist.
const NOISE_WORDS: [&str; 4] = ["purple", "blue", "lay", "wooden"];

/// An object the tagger hallucinates in too few views to survive voting.
pub const HALLUCINATED_TAG: &str = "ukulele";

/// Minimum visible points for a class to be tagged in a view.
const TAG_MIN_POINTS: usize = 2;

pub fn class_name(c: usize) -> String {
    CLASS_NAMES
        .get(c)
        .map_or_else(|| format!("class_{c}"), |s| s.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub points: usize,
    pub classes: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub orthogonalize: bool,
    /// Voting threshold the hallucinated tag is tuned to fall just short of.
    pub min_views: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 200,
            classes: 8,
            views: 6,
            width: 32,
            height: 32,
            dim: embedding::DEFAULT_DIM,
            noise_sigma: 0.1,
            orthogonalize: true,
            min_views: text::DEFAULT_MIN_VIEWS,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.views == 0 || self.width == 0 || self.height == 0 || self.dim == 0 {
            return Err(Error::Invalid(
                "classes, views, image size and dim must be positive".into(),
            ));
        }
        if self.points < self.classes {
            return Err(Error::Invalid(format!(
                "{} points cannot cover {} classes",
                self.points, self.classes
            )));
        }
        if self.orthogonalize && self.classes > self.dim {
            return Err(Error::Invalid(format!(
                "{} orthogonal classes need dim >= {}, got {}",
                self.classes, self.classes, self.dim
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Invalid(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene<S: Scalar> {
    pub scene: Scene<S>,
    pub class_names: Vec<String>,
    /// Prototypes (`class_<c>`), one tag entry per vocabulary word, and captions.
    pub bank: EmbeddingBank<S>,
    pub clip_maps: Vec<FeatureMap2D<S>>,
    pub mask_maps: Vec<FeatureMap2D<S>>,
    pub view_tags: Vec<ViewTags>,
    pub captions: CaptionSet,
    pub stoplist: Stoplist,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Pinhole camera at `eye` looking at `target`, z up. Rows of the rotation
/// are right, down, forward so that depth is the third homogeneous coordinate.
pub fn look_at(eye: [f64; 3], target: [f64; 3], focal: f64, width: usize, height: usize) -> [[f64; 4]; 3] {
    let fwd = unit(sub(target, eye));
    let right = unit(cross(fwd, [0.0, 0.0, 1.0]));
    let down = cross(fwd, right);
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let rows = [right, down, fwd];
    let t: Vec<f64> = rows.iter().map(|r| -dot3(*r, eye)).collect();
    let k = [[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]];
    let mut m = [[0.0; 4]; 3];
    for (i, krow) in k.iter().enumerate() {
        for j in 0..3 {
            m[i][j] = (0..3).map(|l| krow[l] * rows[l][j]).sum();
        }
        m[i][3] = (0..3).map(|l| krow[l] * t[l]).sum();
    }
    m
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Uniform point on the surface of an axis-aligned box, faces weighted by area.
fn box_surface_point(rng: &mut StreamRng, center: [f64; 3], half: [f64; 3]) -> [f64; 3] {
    let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut axis = 2;
    for (a, area) in areas.iter().enumerate() {
        if pick < *area {
            axis = a;
            break;
        }
        pick -= area;
    }
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut p = [0.0; 3];
    for d in 0..3 {
        p[d] = center[d]
            + if d == axis {
                sign * half[d]
            } else {
                half[d] * (2.0 * rng.random::<f64>() - 1.0)
            };
    }
    p
}

fn synth_cloud<S: Scalar>(spec: &SceneSpec) -> Result<PointCloud<S>> {
    let mut geo = rng::stream(spec.seed, "geometry");
    let mut col = rng::stream(spec.seed, "colors");
    let c_count = spec.classes;
    let ring = 1.5 * (c_count as f64 / 8.0).max(1.0);
    let mut points = Vec::with_capacity(spec.points);
    for c in 0..c_count {
        let n = spec.points / c_count + usize::from(c < spec.points % c_count);
        let angle = std::f64::consts::TAU * c as f64 / c_count as f64 + 0.2 * (geo.random::<f64>() - 0.5);
        let radius = if c_count == 1 { 0.0 } else { ring };
        let half = [
            geo.random_range(0.2..0.35),
            geo.random_range(0.2..0.35),
            geo.random_range(0.2..0.45),
        ];
        let center = [radius * angle.cos(), radius * angle.sin(), half[2]];
        let base = hsv(c as f64 / c_count as f64, 0.7, 0.8);
        for _ in 0..n {
            let p = box_surface_point(&mut geo, center, half);
            let mut rgb = [0.0; 3];
            for (k, b) in base.iter().enumerate() {
                let jitter: f64 = col.sample(StandardNormal);
                rgb[k] = (b + 0.03 * jitter).clamp(0.0, 1.0);
            }
            points.push(Point3D::new(p.map(S::lit), rgb.map(S::lit), Some(c))?);
        }
    }
    PointCloud::new(points)
}

fn synth_views<S: Scalar>(spec: &SceneSpec) -> Result<Vec<CameraView<S>>> {
    let scale = (spec.classes as f64 / 8.0).max(1.0);
    let focal = 0.5 * spec.width.min(spec.height) as f64 / 22f64.to_radians().tan();
    (0..spec.views)
        .map(|k| {
            let phi = std::f64::consts::TAU * k as f64 / spec.views as f64 + 0.3;
            let eye = [5.0 * scale * phi.cos(), 5.0 * scale * phi.sin(), 3.0 * scale];
            let m = look_at(eye, [0.0, 0.0, 0.3], focal, spec.width, spec.height);
            CameraView::new(format!("v{k}"), spec.width, spec.height, m.map(|row| row.map(S::lit)))
        })
        .collect()
}

fn visible_classes<S: Scalar>(scene: &Scene<S>, view: &CameraView<S>, classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; classes];
    for hit in scene::visible_points(scene.cloud(), view, S::lit(scene::DEFAULT_DEPTH_TOL)) {
        if let Some(c) = scene.cloud().points()[hit.point_index].gt_label {
            counts[c] += 1;
        }
    }
    counts
}

/// Builds a complete synthetic scene; a pure function of `spec`.
pub fn generate<S: Scalar>(spec: &SceneSpec) -> Result<SynthScene<S>> {
    spec.validate()?;
    let scene = Scene::new(synth_cloud(spec)?, synth_views(spec)?)?;
    let class_names: Vec<String> = (0..spec.classes).map(class_name).collect();

    let mut cfg = SynthConfig::new(spec.seed, spec.dim, spec.classes, spec.noise_sigma);
    cfg.orthogonalize = spec.orthogonalize;
    let mut bank = embedding::synth_bank::<S>(&cfg)?;
    let prototypes: Vec<Vec<S>> = (0..spec.classes).map(|c| bank.vector(c).to_vec()).collect();
    // The synthetic text encoder maps a class name onto its prototype.
    for (name, proto) in class_names.iter().zip(&prototypes) {
        bank.push(name.clone(), EntryKind::Tag, EmbeddingVector::from_unit(proto.clone())?)?;
    }
    let mut vocab_rng = rng::stream(spec.seed, "vocab");
    for word in NOISE_WORDS.iter().chain([&HALLUCINATED_TAG]) {
        bank.push(
            *word,
            EntryKind::Tag,
            EmbeddingVector::from_unit(random_unit(&mut vocab_rng, spec.dim))?,
        )?;
    }

    let mut clip_maps = Vec::with_capacity(spec.views);
    let mut mask_maps = Vec::with_capacity(spec.views);
    for view in scene.views() {
        let (clip, mask) = embedding::synth_feature_maps(&scene, view, &bank, spec.noise_sigma, spec.seed)?;
        clip_maps.push(clip);
        mask_maps.push(mask);
    }

    let mut tag_rng = rng::stream(spec.seed, "tags");
    let mut hallucinated: Vec<usize> = (0..spec.views).collect();
    hallucinated.shuffle(&mut tag_rng);
    hallucinated.truncate(text::effective_min_views(spec.min_views, spec.views) - 1);
    let mut caption_rng = rng::stream(spec.seed, "captions");
    let mut view_tags = Vec::with_capacity(spec.views);
    let mut captions = Vec::new();
    for (k, view) in scene.views().iter().enumerate() {
        let counts = visible_classes(&scene, view, spec.classes);
        let mut tags: Vec<String> = (0..spec.classes)
            .filter(|&c| counts[c] >= TAG_MIN_POINTS)
            .map(|c| class_names[c].clone())
            .collect();
        tags.push(NOISE_WORDS[0].to_string());
        for word in &NOISE_WORDS[1..] {
            if tag_rng.random::<bool>() {
                tags.push(word.to_string());
            }
        }
        if hallucinated.contains(&k) {
            tags.push(HALLUCINATED_TAG.to_string());
        }
        tags.shuffle(&mut tag_rng);
        view_tags.push(ViewTags::new(view.view_id(), tags)?);

        // One caption per view, describing its most visible class.
        let (dominant, &n) = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        if n == 0 {
            continue;
        }
        let raw = gaussian_vec::<S>(&mut caption_rng, spec.dim);
        let mut v: Vec<S> = match orthonormalize_against(&raw, &prototypes) {
            Some(r) => prototypes[dominant]
                .iter()
                .zip(&r)
                .map(|(&p, &ri)| S::lit(0.8) * p + S::lit(0.6) * ri)
                .collect(),
            None => prototypes[dominant].clone(),
        };
        normalize_into(&mut v)?;
        let name = format!("caption_{}", view.view_id());
        bank.push(name.clone(), EntryKind::Caption, EmbeddingVector::from_unit(v)?)?;
        captions.push(Caption {
            view_id: view.view_id().to_string(),
            text: format!("a {} in the room", class_names[dominant]),
            embedding: Some(name),
        });
    }

    Ok(SynthScene {
        scene,
        class_names,
        bank,
        clip_maps,
        mask_maps,
        view_tags,
        captions: CaptionSet::new(captions)?,
        stoplist: Stoplist::new(NOISE_WORDS),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{project_point, visibility_counts};

    #[test]
    fn look_at_centers_target() {
        let m = look_at([5.0, 0.0, 3.0], [0.0, 0.0, 0.0], 30.0, 32, 32);
        let view = CameraView::new("v", 32, 32, m).unwrap();
        let p = Point3D::new([0.0, 0.0, 0.0], [0.5; 3], None).unwrap();
        let hit = project_point(0, &p, &view).unwrap();
        assert!((hit.u - 16.0).abs() < 1e-9 && (hit.v - 16.0).abs() < 1e-9);
        assert!((hit.depth - 34f64.sqrt()).abs() < 1e-9);
        // Higher points appear higher in the image (smaller v).
        let up = Point3D::new([0.0, 0.0, 1.0], [0.5; 3], None).unwrap();
        assert!(project_point(0, &up, &view).unwrap().v < 16.0);
    }

    #[test]
    fn deterministic_and_complete() {
        let spec = SceneSpec::default();
        let a = generate::<f64>(&spec).unwrap();
        let b = generate::<f64>(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scene.cloud().len(), 200);
        assert_eq!(a.scene.views().len(), 6);
        let counts = visibility_counts(&a.scene, scene::DEFAULT_DEPTH_TOL);
        let seen = counts.iter().filter(|&&c| c > 0).count();
        assert!(seen >= 190, "only {seen} points visible");
        let other = generate::<f64>(&SceneSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.scene, other.scene);
    }

    #[test]
    fn vocabulary_survives_filter_and_vote() {
        let s = generate::<f64>(&SceneSpec::default()).unwrap();
        let filtered: Vec<ViewTags> = s
            .view_tags
            .iter()
            .map(|v| text::filter_tags(v, &s.stoplist).0)
            .collect();
        let voted = text::multi_view_vote(&filtered, 5).unwrap();
        assert!(!voted
            .tags()
            .iter()
            .any(|t| t == HALLUCINATED_TAG || NOISE_WORDS.contains(&t.as_str())));
        assert!(voted.tags().len() >= 6);
        let raw_votes = s
            .view_tags
            .iter()
            .filter(|v| v.tags().iter().any(|t| t == HALLUCINATED_TAG))
            .count();
        assert_eq!(raw_votes, 4);
    }

    #[test]
    fn captions_resolve() {
        let s = generate::<f64>(&SceneSpec::default()).unwrap();
        let caps = s.captions.associate(&s.bank).unwrap();
        assert_eq!(caps.len(), s.captions.captions().len());
        for e in caps.entries() {
            let proto_sim = (0..8)
                .map(|c| crate::scalar::dot(e.vector.as_slice(), s.bank.vector(c)))
                .fold(f64::MIN, f64::max);
            assert!((proto_sim - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate::<f64>(&SceneSpec {
            classes: 20,
            dim: 16,
            ..SceneSpec::default()
        })
        .is_err());
        let loose = SceneSpec {
            classes: 20,
            dim: 16,
            orthogonalize: false,
            ..SceneSpec::default()
        };
        assert!(generate::<f64>(&loose).is_ok());
        assert!(generate::<f64>(&SceneSpec {
            points: 3,
            ..SceneSpec::default()
        })
        .is_err());
    }
}
