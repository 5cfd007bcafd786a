//! Dense cross-modal correspondences.
//!
//! Pixels are scored against text embeddings, scores are carried onto points
//! through every view that sees them, and the averaged scores are
//! thresholded into multi-label maps. Pixel embeddings are fused per point
//! the same way.

use std::fmt;
use std::path::Path;

use crate::embedding::{EmbeddingBank, FeatureMap2D, MIN_NORM};
use crate::error::{Error, Result};
use crate::format::{self, parse_value, LineReader};
use crate::scalar::{self, sigmoid, Scalar};
use crate::scene::{visible_points, Scene, DEFAULT_DEPTH_TOL};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationConfig<S: Scalar> {
    /// Temperature of the pixel-text sigmoid.
    pub tau1: S,
    /// Strict cutoff on aggregated scores.
    pub threshold: S,
    pub depth_tol: S,
}

impl<S: Scalar> Default for AssociationConfig<S> {
    fn default() -> Self {
        Self {
            tau1: S::lit(DEFAULT_TAU),
            threshold: S::lit(DEFAULT_THRESHOLD),
            depth_tol: S::lit(DEFAULT_DEPTH_TOL),
        }
    }
}

impl<S: Scalar> AssociationConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > S::zero() && self.tau1.is_finite()) {
            return Err(Error::Invalid(format!("tau1 {} must be positive", self.tau1)));
        }
        check_threshold(self.threshold)?;
        if !(self.depth_tol >= S::zero() && self.depth_tol.is_finite()) {
            return Err(Error::Invalid(format!("depth_tol {} must be >= 0", self.depth_tol)));
        }
        Ok(())
    }
}

fn check_threshold<S: Scalar>(threshold: S) -> Result<()> {
    if threshold >= S::zero() && threshold <= S::one() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("threshold {threshold} outside [0,1]")))
    }
}

/// Per-pixel class scores, `height × width × classes`, class order = bank order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap2D<S: Scalar> {
    pub view_id: String,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> ScoreMap2D<S> {
    pub fn pixel(&self, row: usize, col: usize) -> &[S] {
        let start = (row * self.width + col) * self.classes;
        &self.data[start..start + self.classes]
    }
}

/// `S[u,v,c] = sigmoid(cos(f(u,v), t_c) / tau1)`.
pub fn score_map_2d<S: Scalar>(features: &FeatureMap2D<S>, bank: &EmbeddingBank<S>, tau1: S) -> Result<ScoreMap2D<S>> {
    if features.dim() != bank.dim() {
        return Err(Error::Dimension {
            context: "score map (feature vs text dim)",
            expected: bank.dim(),
            found: features.dim(),
        });
    }
    if !(tau1 > S::zero()) {
        return Err(Error::Invalid(format!("tau1 {tau1} must be positive")));
    }
    let classes = bank.len();
    let text = bank.matrix();
    let dim = bank.dim();
    let mut data = Vec::with_capacity(features.height() * features.width() * classes);
    for px in features.pixels() {
        for t in text.chunks_exact(dim) {
            let cos = scalar::dot(px, t).max(-S::one()).min(S::one());
            data.push(sigmoid(cos / tau1));
        }
    }
    Ok(ScoreMap2D {
        view_id: features.view_id().to_string(),
        height: features.height(),
        width: features.width(),
        classes,
        data,
    })
}

/// Mean per-point scores over the views that see each point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointScores3D<S: Scalar> {
    pub classes: usize,
    /// Row-major `N × classes`; zero rows where `counts[i] == 0`.
    pub scores: Vec<S>,
    pub counts: Vec<usize>,
}

impl<S: Scalar> PointScores3D<S> {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.scores[i * self.classes..(i + 1) * self.classes]
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.counts[i] > 0
    }
}

/// Checks that `maps` pair one-to-one with the scene views and match their image size.
fn check_view_pairing<S: Scalar>(
    scene: &Scene<S>,
    ids_sizes: impl ExactSizeIterator<Item = (String, usize, usize)>,
) -> Result<()> {
    if ids_sizes.len() != scene.views().len() {
        return Err(Error::Shape(format!(
            "expected one map per view ({}), got {}",
            scene.views().len(),
            ids_sizes.len()
        )));
    }
    for (view, (id, h, w)) in scene.views().iter().zip(ids_sizes) {
        if view.view_id() != id || view.height() != h || view.width() != w {
            return Err(Error::Shape(format!(
                "map for view {id} ({h}x{w}) does not match view {} ({}x{})",
                view.view_id(),
                view.height(),
                view.width()
            )));
        }
    }
    Ok(())
}

pub fn aggregate_scores_3d<S: Scalar>(
    scene: &Scene<S>,
    maps: &[ScoreMap2D<S>],
    cfg: &AssociationConfig<S>,
) -> Result<PointScores3D<S>> {
    cfg.validate()?;
    check_view_pairing(scene, maps.iter().map(|m| (m.view_id.clone(), m.height, m.width)))?;
    let classes = maps.first().map_or(0, |m| m.classes);
    if let Some(m) = maps.iter().find(|m| m.classes != classes) {
        return Err(Error::Dimension {
            context: "score map classes",
            expected: classes,
            found: m.classes,
        });
    }
    let n = scene.cloud().len();
    let mut scores = vec![S::zero(); n * classes];
    let mut counts = vec![0usize; n];
    for (view, map) in scene.views().iter().zip(maps) {
        for hit in visible_points(scene.cloud(), view, cfg.depth_tol) {
            let (r, c) = hit.cell();
            let row = &mut scores[hit.point_index * classes..(hit.point_index + 1) * classes];
            row.iter_mut().zip(map.pixel(r, c)).for_each(|(acc, &s)| *acc += s);
            counts[hit.point_index] += 1;
        }
    }
    for (row, &count) in scores.chunks_exact_mut(classes.max(1)).zip(&counts) {
        if count > 0 {
            let k = S::from_count(count);
            row.iter_mut().for_each(|v| *v = *v / k);
        }
    }
    Ok(PointScores3D {
        classes,
        scores,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Tag,
    Caption,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Tag => "tag",
            LabelSource::Caption => "caption",
        }
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary `N × classes` multi-label map. Unlabeled rows are all zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap3D {
    pub classes: usize,
    pub source: LabelSource,
    pub bits: Vec<u8>,
    pub labeled: Vec<bool>,
}

impl LabelMap3D {
    pub fn len(&self) -> usize {
        self.labeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labeled.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.bits[i * self.classes..(i + 1) * self.classes]
    }

    pub fn get(&self, i: usize, c: usize) -> bool {
        self.bits[i * self.classes + c] == 1
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }

    /// Points (labeled) that are positive for class `c`.
    pub fn positives(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled[i] && self.get(i, c)).collect()
    }
}

/// `M[i,c] = 1` iff `score > threshold` (strict), for every class; no argmax.
pub fn build_label_map<S: Scalar>(scores: &PointScores3D<S>, threshold: S, source: LabelSource) -> Result<LabelMap3D> {
    check_threshold(threshold)?;
    let labeled: Vec<bool> = scores.counts.iter().map(|&c| c > 0).collect();
    let mut bits = vec![0u8; scores.scores.len()];
    for (i, &is_labeled) in labeled.iter().enumerate() {
        if !is_labeled {
            continue;
        }
        for (b, &s) in bits[i * scores.classes..(i + 1) * scores.classes]
            .iter_mut()
            .zip(scores.row(i))
        {
            *b = u8::from(s > threshold);
        }
    }
    Ok(LabelMap3D {
        classes: scores.classes,
        source,
        bits,
        labeled,
    })
}

/// Per-view pixelwise binary mask, `height × width × classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap2D {
    pub view_id: String,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub bits: Vec<u8>,
}

pub fn build_2d_label_map<S: Scalar>(scores: &ScoreMap2D<S>, threshold: S) -> Result<LabelMap2D> {
    check_threshold(threshold)?;
    Ok(LabelMap2D {
        view_id: scores.view_id.clone(),
        height: scores.height,
        width: scores.width,
        classes: scores.classes,
        bits: scores.data.iter().map(|&s| u8::from(s > threshold)).collect(),
    })
}

/// Per-point mean of visible pixel embeddings, renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPointFeatures<S: Scalar> {
    pub dim: usize,
    /// Row-major `N × dim`; zero rows where `counts[i] == 0`.
    pub data: Vec<S>,
    pub counts: Vec<usize>,
}

impl<S: Scalar> FusedPointFeatures<S> {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn fuse_2d_features<S: Scalar>(
    scene: &Scene<S>,
    maps: &[FeatureMap2D<S>],
    cfg: &AssociationConfig<S>,
) -> Result<FusedPointFeatures<S>> {
    cfg.validate()?;
    check_view_pairing(
        scene,
        maps.iter().map(|m| (m.view_id().to_string(), m.height(), m.width())),
    )?;
    let dim = maps.first().map_or(0, |m| m.dim());
    if let Some(m) = maps.iter().find(|m| m.dim() != dim) {
        return Err(Error::Dimension {
            context: "feature map dim",
            expected: dim,
            found: m.dim(),
        });
    }
    let n = scene.cloud().len();
    let mut data = vec![S::zero(); n * dim];
    let mut counts = vec![0usize; n];
    for (view, map) in scene.views().iter().zip(maps) {
        for hit in visible_points(scene.cloud(), view, cfg.depth_tol) {
            let (r, c) = hit.cell();
            let row = &mut data[hit.point_index * dim..(hit.point_index + 1) * dim];
            row.iter_mut().zip(map.pixel(r, c)).for_each(|(acc, &f)| *acc += f);
            counts[hit.point_index] += 1;
        }
    }
    let mut degenerate = Vec::new();
    for (i, (row, &count)) in data.chunks_exact_mut(dim.max(1)).zip(&counts).enumerate() {
        if count == 0 {
            continue;
        }
        let k = S::from_count(count);
        row.iter_mut().for_each(|v| *v = *v / k);
        let n = scalar::norm(row);
        if n < S::lit(MIN_NORM) {
            degenerate.push(i);
        } else {
            row.iter_mut().for_each(|v| *v = *v / n);
        }
    }
    if !degenerate.is_empty() {
        return Err(Error::DegenerateFusion { points: degenerate });
    }
    Ok(FusedPointFeatures { dim, data, counts })
}

const LBL_FORMAT: &str = "DMA-LBL";
const LBL_HEADER: &str = "DMA-LBL v1";

pub fn format_label_map(map: &LabelMap3D) -> String {
    let mut out = format!(
        "{LBL_HEADER}\npoints {} classes {} source {}\n",
        map.len(),
        map.classes,
        map.source
    );
    for i in 0..map.len() {
        let mut cells: Vec<&str> = Vec::with_capacity(map.classes + 1);
        if !map.labeled[i] {
            cells.push("x");
        }
        cells.extend(map.row(i).iter().map(|&b| if b == 1 { "1" } else { "0" }));
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_label_map(text: &str) -> Result<LabelMap3D> {
    let mut lines = LineReader::new(LBL_FORMAT, text);
    lines.expect_header(LBL_HEADER)?;
    let (hn, header) = lines.expect_line("shape line")?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 6 || tokens[0] != "points" || tokens[2] != "classes" || tokens[4] != "source" {
        return Err(Error::parse(
            LBL_FORMAT,
            hn,
            "expected `points N classes C source <tag|caption>`",
        ));
    }
    let n: usize = parse_value(LBL_FORMAT, hn, tokens[1], "point count")?;
    let classes: usize = parse_value(LBL_FORMAT, hn, tokens[3], "class count")?;
    let source = match tokens[5] {
        "tag" => LabelSource::Tag,
        "caption" => LabelSource::Caption,
        other => return Err(Error::parse(LBL_FORMAT, hn, format!("unknown source {other:?}"))),
    };
    let mut bits = Vec::with_capacity(n * classes);
    let mut labeled = Vec::with_capacity(n);
    while let Some((ln, line)) = lines.next_line() {
        let mut tokens: Vec<&str> = line.split_whitespace().collect();
        let is_labeled = tokens.first() != Some(&"x");
        if !is_labeled {
            tokens.remove(0);
        }
        if tokens.len() != classes {
            return Err(Error::Count {
                format: LBL_FORMAT,
                line: ln,
                what: "label columns",
                expected: classes,
                found: tokens.len(),
            });
        }
        for t in tokens {
            let b = match t {
                "0" => 0,
                "1" if is_labeled => 1,
                "1" => return Err(Error::parse(LBL_FORMAT, ln, "unlabeled row with positive entries")),
                other => return Err(Error::parse(LBL_FORMAT, ln, format!("invalid label {other:?}"))),
            };
            bits.push(b);
        }
        labeled.push(is_labeled);
    }
    if labeled.len() != n {
        return Err(Error::Count {
            format: LBL_FORMAT,
            line: hn,
            what: "rows",
            expected: n,
            found: labeled.len(),
        });
    }
    Ok(LabelMap3D {
        classes,
        source,
        bits,
        labeled,
    })
}

pub fn save_label_map(map: &LabelMap3D, path: &Path) -> Result<()> {
    format::write_file(path, &format_label_map(map))
}

pub fn load_label_map(path: &Path) -> Result<LabelMap3D> {
    parse_label_map(&format::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{normalize, EntryKind, FeaturePath};
    use crate::scene::{CameraView, Point3D, PointCloud};
    use proptest::prelude::*;

    fn unit_map(id: &str, h: usize, w: usize, px: &[Vec<f64>]) -> FeatureMap2D<f64> {
        let dim = px[0].len();
        let data = px.iter().flat_map(|p| normalize(p).unwrap().into_inner()).collect();
        FeatureMap2D::new(id, h, w, dim, FeaturePath::Clip, data).unwrap()
    }

    fn basis_bank() -> EmbeddingBank<f64> {
        let mut bank = EmbeddingBank::new(2);
        bank.push("a", EntryKind::Tag, normalize(&[1.0, 0.0]).unwrap()).unwrap();
        bank.push("b", EntryKind::Tag, normalize(&[0.0, 1.0]).unwrap()).unwrap();
        bank
    }

    #[test]
    fn score_map_values() {
        let map = unit_map("v", 1, 1, &[vec![1.0, 0.0]]);
        let s = score_map_2d(&map, &basis_bank(), 0.1).unwrap();
        assert!((s.data[0] - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-15);
        assert!((s.data[0] - 0.9999546).abs() < 1e-7);
        assert_eq!(s.data[1], 0.5);
        let wrong = unit_map("v", 1, 1, &[vec![1.0, 0.0, 0.0]]);
        assert!(matches!(
            score_map_2d(&wrong, &basis_bank(), 0.1),
            Err(Error::Dimension { .. })
        ));
    }

    fn two_view_scene() -> Scene<f64> {
        let t = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let pts = vec![
            Point3D::new([0.5, 0.5, 1.0], [0.0; 3], None).unwrap(),
            Point3D::new([1.5, 0.5, 1.0], [0.0; 3], None).unwrap(),
            Point3D::new([0.0, 0.0, -1.0], [0.0; 3], None).unwrap(),
        ];
        let views = vec![
            CameraView::new("v0", 2, 1, t).unwrap(),
            CameraView::new("v1", 2, 1, t).unwrap(),
        ];
        Scene::new(PointCloud::new(pts).unwrap(), views).unwrap()
    }

    fn score(id: &str, rows: &[[f64; 2]]) -> ScoreMap2D<f64> {
        ScoreMap2D {
            view_id: id.into(),
            height: 1,
            width: 2,
            classes: 2,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    #[test]
    fn aggregation_means_and_unlabeled() {
        let scene = two_view_scene();
        let maps = vec![
            score("v0", &[[0.4, 0.9], [0.2, 0.2]]),
            score("v1", &[[0.6, 0.7], [0.3, 0.1]]),
        ];
        let agg = aggregate_scores_3d(&scene, &maps, &AssociationConfig::default()).unwrap();
        assert_eq!(agg.counts, vec![2, 2, 0]);
        assert!((agg.row(0)[0] - 0.5).abs() < 1e-15);
        assert!((agg.row(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(agg.row(2), &[0.0, 0.0]);
        let single = aggregate_scores_3d(
            &Scene::new(scene.cloud().clone(), vec![scene.views()[0].clone()]).unwrap(),
            &maps[..1],
            &AssociationConfig::default(),
        )
        .unwrap();
        assert_eq!(single.row(1), &[0.2, 0.2]);
        assert!(aggregate_scores_3d(&scene, &maps[..1], &AssociationConfig::default()).is_err());
        let swapped = vec![maps[1].clone(), maps[0].clone()];
        assert!(aggregate_scores_3d(&scene, &swapped, &AssociationConfig::default()).is_err());
    }

    #[test]
    fn multi_label_rows() {
        let scores = PointScores3D {
            classes: 3,
            scores: vec![0.9, 0.7, 0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 0.0],
            counts: vec![1, 3, 0],
        };
        let m = build_label_map(&scores, 0.5, LabelSource::Tag).unwrap();
        assert_eq!(m.row(0), &[1, 1, 0]);
        assert_eq!(m.row(1), &[0, 0, 0]);
        assert_eq!(m.labeled, vec![true, true, false]);
        let all = build_label_map(&scores, 0.0, LabelSource::Tag).unwrap();
        assert_eq!(all.row(1), &[1, 1, 1]);
        assert_eq!(all.row(2), &[0, 0, 0]);
        // Strict comparison.
        let edge = build_label_map(&scores, 0.7, LabelSource::Tag).unwrap();
        assert_eq!(edge.row(0), &[1, 0, 0]);
        assert!(build_label_map(&scores, 1.5, LabelSource::Tag).is_err());
    }

    #[test]
    fn pixel_masks() {
        let s = score("v", &[[0.6, 0.4], [0.5, 0.51]]);
        assert_eq!(build_2d_label_map(&s, 0.5).unwrap().bits, vec![1, 0, 0, 1]);
        assert!(build_2d_label_map(&s, 1.0).unwrap().bits.iter().all(|&b| b == 0));
    }

    #[test]
    fn fusion_examples() {
        let scene = two_view_scene();
        let a = unit_map("v0", 1, 2, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = unit_map("v1", 1, 2, &[vec![0.0, 1.0], vec![0.0, 1.0]]);
        let fused = fuse_2d_features(&scene, &[a.clone(), b], &AssociationConfig::default()).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((fused.row(0)[0] - h).abs() < 1e-15 && (fused.row(0)[1] - h).abs() < 1e-15);
        assert_eq!(fused.row(1), &[0.0, 1.0]);
        assert_eq!(fused.counts, vec![2, 2, 0]);
        let same = fuse_2d_features(
            &scene,
            &[a.clone(), a.clone().with_path(FeaturePath::Mask)],
            &Default::default(),
        );
        assert!(same.is_err(), "view ids must match");
        let anti = unit_map("v1", 1, 2, &[vec![-1.0, 0.0], vec![0.0, 1.0]]);
        match fuse_2d_features(&scene, &[a, anti], &AssociationConfig::default()) {
            Err(Error::DegenerateFusion { points }) => assert_eq!(points, vec![0]),
            other => panic!("expected degenerate fusion, got {other:?}"),
        }
    }

    #[test]
    fn label_file_round_trip_and_errors() {
        let m = LabelMap3D {
            classes: 2,
            source: LabelSource::Caption,
            bits: vec![1, 0, 0, 0, 1, 1],
            labeled: vec![true, false, true],
        };
        let text = format_label_map(&m);
        assert!(text.contains("\nx 0 0\n"));
        assert_eq!(parse_label_map(&text).unwrap(), m);
        let bad = text.replacen("1 1\n", "1 1 1\n", 1);
        assert!(matches!(parse_label_map(&bad), Err(Error::Count { line: 5, .. })));
        assert!(parse_label_map(&text.replacen("points 3", "points 4", 1)).is_err());
    }

    proptest! {
        #[test]
        fn raising_threshold_never_adds_labels(
            raw in proptest::collection::vec(0.0f64..1.0, 12),
            t1 in 0.0f64..1.0, dt in 0.0f64..0.5,
        ) {
            let scores = PointScores3D { classes: 3, scores: raw, counts: vec![1, 2, 0, 1] };
            let lo = build_label_map(&scores, t1, LabelSource::Tag).unwrap();
            let hi = build_label_map(&scores, (t1 + dt).min(1.0), LabelSource::Tag).unwrap();
            for (a, b) in lo.bits.iter().zip(&hi.bits) {
                prop_assert!(b <= a);
            }
        }

        #[test]
        fn scores_increase_with_cosine(c1 in -1.0f64..1.0, c2 in -1.0f64..1.0, tau in 0.05f64..1.0) {
            prop_assume!(c1 < c2);
            let s = |c: f64| {
                let map = unit_map("v", 1, 1, &[vec![c, (1.0 - c * c).max(0.0).sqrt()]]);
                score_map_2d(&map, &basis_bank(), tau).unwrap().data[0]
            };
            prop_assert!(s(c1) <= s(c2));
            if c2 - c1 > 1e-6 && (c2 / tau) < 30.0 {
                prop_assert!(s(c1) < s(c2));
            }
        }

        #[test]
        fn class_permutation_permutes_columns(px in proptest::collection::vec(-1.0f64..1.0, 2 * 3)) {
            prop_assume!(px.chunks(3).all(|p| p.iter().map(|v| v * v).sum::<f64>() > 1e-3));
            let map = FeatureMap2D::new("v", 1, 2, 3, FeaturePath::Clip,
                px.chunks(3).flat_map(|p| normalize(p).unwrap().into_inner()).collect()).unwrap();
            let mut bank = EmbeddingBank::new(3);
            for (name, v) in [("a", [1.0, 0.2, 0.0]), ("b", [0.0, 1.0, 0.3]), ("c", [0.5, 0.0, 1.0])] {
                bank.push(name, EntryKind::Tag, normalize(&v).unwrap()).unwrap();
            }
            let perm = ["c", "a", "b"];
            let permuted = bank.select(perm).unwrap();
            let s = score_map_2d(&map, &bank, 0.1).unwrap();
            let sp = score_map_2d(&map, &permuted, 0.1).unwrap();
            for p in 0..2 {
                for (k, name) in perm.iter().enumerate() {
                    let c = bank.position(name).unwrap();
                    prop_assert_eq!(sp.data[p * 3 + k], s.data[p * 3 + c]);
                }
            }
        }

        #[test]
        fn aggregated_scores_within_view_bounds(raw in proptest::collection::vec(0.01f64..0.99, 8)) {
            let scene = two_view_scene();
            let maps = vec![
                score("v0", &[[raw[0], raw[1]], [raw[2], raw[3]]]),
                score("v1", &[[raw[4], raw[5]], [raw[6], raw[7]]]),
            ];
            let agg = aggregate_scores_3d(&scene, &maps, &AssociationConfig::default()).unwrap();
            for i in 0..2 {
                for c in 0..2 {
                    let a = maps[0].pixel(0, i)[c];
                    let b = maps[1].pixel(0, i)[c];
                    let v = agg.row(i)[c];
                    prop_assert!(v >= a.min(b) - 1e-15 && v <= a.max(b) + 1e-15);
                }
            }
        }
    }
}
