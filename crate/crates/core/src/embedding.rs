//! Text embeddings, class prototypes, per-view pixel feature maps, and the
//! seeded generators that stand in for pretrained encoders.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::format::{self, check_identifier, parse_scalars, parse_value, LineReader};
use crate::rng::{self, StreamRng};
use crate::scalar::{self, Scalar};
use crate::scene::{visible_points, CameraView, Scene, DEFAULT_DEPTH_TOL};

/// Tolerance on the norm of anything stored as an embedding.
pub const UNIT_TOL: f64 = 1e-6;
/// Norms below this cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;
pub const DEFAULT_DIM: usize = 16;
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Unit-norm vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<S: Scalar>(Vec<S>);

impl<S: Scalar> EmbeddingVector<S> {
    /// Wraps values that are already unit-norm (within [`UNIT_TOL`]).
    pub fn from_unit(values: Vec<S>) -> Result<Self> {
        if values.is_empty() || !scalar::all_finite(&values) {
            return Err(Error::Invalid("embedding must be nonempty and finite".into()));
        }
        let n = scalar::norm(&values);
        if (n - S::one()).abs() > S::lit(UNIT_TOL) {
            return Err(Error::Invalid(format!("embedding norm {n} is not 1")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }
}

pub fn normalize<S: Scalar>(v: &[S]) -> Result<EmbeddingVector<S>> {
    if v.is_empty() || !scalar::all_finite(v) {
        return Err(Error::Invalid("cannot normalize empty or non-finite vector".into()));
    }
    let n = scalar::norm(v);
    if n < S::lit(MIN_NORM) {
        return Err(Error::ZeroNorm("normalize".into()));
    }
    Ok(EmbeddingVector(v.iter().map(|&x| x / n).collect()))
}

/// Normalizes in place; used on hot paths where allocation matters.
pub(crate) fn normalize_into<S: Scalar>(v: &mut [S]) -> Result<()> {
    let n = scalar::norm(v);
    if !(n >= S::lit(MIN_NORM)) {
        return Err(Error::ZeroNorm("normalize".into()));
    }
    v.iter_mut().for_each(|x| *x = *x / n);
    Ok(())
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine<S: Scalar>(a: &EmbeddingVector<S>, b: &EmbeddingVector<S>) -> Result<S> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn cosine_slices<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "cosine",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(scalar::dot(a, b).max(-S::one()).min(S::one()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Tag,
    Caption,
    Prototype,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Tag => "tag",
            EntryKind::Caption => "caption",
            EntryKind::Prototype => "prototype",
        }
    }
}

impl std::str::FromStr for EntryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tag" => Ok(EntryKind::Tag),
            "caption" => Ok(EntryKind::Caption),
            "prototype" => Ok(EntryKind::Prototype),
            other => Err(Error::Invalid(format!("unknown entry kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry<S: Scalar> {
    pub name: String,
    pub kind: EntryKind,
    pub vector: EmbeddingVector<S>,
}

/// Ordered named embeddings. Entry order defines class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank<S: Scalar> {
    dim: usize,
    entries: Vec<BankEntry<S>>,
}

impl<S: Scalar> EmbeddingBank<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(dim: usize, entries: Vec<BankEntry<S>>) -> Result<Self> {
        let mut bank = Self::new(dim);
        for e in entries {
            bank.push(e.name, e.kind, e.vector)?;
        }
        Ok(bank)
    }

    pub fn push(&mut self, name: impl Into<String>, kind: EntryKind, vector: EmbeddingVector<S>) -> Result<()> {
        let name = name.into();
        check_identifier(&name)?;
        if vector.dim() != self.dim {
            return Err(Error::Dimension {
                context: "embedding bank",
                expected: self.dim,
                found: vector.dim(),
            });
        }
        if self.position(&name).is_some() {
            return Err(Error::Duplicate(format!("bank entry {name}")));
        }
        self.entries.push(BankEntry { name, kind, vector });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BankEntry<S>] {
        &self.entries
    }

    pub fn vector(&self, index: usize) -> &[S] {
        self.entries[index].vector.as_slice()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&BankEntry<S>> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Entries of one kind, in bank order.
    pub fn of_kind(&self, kind: EntryKind) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().filter(|e| e.kind == kind).cloned().collect(),
        }
    }

    /// Sub-bank with the named entries in the given order.
    pub fn select<I, N>(&self, names: I) -> Result<Self>
    where
        I: IntoIterator<Item = N>,
        N: AsRef<str>,
    {
        let mut out = Self::new(self.dim);
        for name in names {
            let name = name.as_ref();
            let e = self
                .get(name)
                .ok_or_else(|| Error::Missing(format!("embedding {name:?} not in bank")))?;
            out.push(e.name.clone(), e.kind, e.vector.clone())?;
        }
        Ok(out)
    }

    /// Row-major `len × dim` copy of all vectors.
    pub fn matrix(&self) -> Vec<S> {
        self.entries
            .iter()
            .flat_map(|e| e.vector.as_slice().iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub dim: usize,
    pub class_count: usize,
    pub noise_sigma: f64,
    /// Gram–Schmidt the class prototypes; requires `dim >= class_count`.
    pub orthogonalize: bool,
}

impl SynthConfig {
    pub fn new(seed: u64, dim: usize, class_count: usize, noise_sigma: f64) -> Self {
        Self {
            seed,
            dim,
            class_count,
            noise_sigma,
            orthogonalize: true,
        }
    }
}

pub(crate) fn gaussian_vec<S: Scalar>(rng: &mut StreamRng, dim: usize) -> Vec<S> {
    (0..dim).map(|_| S::lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

pub(crate) fn random_unit<S: Scalar>(rng: &mut StreamRng, dim: usize) -> Vec<S> {
    loop {
        let mut v = gaussian_vec(rng, dim);
        if normalize_into(&mut v).is_ok() {
            return v;
        }
    }
}

/// Modified Gram–Schmidt with one reorthogonalization pass. Returns the
/// unit component of `v` orthogonal to `basis`, or `None` if degenerate.
pub(crate) fn orthonormalize_against<S: Scalar>(v: &[S], basis: &[Vec<S>]) -> Option<Vec<S>> {
    let mut w = v.to_vec();
    for _ in 0..2 {
        for b in basis {
            let proj = scalar::dot(&w, b);
            w.iter_mut().zip(b).for_each(|(x, &bi)| *x -= proj * bi);
        }
    }
    normalize_into(&mut w).ok().map(|_| w)
}

/// Deterministic class prototype bank, entries named `class_<c>`.
pub fn synth_bank<S: Scalar>(cfg: &SynthConfig) -> Result<EmbeddingBank<S>> {
    let names: Vec<String> = (0..cfg.class_count).map(|c| format!("class_{c}")).collect();
    synth_named_bank(cfg, &names)
}

/// As [`synth_bank`] with caller-chosen entry names (`names.len()` classes).
pub fn synth_named_bank<S: Scalar>(cfg: &SynthConfig, names: &[String]) -> Result<EmbeddingBank<S>> {
    if cfg.dim == 0 {
        return Err(Error::Invalid("embedding dimension must be positive".into()));
    }
    if cfg.orthogonalize && cfg.dim < names.len() {
        return Err(Error::Invalid(format!(
            "cannot orthogonalize {} prototypes in dimension {}",
            names.len(),
            cfg.dim
        )));
    }
    let mut rng = rng::stream(cfg.seed, "prototypes");
    let mut basis: Vec<Vec<S>> = Vec::with_capacity(names.len());
    let mut bank = EmbeddingBank::new(cfg.dim);
    for name in names {
        let v = loop {
            let raw = gaussian_vec::<S>(&mut rng, cfg.dim);
            let candidate = if cfg.orthogonalize {
                orthonormalize_against(&raw, &basis)
            } else {
                normalize(&raw).ok().map(EmbeddingVector::into_inner)
            };
            if let Some(v) = candidate {
                break v;
            }
        };
        basis.push(v.clone());
        bank.push(name.clone(), EntryKind::Prototype, EmbeddingVector(v))?;
    }
    Ok(bank)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeaturePath {
    /// Frozen open-vocabulary visual features.
    Clip,
    /// Trainable mask features.
    Mask,
    /// Convex combination of the two.
    Blend,
}

impl FeaturePath {
    pub fn as_str(self) -> &'static str {
        match self {
            FeaturePath::Clip => "clip",
            FeaturePath::Mask => "mask",
            FeaturePath::Blend => "blend",
        }
    }
}

impl fmt::Display for FeaturePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeaturePath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clip" => Ok(FeaturePath::Clip),
            "mask" => Ok(FeaturePath::Mask),
            "blend" => Ok(FeaturePath::Blend),
            other => Err(Error::Invalid(format!("unknown feature path {other:?}"))),
        }
    }
}

/// Per-view `height × width` grid of unit-norm pixel embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap2D<S: Scalar> {
    view_id: String,
    height: usize,
    width: usize,
    dim: usize,
    path: FeaturePath,
    data: Vec<S>,
}

impl<S: Scalar> FeatureMap2D<S> {
    /// `data` is row-major over pixels, `dim` values per pixel.
    pub fn new(
        view_id: impl Into<String>,
        height: usize,
        width: usize,
        dim: usize,
        path: FeaturePath,
        data: Vec<S>,
    ) -> Result<Self> {
        let view_id = view_id.into();
        check_identifier(&view_id)?;
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::Invalid(format!("feature map {view_id}: empty shape")));
        }
        if data.len() != height * width * dim {
            return Err(Error::Dimension {
                context: "feature map data",
                expected: height * width * dim,
                found: data.len(),
            });
        }
        for (p, px) in data.chunks_exact(dim).enumerate() {
            let n = scalar::norm(px);
            if !scalar::all_finite(px) || (n - S::one()).abs() > S::lit(UNIT_TOL) {
                return Err(Error::Invalid(format!(
                    "feature map {view_id}: pixel {p} has norm {n}, expected 1"
                )));
            }
        }
        Ok(Self {
            view_id,
            height,
            width,
            dim,
            path,
            data,
        })
    }

    pub fn view_id(&self) -> &str {
        &self.view_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn path(&self) -> FeaturePath {
        self.path
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[S] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, S> {
        self.data.chunks_exact(self.dim)
    }

    pub fn with_path(mut self, path: FeaturePath) -> Self {
        self.path = path;
        self
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.view_id == other.view_id
            && self.height == other.height
            && self.width == other.width
            && self.dim == other.dim
    }
}

/// Renders the ground-truth labels of visible points into a clip-path and a
/// mask-path feature map.
///
/// Covered pixels get their class prototype (from the prototype entries of
/// `bank`, in order) plus Gaussian noise, renormalized; uncovered pixels get
/// a random unit vector. The two paths draw independent noise.
pub fn synth_feature_maps<S: Scalar>(
    scene: &Scene<S>,
    view: &CameraView<S>,
    bank: &EmbeddingBank<S>,
    noise_sigma: f64,
    seed: u64,
) -> Result<(FeatureMap2D<S>, FeatureMap2D<S>)> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::Invalid(format!("noise_sigma {noise_sigma} must be >= 0")));
    }
    let labels = render_label_cells(scene, view)?;
    let prototypes = bank.of_kind(EntryKind::Prototype);
    for label in labels.iter().flatten() {
        if *label >= prototypes.len() {
            return Err(Error::Missing(format!("prototype for label {label}")));
        }
    }
    let dim = bank.dim();
    let make = |path: FeaturePath| -> Result<FeatureMap2D<S>> {
        let mut rng = rng::stream(seed, &format!("features/{}/{}", view.view_id(), path));
        let mut data = Vec::with_capacity(labels.len() * dim);
        for label in &labels {
            let noise = gaussian_vec::<S>(&mut rng, dim);
            match label {
                Some(c) if noise_sigma == 0.0 => data.extend_from_slice(prototypes.vector(*c)),
                Some(c) => {
                    let sigma = S::lit(noise_sigma);
                    let mut v: Vec<S> = prototypes
                        .vector(*c)
                        .iter()
                        .zip(&noise)
                        .map(|(&p, &n)| p + sigma * n)
                        .collect();
                    normalize_into(&mut v)?;
                    data.extend(v);
                }
                None => {
                    let mut v = noise;
                    if normalize_into(&mut v).is_err() {
                        v = random_unit(&mut rng, dim);
                    }
                    data.extend(v);
                }
            }
        }
        FeatureMap2D::new(view.view_id(), view.height(), view.width(), dim, path, data)
    };
    Ok((make(FeaturePath::Clip)?, make(FeaturePath::Mask)?))
}

/// Label of the nearest visible point per pixel (lowest point index on
/// depth ties), row-major. Requires ground-truth labels on every point.
pub fn render_label_cells<S: Scalar>(scene: &Scene<S>, view: &CameraView<S>) -> Result<Vec<Option<usize>>> {
    let points = scene.cloud().points();
    if !scene.cloud().has_gt_labels() {
        return Err(Error::Invalid("feature synthesis requires ground-truth labels".into()));
    }
    let mut best: Vec<Option<(S, usize)>> = vec![None; view.pixel_count()];
    for hit in visible_points(scene.cloud(), view, S::lit(DEFAULT_DEPTH_TOL)) {
        let (r, c) = hit.cell();
        let slot = &mut best[r * view.width() + c];
        if slot.is_none_or(|(d, _)| hit.depth < d) {
            *slot = Some((hit.depth, hit.point_index));
        }
    }
    Ok(best
        .into_iter()
        .map(|s| s.and_then(|(_, i)| points[i].gt_label))
        .collect())
}

/// Per pixel `normalize(alpha·clip + (1 − alpha)·mask)`.
pub fn blend_dual_path<S: Scalar>(clip: &FeatureMap2D<S>, mask: &FeatureMap2D<S>, alpha: S) -> Result<FeatureMap2D<S>> {
    if !clip.same_shape(mask) {
        return Err(Error::Shape(format!(
            "cannot blend {} {}x{}x{} with {} {}x{}x{}",
            clip.view_id, clip.height, clip.width, clip.dim, mask.view_id, mask.height, mask.width, mask.dim
        )));
    }
    if !(alpha >= S::zero() && alpha <= S::one()) {
        return Err(Error::Invalid(format!("alpha {alpha} outside [0,1]")));
    }
    let beta = S::one() - alpha;
    let mut data: Vec<S> = clip
        .data
        .iter()
        .zip(&mask.data)
        .map(|(&c, &m)| alpha * c + beta * m)
        .collect();
    for (p, px) in data.chunks_exact_mut(clip.dim).enumerate() {
        normalize_into(px).map_err(|_| Error::ZeroNorm(format!("blend of view {} at pixel {p}", clip.view_id)))?;
    }
    FeatureMap2D::new(
        clip.view_id.clone(),
        clip.height,
        clip.width,
        clip.dim,
        FeaturePath::Blend,
        data,
    )
}

const EMB_FORMAT: &str = "DMA-EMB";
const EMB_HEADER: &str = "DMA-EMB v1";
const FEAT_FORMAT: &str = "DMA-FEAT";
const FEAT_HEADER: &str = "DMA-FEAT v1";

pub fn format_bank<S: Scalar>(bank: &EmbeddingBank<S>) -> String {
    let mut out = format!("{EMB_HEADER}\ndim {}\ncount {}\n", bank.dim(), bank.len());
    for e in bank.entries() {
        out.push_str(&format!(
            "{} {} {}\n",
            e.kind.as_str(),
            e.name,
            format::join(e.vector.as_slice())
        ));
    }
    out
}

pub fn parse_bank<S: Scalar>(text: &str) -> Result<EmbeddingBank<S>> {
    let mut lines = LineReader::new(EMB_FORMAT, text);
    lines.expect_header(EMB_HEADER)?;
    let dim = lines.expect_keyed_count("dim")?;
    let count = lines.expect_keyed_count("count")?;
    let header_line = lines.line_no();
    let mut bank = EmbeddingBank::new(dim);
    while let Some((n, line)) = lines.next_line() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 2 {
            return Err(Error::parse(EMB_FORMAT, n, "expected `<kind> <name> <values>`"));
        }
        let kind: EntryKind = tokens[0]
            .parse()
            .map_err(|e: Error| Error::parse(EMB_FORMAT, n, e.to_string()))?;
        let values = parse_scalars::<S>(EMB_FORMAT, n, &tokens[2..], dim, "values")?;
        let vector = EmbeddingVector::from_unit(values).map_err(|e| Error::parse(EMB_FORMAT, n, e.to_string()))?;
        bank.push(tokens[1], kind, vector)
            .map_err(|e| Error::parse(EMB_FORMAT, n, e.to_string()))?;
    }
    if bank.len() != count {
        return Err(Error::Count {
            format: EMB_FORMAT,
            line: header_line,
            what: "entries",
            expected: count,
            found: bank.len(),
        });
    }
    Ok(bank)
}

pub fn save_bank<S: Scalar>(bank: &EmbeddingBank<S>, path: &Path) -> Result<()> {
    format::write_file(path, &format_bank(bank))
}

pub fn load_bank<S: Scalar>(path: &Path) -> Result<EmbeddingBank<S>> {
    parse_bank(&format::read_file(path)?)
}

pub fn format_feature_map<S: Scalar>(map: &FeatureMap2D<S>) -> String {
    let mut out = format!(
        "{FEAT_HEADER}\nview {} {} {} {} {}\n",
        map.view_id, map.height, map.width, map.dim, map.path
    );
    for px in map.pixels() {
        out.push_str(&format::join(px));
        out.push('\n');
    }
    out
}

pub fn parse_feature_map<S: Scalar>(text: &str) -> Result<FeatureMap2D<S>> {
    let mut lines = LineReader::new(FEAT_FORMAT, text);
    lines.expect_header(FEAT_HEADER)?;
    let (hn, header) = lines.expect_line("view header")?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 6 || tokens[0] != "view" {
        return Err(Error::parse(
            FEAT_FORMAT,
            hn,
            "expected `view <id> <H> <W> <D> <clip|mask>`",
        ));
    }
    let height: usize = parse_value(FEAT_FORMAT, hn, tokens[2], "height")?;
    let width: usize = parse_value(FEAT_FORMAT, hn, tokens[3], "width")?;
    let dim: usize = parse_value(FEAT_FORMAT, hn, tokens[4], "dim")?;
    let path: FeaturePath = tokens[5]
        .parse()
        .map_err(|e: Error| Error::parse(FEAT_FORMAT, hn, e.to_string()))?;
    let mut data = Vec::with_capacity(height * width * dim);
    let mut rows = 0usize;
    while let Some((n, line)) = lines.next_line() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let px = parse_scalars::<S>(FEAT_FORMAT, n, &tokens, dim, "values")?;
        if (scalar::norm(&px) - S::one()).abs() > S::lit(UNIT_TOL) {
            return Err(Error::parse(FEAT_FORMAT, n, "pixel embedding is not unit-norm"));
        }
        data.extend(px);
        rows += 1;
    }
    if rows != height * width {
        return Err(Error::Count {
            format: FEAT_FORMAT,
            line: hn,
            what: "pixel rows",
            expected: height * width,
            found: rows,
        });
    }
    FeatureMap2D::new(tokens[1], height, width, dim, path, data)
        .map_err(|e| Error::parse(FEAT_FORMAT, hn, e.to_string()))
}

pub fn save_feature_map<S: Scalar>(map: &FeatureMap2D<S>, path: &Path) -> Result<()> {
    format::write_file(path, &format_feature_map(map))
}

pub fn load_feature_map<S: Scalar>(path: &Path) -> Result<FeatureMap2D<S>> {
    parse_feature_map(&format::read_file(path)?)
}
