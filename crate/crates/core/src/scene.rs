//! Point clouds, calibrated views, and point-to-pixel projection.
//!
//! A view carries a 3×4 projection matrix `T`; a point `p` lands at
//! `(u/w, v/w)` where `(u, v, w) = T·(x, y, z, 1)`. Visibility is resolved
//! with a per-pixel z-buffer over floor-rasterized cells.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::{self, check_identifier, parse_scalars, parse_value, LineReader};
use crate::scalar::Scalar;

/// Points with `w` at or below this are behind (or on) the camera plane.
pub const W_MIN: f64 = 1e-6;
/// Default relative z-buffer tolerance.
pub const DEFAULT_DEPTH_TOL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Point3D<S: Scalar> {
    pub x: S,
    pub y: S,
    pub z: S,
    pub r: S,
    pub g: S,
    pub b: S,
    pub gt_label: Option<usize>,
}

impl<S: Scalar> Point3D<S> {
    pub fn new(position: [S; 3], color: [S; 3], gt_label: Option<usize>) -> Result<Self> {
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite point coordinates {position:?}")));
        }
        if !color.iter().all(|c| *c >= S::zero() && *c <= S::one()) {
            return Err(Error::Invalid(format!("color {color:?} outside [0,1]")));
        }
        Ok(Self {
            x: position[0],
            y: position[1],
            z: position[2],
            r: color[0],
            g: color[1],
            b: color[2],
            gt_label,
        })
    }

    pub fn position(&self) -> [S; 3] {
        [self.x, self.y, self.z]
    }

    pub fn color(&self) -> [S; 3] {
        [self.r, self.g, self.b]
    }
}

/// Ordered, nonempty list of points. Indices are stable and used downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<S: Scalar> {
    points: Vec<Point3D<S>>,
}

impl<S: Scalar> PointCloud<S> {
    pub fn new(points: Vec<Point3D<S>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid("point cloud must contain at least one point".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3D<S>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_gt_labels(&self) -> bool {
        self.points.iter().all(|p| p.gt_label.is_some())
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([S; 3], [S; 3]) {
        let mut lo = self.points[0].position();
        let mut hi = lo;
        for p in &self.points[1..] {
            for (k, v) in p.position().into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView<S: Scalar> {
    view_id: String,
    width: usize,
    height: usize,
    projection: [[S; 4]; 3],
}

impl<S: Scalar> CameraView<S> {
    pub fn new(view_id: impl Into<String>, width: usize, height: usize, projection: [[S; 4]; 3]) -> Result<Self> {
        let view_id = view_id.into();
        check_identifier(&view_id)?;
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "view {view_id}: image size {width}x{height} must be positive"
            )));
        }
        if !projection.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Invalid(format!("view {view_id}: non-finite projection matrix")));
        }
        let m = &projection;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det == S::zero() || !det.is_finite() {
            return Err(Error::Invalid(format!(
                "view {view_id}: left 3x3 block of projection is singular"
            )));
        }
        Ok(Self {
            view_id,
            width,
            height,
            projection,
        })
    }

    pub fn view_id(&self) -> &str {
        &self.view_id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major 3×4 projection matrix.
    pub fn projection(&self) -> &[[S; 4]; 3] {
        &self.projection
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene<S: Scalar> {
    cloud: PointCloud<S>,
    views: Vec<CameraView<S>>,
}

impl<S: Scalar> Scene<S> {
    pub fn new(cloud: PointCloud<S>, views: Vec<CameraView<S>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for v in &views {
            if !seen.insert(v.view_id()) {
                return Err(Error::Duplicate(format!("view id {}", v.view_id())));
            }
        }
        Ok(Self { cloud, views })
    }

    pub fn cloud(&self) -> &PointCloud<S> {
        &self.cloud
    }

    pub fn views(&self) -> &[CameraView<S>] {
        &self.views
    }
}

/// A point that lands inside a view's image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit<S: Scalar> {
    pub point_index: usize,
    pub u: S,
    pub v: S,
    pub depth: S,
}

impl<S: Scalar> PixelHit<S> {
    /// Integer `(row, col)` of the rasterization cell containing the hit.
    pub fn cell(&self) -> (usize, usize) {
        // Both coordinates are in [0, size) by construction.
        (
            self.v.floor().to_usize().unwrap_or(0),
            self.u.floor().to_usize().unwrap_or(0),
        )
    }
}

/// Projects one point; `None` when it is behind the camera or off-image.
pub fn project_point<S: Scalar>(point_index: usize, p: &Point3D<S>, view: &CameraView<S>) -> Option<PixelHit<S>> {
    let t = view.projection();
    let hom = [p.x, p.y, p.z, S::one()];
    let row = |r: &[S; 4]| r.iter().zip(hom.iter()).fold(S::zero(), |acc, (&a, &b)| acc + a * b);
    let (u, v, w) = (row(&t[0]), row(&t[1]), row(&t[2]));
    if !(w > S::lit(W_MIN)) {
        return None;
    }
    let (u_pix, v_pix) = (u / w, v / w);
    let inside = u_pix >= S::zero()
        && u_pix < S::from_count(view.width())
        && v_pix >= S::zero()
        && v_pix < S::from_count(view.height());
    inside.then_some(PixelHit {
        point_index,
        u: u_pix,
        v: v_pix,
        depth: w,
    })
}

/// Hits that survive the per-cell z-buffer, ordered by point index.
///
/// A hit is kept when its depth is at most `(1 + depth_tol)` times the
/// smallest depth landing in the same pixel cell.
pub fn visible_points<S: Scalar>(cloud: &PointCloud<S>, view: &CameraView<S>, depth_tol: S) -> Vec<PixelHit<S>> {
    let hits: Vec<PixelHit<S>> = cloud
        .points()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| project_point(i, p, view))
        .collect();
    let width = view.width();
    let mut zbuf: Vec<Option<S>> = vec![None; view.pixel_count()];
    for h in &hits {
        let (r, c) = h.cell();
        let slot = &mut zbuf[r * width + c];
        *slot = Some(match *slot {
            Some(d) if d <= h.depth => d,
            _ => h.depth,
        });
    }
    let scale = S::one() + depth_tol;
    hits.into_iter()
        .filter(|h| {
            let (r, c) = h.cell();
            let min_depth = zbuf[r * width + c].expect("cell populated by its own hit");
            h.depth <= scale * min_depth
        })
        .collect()
}

/// Per-point count of views in which the point is visible.
pub fn visibility_counts<S: Scalar>(scene: &Scene<S>, depth_tol: S) -> Vec<usize> {
    let mut counts = vec![0usize; scene.cloud().len()];
    for view in scene.views() {
        for hit in visible_points(scene.cloud(), view, depth_tol) {
            counts[hit.point_index] += 1;
        }
    }
    counts
}

const SCENE_FORMAT: &str = "DMA-SCENE";
const SCENE_HEADER: &str = "DMA-SCENE v1";
const CAM_FORMAT: &str = "DMA-CAM";
const CAM_HEADER: &str = "DMA-CAM v1";

pub fn format_points<S: Scalar>(cloud: &PointCloud<S>) -> String {
    let mut out = format!("{SCENE_HEADER}\npoints {}\n", cloud.len());
    for p in cloud.points() {
        let label = p.gt_label.map_or(-1i64, |l| l as i64);
        out.push_str(&format::join(&[p.x, p.y, p.z, p.r, p.g, p.b]));
        out.push_str(&format!(" {label}\n"));
    }
    out
}

pub fn parse_points<S: Scalar>(text: &str) -> Result<PointCloud<S>> {
    let mut lines = LineReader::new(SCENE_FORMAT, text);
    lines.expect_header(SCENE_HEADER)?;
    let count = lines.expect_keyed_count("points")?;
    let header_line = lines.line_no();
    let mut points = Vec::with_capacity(count);
    while let Some((n, line)) = lines.next_line() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 7 {
            return Err(Error::Count {
                format: SCENE_FORMAT,
                line: n,
                what: "fields",
                expected: 7,
                found: tokens.len(),
            });
        }
        let v: Vec<S> = parse_scalars(SCENE_FORMAT, n, &tokens[..6], 6, "coordinates")?;
        let label: i64 = parse_value(SCENE_FORMAT, n, tokens[6], "gt_label")?;
        let gt = match label {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(Error::parse(SCENE_FORMAT, n, format!("invalid gt_label {l}"))),
        };
        let p = Point3D::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], gt)
            .map_err(|e| Error::parse(SCENE_FORMAT, n, e.to_string()))?;
        points.push(p);
    }
    if points.len() != count {
        return Err(Error::Count {
            format: SCENE_FORMAT,
            line: header_line,
            what: "points",
            expected: count,
            found: points.len(),
        });
    }
    PointCloud::new(points).map_err(|e| Error::parse(SCENE_FORMAT, header_line, e.to_string()))
}

pub fn format_cameras<S: Scalar>(views: &[CameraView<S>]) -> String {
    let mut out = format!("{CAM_HEADER}\nviews {}\n", views.len());
    for v in views {
        out.push_str(&format!("view {} {} {}\n", v.view_id(), v.width(), v.height()));
        let flat: Vec<S> = v.projection().iter().flatten().copied().collect();
        out.push_str(&format::join(&flat));
        out.push('\n');
    }
    out
}

pub fn parse_cameras<S: Scalar>(text: &str) -> Result<Vec<CameraView<S>>> {
    let mut lines = LineReader::new(CAM_FORMAT, text);
    lines.expect_header(CAM_HEADER)?;
    let count = lines.expect_keyed_count("views")?;
    let header_line = lines.line_no();
    let mut views = Vec::with_capacity(count);
    while let Some((n, line)) = lines.next_line() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 4 || tokens[0] != "view" {
            return Err(Error::parse(CAM_FORMAT, n, "expected `view <id> <width> <height>`"));
        }
        let width: usize = parse_value(CAM_FORMAT, n, tokens[2], "width")?;
        let height: usize = parse_value(CAM_FORMAT, n, tokens[3], "height")?;
        let (m, row) = lines.expect_line("projection matrix")?;
        let tokens: Vec<&str> = row.split_whitespace().collect();
        let t: Vec<S> = parse_scalars(CAM_FORMAT, m, &tokens, 12, "matrix entries")?;
        let mut projection = [[S::zero(); 4]; 3];
        for (k, v) in t.into_iter().enumerate() {
            projection[k / 4][k % 4] = v;
        }
        let view = CameraView::new(tokens_id(line), width, height, projection)
            .map_err(|e| Error::parse(CAM_FORMAT, n, e.to_string()))?;
        views.push(view);
    }
    if views.len() != count {
        return Err(Error::Count {
            format: CAM_FORMAT,
            line: header_line,
            what: "views",
            expected: count,
            found: views.len(),
        });
    }
    Ok(views)
}

fn tokens_id(line: &str) -> &str {
    line.split_whitespace().nth(1).unwrap_or_default()
}

/// Writes the points (DMA-SCENE) and cameras (DMA-CAM) of a scene.
pub fn save_scene<S: Scalar>(scene: &Scene<S>, points_path: &Path, cameras_path: &Path) -> Result<()> {
    format::write_file(points_path, &format_points(scene.cloud()))?;
    format::write_file(cameras_path, &format_cameras(scene.views()))
}

pub fn load_scene<S: Scalar>(points_path: &Path, cameras_path: &Path) -> Result<Scene<S>> {
    let cloud = parse_points(&format::read_file(points_path)?)?;
    let views = parse_cameras(&format::read_file(cameras_path)?)?;
    Scene::new(cloud, views)
}
