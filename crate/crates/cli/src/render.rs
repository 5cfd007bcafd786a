//! PPM and PLY export of per-point labels.

use std::fmt::Write as _;

use dma_core::error::Error;
use dma_core::scalar::Scalar;
use dma_core::scene::{visible_points, CameraView, PointCloud, Scene};

pub type Rgb = [u8; 3];

/// Pixels and points without a label.
pub const BACKGROUND: Rgb = [24, 24, 24];

const PALETTE: [Rgb; 20] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [174, 199, 232],
    [255, 187, 120],
    [152, 223, 138],
    [255, 152, 150],
    [197, 176, 213],
    [196, 156, 148],
    [247, 182, 210],
    [199, 199, 199],
    [219, 219, 141],
    [158, 218, 229],
];

/// Fixed color for class `c`; past the table, colors are spaced by the golden angle.
pub fn class_color(c: usize) -> Rgb {
    if let Some(rgb) = PALETTE.get(c) {
        return *rgb;
    }
    let h = (c as f64 * 0.618_033_988_75).fract();
    let x = |k: f64| {
        let v = ((h * 6.0 + k) % 6.0 - 3.0).abs() - 1.0;
        (64.0 + 160.0 * v.clamp(0.0, 1.0)) as u8
    };
    [x(0.0), x(4.0), x(2.0)]
}

pub fn color_of(label: Option<usize>) -> Rgb {
    label.map_or(BACKGROUND, class_color)
}

/// Rejects labels outside `0..classes`.
pub fn check_labels(labels: &[Option<usize>], classes: usize) -> Result<(), Error> {
    match labels.iter().flatten().find(|&&l| l >= classes) {
        Some(l) => Err(Error::Invalid(format!("label index {l} outside {classes} classes"))),
        None => Ok(()),
    }
}

/// Binary P6 image of the nearest visible point's label per pixel.
pub fn render_view<S: Scalar>(
    cloud: &PointCloud<S>,
    view: &CameraView<S>,
    labels: &[Option<usize>],
    depth_tol: S,
) -> Vec<u8> {
    let (w, h) = (view.width(), view.height());
    let mut nearest: Vec<Option<(S, usize)>> = vec![None; w * h];
    for hit in visible_points(cloud, view, depth_tol) {
        let (row, col) = hit.cell();
        let slot = &mut nearest[row * w + col];
        let closer = match slot {
            None => true,
            Some((d, i)) => hit.depth < *d || (hit.depth == *d && hit.point_index < *i),
        };
        if closer {
            *slot = Some((hit.depth, hit.point_index));
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for cell in nearest {
        out.extend_from_slice(&color_of(cell.and_then(|(_, i)| labels[i])));
    }
    out
}

pub fn render_views<S: Scalar>(scene: &Scene<S>, labels: &[Option<usize>], depth_tol: S) -> Vec<(String, Vec<u8>)> {
    scene
        .views()
        .iter()
        .map(|v| {
            (
                v.view_id().to_string(),
                render_view(scene.cloud(), v, labels, depth_tol),
            )
        })
        .collect()
}

/// ASCII PLY with one colored vertex per point.
pub fn point_cloud_ply<S: Scalar>(cloud: &PointCloud<S>, labels: &[Option<usize>]) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    );
    for (p, l) in cloud.points().iter().zip(labels) {
        let [r, g, b] = color_of(*l);
        let _ = writeln!(out, "{} {} {} {r} {g} {b}", p.x, p.y, p.z);
    }
    out
}
