//! Small feed-forward point encoder: `(xyz, rgb) → tanh → tanh → linear → ℓ2`.

use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::format::{self, parse_scalars, parse_value, LineReader};
use crate::rng;
use crate::scalar::{self, Scalar};
use crate::scene::PointCloud;

pub const INPUT_DIM: usize = 6;
pub const DEFAULT_HIDDEN: usize = 32;

/// Parameters are stored flat, layer-major:
/// `W1 (hidden×6), b1, W2 (hidden×hidden), b2, W3 (dim×hidden), b3`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatureModel<S: Scalar> {
    hidden: usize,
    out_dim: usize,
    seed: u64,
    params: Vec<S>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

fn layout(hidden: usize, out_dim: usize) -> Layout {
    let w1 = 0;
    let b1 = w1 + hidden * INPUT_DIM;
    let w2 = b1 + hidden;
    let b2 = w2 + hidden * hidden;
    let w3 = b2 + hidden;
    let b3 = w3 + out_dim * hidden;
    Layout {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        end: b3 + out_dim,
    }
}

impl<S: Scalar> PointFeatureModel<S> {
    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn init(hidden: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if hidden == 0 || out_dim == 0 {
            return Err(Error::Invalid("model layer sizes must be positive".into()));
        }
        let l = layout(hidden, out_dim);
        let mut params = vec![S::zero(); l.end];
        let mut rng = rng::stream(seed, "model");
        for (start, count, fan_in) in [
            (l.w1, hidden * INPUT_DIM, INPUT_DIM),
            (l.w2, hidden * hidden, hidden),
            (l.w3, out_dim * hidden, hidden),
        ] {
            let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid std");
            for p in &mut params[start..start + count] {
                *p = S::lit(dist.sample(&mut rng));
            }
        }
        Ok(Self {
            hidden,
            out_dim,
            seed,
            params,
        })
    }

    pub fn from_params(hidden: usize, out_dim: usize, seed: u64, params: Vec<S>) -> Result<Self> {
        let expected = layout(hidden, out_dim).end;
        if params.len() != expected {
            return Err(Error::Dimension {
                context: "model parameters",
                expected,
                found: params.len(),
            });
        }
        if !scalar::all_finite(&params) {
            return Err(Error::Invalid("non-finite model parameter".into()));
        }
        Ok(Self {
            hidden,
            out_dim,
            seed,
            params,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}

/// Per-point network inputs: coordinates mapped to `[-1, 1]` over the
/// cloud's bounding box (0 along degenerate axes), then color.
pub fn model_inputs<S: Scalar>(cloud: &PointCloud<S>) -> Vec<[S; INPUT_DIM]> {
    let (lo, hi) = cloud.bounds();
    let two = S::lit(2.0);
    cloud
        .points()
        .iter()
        .map(|p| {
            let pos = p.position();
            let mut x = [S::zero(); INPUT_DIM];
            for k in 0..3 {
                let extent = hi[k] - lo[k];
                x[k] = if extent > S::zero() {
                    two * (pos[k] - lo[k]) / extent - S::one()
                } else {
                    S::zero()
                };
            }
            x[3..].copy_from_slice(&p.color());
            x
        })
        .collect()
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S: Scalar> {
    inputs: Vec<[S; INPUT_DIM]>,
    h1: Vec<S>,
    h2: Vec<S>,
    /// Pre-normalization output norms.
    out_norm: Vec<S>,
    /// Unit-norm output rows, `N × out_dim`.
    pub features: Vec<S>,
}

fn affine<S: Scalar>(w: &[S], b: &[S], x: &[S], out: &mut [S]) {
    let n_in = x.len();
    for (o, (row, &bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        *o = bias + scalar::dot(row, x);
    }
}

pub fn forward_cached<S: Scalar>(model: &PointFeatureModel<S>, inputs: &[[S; INPUT_DIM]]) -> ForwardCache<S> {
    let l = layout(model.hidden, model.out_dim);
    let p = &model.params;
    let (h, d) = (model.hidden, model.out_dim);
    let n = inputs.len();
    let mut h1 = vec![S::zero(); n * h];
    let mut h2 = vec![S::zero(); n * h];
    let mut features = vec![S::zero(); n * d];
    let mut out_norm = vec![S::zero(); n];
    for (i, x) in inputs.iter().enumerate() {
        let a1 = &mut h1[i * h..(i + 1) * h];
        affine(&p[l.w1..l.b1], &p[l.b1..l.w2], x, a1);
        a1.iter_mut().for_each(|v| *v = v.tanh());
        let a2 = &mut h2[i * h..(i + 1) * h];
        affine(&p[l.w2..l.b2], &p[l.b2..l.w3], &h1[i * h..(i + 1) * h], a2);
        a2.iter_mut().for_each(|v| *v = v.tanh());
        let y = &mut features[i * d..(i + 1) * d];
        affine(&p[l.w3..l.b3], &p[l.b3..l.end], &h2[i * h..(i + 1) * h], y);
        let norm = scalar::norm(y).max(S::min_positive_value());
        y.iter_mut().for_each(|v| *v = *v / norm);
        out_norm[i] = norm;
    }
    ForwardCache {
        inputs: inputs.to_vec(),
        h1,
        h2,
        out_norm,
        features,
    }
}

/// Unit-norm point features `N × out_dim`, row-major.
pub fn forward<S: Scalar>(model: &PointFeatureModel<S>, cloud: &PointCloud<S>) -> Vec<S> {
    forward_cached(model, &model_inputs(cloud)).features
}

/// Gradient wrt the parameters given the gradient wrt the unit-norm features.
pub fn backward_model<S: Scalar>(model: &PointFeatureModel<S>, cache: &ForwardCache<S>, grad_features: &[S]) -> Vec<S> {
    let l = layout(model.hidden, model.out_dim);
    let p = &model.params;
    let (h, d) = (model.hidden, model.out_dim);
    let mut g = vec![S::zero(); p.len()];
    let mut gy = vec![S::zero(); d];
    let mut gh2 = vec![S::zero(); h];
    let mut gh1 = vec![S::zero(); h];
    for (i, x) in cache.inputs.iter().enumerate() {
        let f = &cache.features[i * d..(i + 1) * d];
        let gf = &grad_features[i * d..(i + 1) * d];
        if gf.iter().all(|v| *v == S::zero()) {
            continue;
        }
        // Through y / |y|.
        let proj = scalar::dot(f, gf);
        for k in 0..d {
            gy[k] = (gf[k] - f[k] * proj) / cache.out_norm[i];
        }
        let h2 = &cache.h2[i * h..(i + 1) * h];
        let h1 = &cache.h1[i * h..(i + 1) * h];
        gh2.iter_mut().for_each(|v| *v = S::zero());
        for k in 0..d {
            g[l.b3 + k] += gy[k];
            let row = l.w3 + k * h;
            for j in 0..h {
                g[row + j] += gy[k] * h2[j];
                gh2[j] += gy[k] * p[row + j];
            }
        }
        for j in 0..h {
            gh2[j] *= S::one() - h2[j] * h2[j];
        }
        gh1.iter_mut().for_each(|v| *v = S::zero());
        for j in 0..h {
            g[l.b2 + j] += gh2[j];
            let row = l.w2 + j * h;
            for m in 0..h {
                g[row + m] += gh2[j] * h1[m];
                gh1[m] += gh2[j] * p[row + m];
            }
        }
        for m in 0..h {
            let ga = gh1[m] * (S::one() - h1[m] * h1[m]);
            g[l.b1 + m] += ga;
            let row = l.w1 + m * INPUT_DIM;
            for (q, &xq) in x.iter().enumerate() {
                g[row + q] += ga * xq;
            }
        }
    }
    g
}

const MODEL_FORMAT: &str = "DMA-MODEL";
const MODEL_HEADER: &str = "DMA-MODEL v1";

/// Checkpoint text: header, layer sizes, seed, parameter count, then one
/// parameter per line in layout order (shortest round-trip decimal).
pub fn format_model<S: Scalar>(model: &PointFeatureModel<S>) -> String {
    let mut out = format!(
        "{MODEL_HEADER}\nlayers {} {} {} {}\nseed {}\nparams {}\n",
        INPUT_DIM,
        model.hidden,
        model.hidden,
        model.out_dim,
        model.seed,
        model.params.len()
    );
    for p in &model.params {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_model<S: Scalar>(text: &str) -> Result<PointFeatureModel<S>> {
    let mut lines = LineReader::new(MODEL_FORMAT, text);
    lines.expect_header(MODEL_HEADER)?;
    let (ln, layers) = lines.expect_line("layers")?;
    let tokens: Vec<&str> = layers.split_whitespace().collect();
    if tokens.len() != 5 || tokens[0] != "layers" {
        return Err(Error::parse(
            MODEL_FORMAT,
            ln,
            "expected `layers <in> <hidden> <hidden> <out>`",
        ));
    }
    let sizes: Vec<usize> = tokens[1..]
        .iter()
        .map(|t| parse_value(MODEL_FORMAT, ln, t, "layer size"))
        .collect::<Result<_>>()?;
    if sizes[0] != INPUT_DIM || sizes[1] != sizes[2] {
        return Err(Error::parse(
            MODEL_FORMAT,
            ln,
            format!("unsupported layer sizes {sizes:?}"),
        ));
    }
    let (sn, seed_line) = lines.expect_line("seed")?;
    let seed: u64 = match seed_line.split_once(' ') {
        Some(("seed", v)) => parse_value(MODEL_FORMAT, sn, v.trim(), "seed")?,
        _ => return Err(Error::parse(MODEL_FORMAT, sn, "expected `seed <u64>`")),
    };
    let count = lines.expect_keyed_count("params")?;
    let count_line = lines.line_no();
    let mut params = Vec::with_capacity(count);
    while let Some((n, line)) = lines.next_line() {
        params.extend(parse_scalars::<S>(MODEL_FORMAT, n, &[line], 1, "parameter")?);
    }
    if params.len() != count {
        return Err(Error::Count {
            format: MODEL_FORMAT,
            line: count_line,
            what: "parameters",
            expected: count,
            found: params.len(),
        });
    }
    PointFeatureModel::from_params(sizes[1], sizes[3], seed, params)
        .map_err(|e| Error::parse(MODEL_FORMAT, count_line, e.to_string()))
}

pub fn save_model<S: Scalar>(model: &PointFeatureModel<S>, path: &Path) -> Result<()> {
    format::write_file(path, &format_model(model))
}

pub fn load_model<S: Scalar>(path: &Path) -> Result<PointFeatureModel<S>> {
    parse_model(&format::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Point3D;

    fn cloud() -> PointCloud<f64> {
        PointCloud::new(vec![
            Point3D::new([0.0, 1.0, 2.0], [0.1, 0.2, 0.3], None).unwrap(),
            Point3D::new([1.0, -1.0, 0.5], [0.9, 0.0, 0.4], None).unwrap(),
            Point3D::new([0.0, 1.0, 2.0], [0.1, 0.2, 0.3], None).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn forward_rows_are_unit_and_deterministic() {
        let model = PointFeatureModel::<f64>::init(8, 5, 3).unwrap();
        let f = forward(&model, &cloud());
        for row in f.chunks_exact(5) {
            assert!((scalar::norm(row) - 1.0).abs() < 1e-9);
        }
        assert_eq!(&f[0..5], &f[10..15]);
        let again = forward(&PointFeatureModel::<f64>::init(8, 5, 3).unwrap(), &cloud());
        assert_eq!(
            f.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            again.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn inputs_normalized_to_bbox() {
        let x = model_inputs(&cloud());
        assert_eq!(x[0][..3], [-1.0, 1.0, 1.0]);
        assert_eq!(x[1][..3], [1.0, -1.0, -1.0]);
        assert_eq!(x[1][3..], [0.9, 0.0, 0.4]);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let model = PointFeatureModel::<f64>::init(4, 3, 99).unwrap();
        let back: PointFeatureModel<f64> = parse_model(&format_model(&model)).unwrap();
        assert_eq!(back, model);
        let text = format_model(&model);
        assert!(matches!(
            parse_model::<f64>(&text.replace("DMA-MODEL v1", "DMA-MODEL v0")),
            Err(Error::Version { .. })
        ));
        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_model::<f64>(&truncated), Err(Error::Count { .. })));
    }

    #[test]
    fn single_precision_model_runs() {
        let model = PointFeatureModel::<f32>::init(4, 3, 1).unwrap();
        let c = PointCloud::new(vec![Point3D::new([0.0f32, 0.0, 1.0], [0.5, 0.5, 0.5], None).unwrap()]).unwrap();
        let f = forward(&model, &c);
        assert!((scalar::norm(&f) - 1.0).abs() < 1e-5);
    }
}
