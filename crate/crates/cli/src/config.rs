//! `key = value` run configuration shared by every subcommand.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dma_core::association::AssociationConfig;
use dma_core::evaluation::ClassSplit;
use dma_core::pipeline::LabelConfig;
use dma_core::synth::SceneSpec;
use dma_core::text::DEFAULT_TEMPLATE;
use dma_core::trainer::{GradCheckConfig, LossWeights, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub points: usize,
    pub classes: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub orthogonalize: bool,
    pub tau1: f64,
    pub tau2: f64,
    pub threshold: f64,
    pub depth_tol: f64,
    pub min_views: usize,
    pub alpha: f64,
    pub template: String,
    pub lr: f64,
    pub iterations: usize,
    pub hidden: usize,
    pub w_tag: f64,
    pub w_llm: f64,
    pub w_pair: f64,
    pub w_text2d: f64,
    pub splits: Option<String>,
    pub gradcheck_samples: usize,
    pub gradcheck_step: f64,
    pub gradcheck_tol: f64,
    pub gradcheck_floor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        let train = TrainConfig::<f64>::default();
        let assoc = AssociationConfig::<f64>::default();
        let label = LabelConfig::<f64>::default();
        let gc = GradCheckConfig::default();
        Self {
            seed: 0,
            out: PathBuf::from("."),
            points: scene.points,
            classes: scene.classes,
            views: scene.views,
            width: scene.width,
            height: scene.height,
            dim: scene.dim,
            noise_sigma: scene.noise_sigma,
            orthogonalize: scene.orthogonalize,
            tau1: assoc.tau1,
            tau2: train.tau2,
            threshold: assoc.threshold,
            depth_tol: assoc.depth_tol,
            min_views: scene.min_views,
            alpha: label.alpha,
            template: DEFAULT_TEMPLATE.to_string(),
            lr: train.learning_rate,
            iterations: train.iterations,
            hidden: train.hidden,
            w_tag: 1.0,
            w_llm: 1.0,
            w_pair: 1.0,
            w_text2d: 1.0,
            splits: None,
            gradcheck_samples: gc.samples,
            gradcheck_step: gc.step,
            gradcheck_tol: 1e-4,
            gradcheck_floor: gc.denominator_floor,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| CliError::Config(format!("invalid value {raw:?} for `{key}`")))
}

impl RunConfig {
    /// Parses a config file body; later duplicates of a key are rejected.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            cfg.set(key, raw.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| dma_core::Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = value(key, raw)?,
            "out" => self.out = PathBuf::from(raw),
            "points" => self.points = value(key, raw)?,
            "classes" => self.classes = value(key, raw)?,
            "views" => self.views = value(key, raw)?,
            "width" => self.width = value(key, raw)?,
            "height" => self.height = value(key, raw)?,
            "dim" => self.dim = value(key, raw)?,
            "noise_sigma" => self.noise_sigma = value(key, raw)?,
            "orthogonalize" => self.orthogonalize = value(key, raw)?,
            "tau1" => self.tau1 = value(key, raw)?,
            "tau2" => self.tau2 = value(key, raw)?,
            "threshold" => self.threshold = value(key, raw)?,
            "depth_tol" => self.depth_tol = value(key, raw)?,
            "min_views" => self.min_views = value(key, raw)?,
            "alpha" => self.alpha = value(key, raw)?,
            "template" => self.template = raw.to_string(),
            "lr" => self.lr = value(key, raw)?,
            "iterations" => self.iterations = value(key, raw)?,
            "hidden" => self.hidden = value(key, raw)?,
            "w_tag" => self.w_tag = value(key, raw)?,
            "w_llm" => self.w_llm = value(key, raw)?,
            "w_pair" => self.w_pair = value(key, raw)?,
            "w_text2d" => self.w_text2d = value(key, raw)?,
            "splits" => self.splits = Some(raw.to_string()),
            "gradcheck_samples" => self.gradcheck_samples = value(key, raw)?,
            "gradcheck_step" => self.gradcheck_step = value(key, raw)?,
            "gradcheck_tol" => self.gradcheck_tol = value(key, raw)?,
            "gradcheck_floor" => self.gradcheck_floor = value(key, raw)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Checks every value against the owning module's invariants.
    pub fn validate(&self) -> Result<(), CliError> {
        self.scene_spec().validate()?;
        self.label_config().assoc.validate()?;
        self.train_config().validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CliError::Config(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if self.min_views == 0 {
            return Err(CliError::Config("min_views must be at least 1".into()));
        }
        if self.template.matches("{}").count() != 1 {
            return Err(CliError::Config("template must contain exactly one `{}`".into()));
        }
        if self.gradcheck_samples == 0
            || !(self.gradcheck_step > 0.0)
            || !(self.gradcheck_tol > 0.0)
            || !(self.gradcheck_floor > 0.0)
        {
            return Err(CliError::Config(
                "gradcheck samples, step, tolerance and floor must be positive".into(),
            ));
        }
        self.class_split()?;
        Ok(())
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            seed: self.seed,
            points: self.points,
            classes: self.classes,
            views: self.views,
            width: self.width,
            height: self.height,
            dim: self.dim,
            noise_sigma: self.noise_sigma,
            orthogonalize: self.orthogonalize,
            min_views: self.min_views,
        }
    }

    pub fn label_config(&self) -> LabelConfig<f64> {
        LabelConfig {
            assoc: AssociationConfig {
                tau1: self.tau1,
                threshold: self.threshold,
                depth_tol: self.depth_tol,
            },
            alpha: self.alpha,
        }
    }

    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig {
            tau1: self.tau1,
            tau2: self.tau2,
            learning_rate: self.lr,
            iterations: self.iterations,
            seed: self.seed,
            hidden: self.hidden,
            weights: LossWeights {
                tag: self.w_tag,
                llm: self.w_llm,
                pair: self.w_pair,
                text2d: self.w_text2d,
            },
            ..TrainConfig::default()
        }
    }

    pub fn gradcheck_config(&self) -> GradCheckConfig {
        GradCheckConfig {
            samples: self.gradcheck_samples,
            step: self.gradcheck_step,
            seed: self.seed,
            denominator_floor: self.gradcheck_floor,
        }
    }

    pub fn class_split(&self) -> Result<Option<ClassSplit>, CliError> {
        Ok(self.splits.as_deref().map(ClassSplit::parse).transpose()?)
    }

    /// Resolved configuration, in a form [`RunConfig::parse`] reads back.
    pub fn format(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", &self.seed);
        kv("out", &self.out.display());
        kv("points", &self.points);
        kv("classes", &self.classes);
        kv("views", &self.views);
        kv("width", &self.width);
        kv("height", &self.height);
        kv("dim", &self.dim);
        kv("noise_sigma", &self.noise_sigma);
        kv("orthogonalize", &self.orthogonalize);
        kv("tau1", &self.tau1);
        kv("tau2", &self.tau2);
        kv("threshold", &self.threshold);
        kv("depth_tol", &self.depth_tol);
        kv("min_views", &self.min_views);
        kv("alpha", &self.alpha);
        kv("template", &self.template);
        kv("lr", &self.lr);
        kv("iterations", &self.iterations);
        kv("hidden", &self.hidden);
        kv("w_tag", &self.w_tag);
        kv("w_llm", &self.w_llm);
        kv("w_pair", &self.w_pair);
        kv("w_text2d", &self.w_text2d);
        if let Some(s) = &self.splits {
            kv("splits", s);
        }
        kv("gradcheck_samples", &self.gradcheck_samples);
        kv("gradcheck_step", &self.gradcheck_step);
        kv("gradcheck_tol", &self.gradcheck_tol);
        kv("gradcheck_floor", &self.gradcheck_floor);
        out
    }
}
