use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dma_core::association::{load_label_map, save_label_map, LabelSource};
use dma_core::embedding::{
    load_bank, load_feature_map, save_bank, save_feature_map, EmbeddingBank, FeatureMap2D, FeaturePath,
};
use dma_core::error::Error;
use dma_core::evaluation::{format_class_table, format_report, query, split_metrics, ConfusionMatrix, MetricsReport};
use dma_core::pipeline::{build_labels, build_vocabulary, closed_set_predictions, LabelSet, LabelSummary};
use dma_core::scene::{load_scene, save_scene, visibility_counts, Scene};
use dma_core::synth;
use dma_core::text::{
    build_text_queries, format_captions, format_filter_reports, format_tags, load_captions, load_tags, CaptionSet,
    SceneTagSet, Stoplist,
};
use dma_core::trainer::{
    check_gradients, forward, load_model, model_inputs, save_model, train, Supervision, TrainableState,
};

use crate::render;
use crate::{CliError, Layout, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "dma",
    version,
    about = "Dense point-pixel-text alignment on synthetic or adapter-produced scenes"
)]
pub struct Cli {
    /// `key = value` config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory holding all inputs and outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize scene, cameras, embeddings, feature maps, tags and captions.
    Gen,
    /// Filter view tags, vote them into a scene vocabulary, write text queries.
    Tags,
    /// Build tag and caption pseudo-label maps.
    Labels,
    /// Train the point-feature model.
    Train,
    /// Closed-set evaluation of the trained model (or of a prediction file).
    Eval {
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Mask of points matching a bank entry.
    Query {
        #[arg(long)]
        name: String,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compare analytic and finite-difference gradients at initialization.
    Gradcheck,
    /// Export per-view PPM images and a colored PLY.
    Render {
        /// Query mask (0/1 per point) instead of predictions.
        #[arg(long, conflicts_with_all = ["predictions", "ground_truth"])]
        mask: Option<PathBuf>,
        #[arg(long, conflicts_with = "ground_truth")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        ground_truth: bool,
    },
}

impl Cli {
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one subcommand and returns a short human-readable summary.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.resolve_config()?;
    let layout = Layout::new(&cfg.out);
    match &cli.command {
        Command::Gen => cmd_gen(&cfg, &layout),
        Command::Tags => cmd_tags(&cfg, &layout),
        Command::Labels => cmd_labels(&cfg, &layout),
        Command::Train => cmd_train(&cfg, &layout),
        Command::Eval { predictions } => cmd_eval(&cfg, &layout, predictions.as_deref()),
        Command::Query { name, threshold } => cmd_query(&cfg, &layout, name, threshold.unwrap_or(cfg.threshold)),
        Command::Gradcheck => cmd_gradcheck(&cfg, &layout),
        Command::Render {
            mask,
            predictions,
            ground_truth,
        } => cmd_render(&cfg, &layout, mask.as_deref(), predictions.as_deref(), *ground_truth),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn cmd_gen(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let world = synth::generate::<f64>(&cfg.scene_spec())?;
    mkdir(layout.root())?;
    mkdir(&layout.features_dir())?;
    write(&layout.config(), cfg.format())?;
    save_scene(&world.scene, &layout.points(), &layout.cameras())?;
    save_bank(&world.bank, &layout.bank())?;
    for (clip, mask) in world.clip_maps.iter().zip(&world.mask_maps) {
        save_feature_map(clip, &layout.feature_map(clip.view_id(), FeaturePath::Clip))?;
        save_feature_map(mask, &layout.feature_map(mask.view_id(), FeaturePath::Mask))?;
    }
    write(&layout.classes(), lines(&world.class_names))?;
    write(&layout.tags(), format_tags(&world.view_tags))?;
    write(&layout.captions(), format_captions(&world.captions))?;
    write(&layout.stoplist(), world.stoplist.format())?;
    Ok(format!(
        "generated {} points, {} views, {} bank entries in {}",
        world.scene.cloud().len(),
        world.scene.views().len(),
        world.bank.len(),
        layout.root().display()
    ))
}

fn lines(items: &[String]) -> String {
    items.iter().map(|s| format!("{s}\n")).collect()
}

fn load_classes(layout: &Layout) -> Result<Vec<String>, CliError> {
    let names: Vec<String> = read(&layout.classes())?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(CliError::Usage(format!(
            "{} lists no classes",
            layout.classes().display()
        )));
    }
    Ok(names)
}

fn cmd_tags(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let views = load_tags(&layout.tags())?;
    let stoplist = if layout.stoplist().exists() {
        Stoplist::load(&layout.stoplist())?
    } else {
        Stoplist::default()
    };
    let vocab = build_vocabulary(&views, &stoplist, cfg.min_views)?;
    write(&layout.filtered_tags(), format_tags(&vocab.filtered))?;
    write(
        &layout.filter_report(),
        format!("view\ttag\tdecision\treason\n{}", format_filter_reports(&vocab.reports)),
    )?;
    write(&layout.scene_tags(), vocab.scene_tags.format())?;
    let queries = build_text_queries(&vocab.scene_tags, &cfg.template)?;
    let table: String = vocab
        .scene_tags
        .tags()
        .iter()
        .zip(&queries)
        .map(|(t, q)| format!("{t}\t{q}\n"))
        .collect();
    write(&layout.queries(), table)?;
    Ok(format!(
        "{} scene tags kept from {} views (min_views {})",
        vocab.scene_tags.len(),
        views.len(),
        vocab.min_views
    ))
}

struct SceneInputs {
    scene: Scene<f64>,
    bank: EmbeddingBank<f64>,
    clip: Vec<FeatureMap2D<f64>>,
    mask: Vec<FeatureMap2D<f64>>,
}

fn load_maps(layout: &Layout, scene: &Scene<f64>, path: FeaturePath) -> Result<Vec<FeatureMap2D<f64>>, CliError> {
    scene
        .views()
        .iter()
        .map(|v| {
            let file = layout.feature_map(v.view_id(), path);
            let map = load_feature_map::<f64>(&file)?;
            if map.path() != path {
                return Err(CliError::Usage(format!(
                    "{} holds {} features, expected {path}",
                    file.display(),
                    map.path()
                )));
            }
            Ok(map)
        })
        .collect()
}

fn load_inputs(layout: &Layout) -> Result<SceneInputs, CliError> {
    let scene = load_scene::<f64>(&layout.points(), &layout.cameras())?;
    let bank = load_bank::<f64>(&layout.bank())?;
    let clip = load_maps(layout, &scene, FeaturePath::Clip)?;
    let mask = load_maps(layout, &scene, FeaturePath::Mask)?;
    Ok(SceneInputs {
        scene,
        bank,
        clip,
        mask,
    })
}

fn load_optional_captions(layout: &Layout) -> Result<Option<CaptionSet>, CliError> {
    let path = layout.captions();
    Ok(if path.exists() {
        Some(load_captions(&path)?)
    } else {
        None
    })
}

fn label_set(cfg: &RunConfig, layout: &Layout, inputs: &SceneInputs) -> Result<LabelSet<f64>, CliError> {
    let scene_tags = SceneTagSet::parse(&read(&layout.scene_tags())?)?;
    let captions = load_optional_captions(layout)?;
    Ok(build_labels(
        &inputs.scene,
        &inputs.bank,
        &inputs.clip,
        &inputs.mask,
        &scene_tags,
        captions.as_ref(),
        &cfg.label_config(),
    )?)
}

fn cmd_labels(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let inputs = load_inputs(layout)?;
    let labels = label_set(cfg, layout, &inputs)?;
    save_label_map(&labels.tag_labels, &layout.tag_labels())?;
    let tag_summary = LabelSummary::of(&labels.tag_labels);
    let mut summary = tag_summary.format("tag");
    match &labels.captions {
        Some((_, map)) => {
            save_label_map(map, &layout.caption_labels())?;
            summary.push_str(&LabelSummary::of(map).format("caption"));
        }
        None => match fs::remove_file(layout.caption_labels()) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => {
                return Err(Error::io(&layout.caption_labels(), e).into())
            }
            _ => {}
        },
    }
    write(&layout.label_summary(), summary)?;
    Ok(format!(
        "labeled {} of {} points, {:.3} tag labels per labeled point",
        tag_summary.labeled,
        tag_summary.points,
        tag_summary.mean_labels()
    ))
}

/// Supervision from the on-disk label maps plus the fused features and
/// text-to-2D targets recomputed from the feature maps.
fn supervision(cfg: &RunConfig, layout: &Layout, inputs: &SceneInputs) -> Result<Supervision<f64>, CliError> {
    let labels = label_set(cfg, layout, inputs)?;
    let mut sup = labels.supervision();
    let tag_labels = load_label_map(&layout.tag_labels())?;
    if tag_labels.source != LabelSource::Tag {
        return Err(CliError::Usage(format!(
            "{} is not a tag label map",
            layout.tag_labels().display()
        )));
    }
    sup.tag_labels = tag_labels;
    if let Some((_, masks)) = &mut sup.captions {
        let path = layout.caption_labels();
        if path.exists() {
            *masks = load_label_map(&path)?;
        }
    }
    sup.validate(inputs.scene.cloud().len())?;
    Ok(sup)
}

fn cmd_train(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let inputs = load_inputs(layout)?;
    let sup = supervision(cfg, layout, &inputs)?;
    let outcome = train(inputs.scene.cloud(), &sup, &cfg.train_config())?;
    save_model(&outcome.state.model, &layout.model())?;
    let mut history = String::from("iteration\ttag\tllm\tpair\ttext2d\ttotal\n");
    for (i, h) in outcome.history.iter().enumerate() {
        let _ = writeln!(
            history,
            "{i}\t{}\t{}\t{}\t{}\t{}",
            h.tag, h.llm, h.pair, h.text2d, h.total
        );
    }
    write(&layout.loss_history(), history)?;
    let (first, last) = (
        outcome.history[0].total,
        outcome.history[outcome.history.len() - 1].total,
    );
    Ok(format!(
        "trained {} iterations: total loss {first:.6} -> {last:.6}",
        cfg.iterations
    ))
}

fn parse_predictions(text: &str, points: usize) -> Result<Vec<Option<usize>>, CliError> {
    let out: Vec<Option<usize>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| match l {
            "-1" => Ok(None),
            _ => l
                .parse::<usize>()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("invalid prediction {l:?}"))),
        })
        .collect::<Result<_, _>>()?;
    if out.len() != points {
        return Err(CliError::Usage(format!(
            "{} predictions for {points} points",
            out.len()
        )));
    }
    Ok(out)
}

fn format_predictions(pred: &[Option<usize>]) -> String {
    pred.iter()
        .map(|p| match p {
            Some(c) => format!("{c}\n"),
            None => "-1\n".to_string(),
        })
        .collect()
}

fn cmd_eval(cfg: &RunConfig, layout: &Layout, predictions: Option<&Path>) -> Result<String, CliError> {
    let scene = load_scene::<f64>(&layout.points(), &layout.cameras())?;
    let classes = load_classes(layout)?;
    let cloud = scene.cloud();
    let pred = match predictions {
        Some(path) => parse_predictions(&read(path)?, cloud.len())?,
        None => {
            let model = load_model::<f64>(&layout.model())?;
            let class_bank = load_bank::<f64>(&layout.bank())?.select(&classes)?;
            let pred: Vec<Option<usize>> = closed_set_predictions(&forward(&model, cloud), &class_bank, cfg.tau2)?
                .into_iter()
                .map(Some)
                .collect();
            write(&layout.predictions(), format_predictions(&pred))?;
            pred
        }
    };
    let seen = visibility_counts(&scene, cfg.depth_tol);
    let mut confusion = ConfusionMatrix::new(classes.len());
    for ((p, point), &count) in pred.iter().zip(cloud.points()).zip(&seen) {
        if let (true, Some(gt), Some(p)) = (count > 0, point.gt_label, p) {
            confusion.add(gt, *p)?;
        }
    }
    let report = MetricsReport::from_confusion(&confusion)?;
    let splits = match cfg.class_split()? {
        Some(split) => split_metrics(&report, &split)?,
        None => Vec::new(),
    };
    write(&layout.metrics(), format_report(&report, &splits))?;
    write(&layout.metrics_table(), format_class_table(&report, &classes))?;
    Ok(format!(
        "miou = {:.4}, macc = {:.4} over {} points",
        report.miou, report.macc, report.evaluated
    ))
}

fn cmd_query(cfg: &RunConfig, layout: &Layout, name: &str, threshold: f64) -> Result<String, CliError> {
    let scene = load_scene::<f64>(&layout.points(), &layout.cameras())?;
    let bank = load_bank::<f64>(&layout.bank())?;
    let entry = bank
        .get(name)
        .ok_or_else(|| Error::Missing(format!("bank entry {name:?}")))?;
    let model = load_model::<f64>(&layout.model())?;
    let mask = query(&forward(&model, scene.cloud()), &entry.vector, cfg.tau2, threshold)?;
    let text: String = mask.iter().map(|&m| if m { "1\n" } else { "0\n" }).collect();
    write(&layout.query_mask(), text)?;
    let hits = mask.iter().filter(|&&m| m).count();
    Ok(format!("query {name:?}: {hits} of {} points", mask.len()))
}

fn cmd_gradcheck(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let inputs = load_inputs(layout)?;
    let sup = supervision(cfg, layout, &inputs)?;
    let tc = cfg.train_config();
    let state = TrainableState::new(tc.init_model(sup.tag_bank.dim())?, &sup);
    let report = check_gradients(
        &state,
        &model_inputs(inputs.scene.cloud()),
        &sup,
        &tc.weights,
        &tc.temperatures(),
        &cfg.gradcheck_config(),
    )?;
    let passed = report.passes(cfg.gradcheck_tol);
    write(
        &layout.gradcheck(),
        format!(
            "checked = {}\nmax_rel_error = {:e}\nworst_index = {}\nworst_analytic = {:e}\nworst_numeric = {:e}\ntolerance = {:e}\npassed = {passed}\n",
            report.checked, report.max_rel_error, report.worst_index, report.worst_analytic, report.worst_numeric, cfg.gradcheck_tol
        ),
    )?;
    if !passed {
        return Err(CliError::GradCheck {
            max_rel_error: report.max_rel_error,
            tolerance: cfg.gradcheck_tol,
        });
    }
    Ok(format!(
        "gradient check passed: {} parameters, max relative error {:e}",
        report.checked, report.max_rel_error
    ))
}

fn cmd_render(
    cfg: &RunConfig,
    layout: &Layout,
    mask: Option<&Path>,
    predictions: Option<&Path>,
    ground_truth: bool,
) -> Result<String, CliError> {
    let scene = load_scene::<f64>(&layout.points(), &layout.cameras())?;
    let n = scene.cloud().len();
    let (labels, classes) = if let Some(path) = mask {
        let bits = parse_predictions(&read(path)?, n)?;
        check_mask(&bits)?;
        (
            bits.into_iter()
                .map(|b| b.filter(|&v| v == 1).map(|_| 0))
                .collect::<Vec<_>>(),
            1,
        )
    } else if ground_truth {
        (
            scene.cloud().points().iter().map(|p| p.gt_label).collect(),
            load_classes(layout)?.len(),
        )
    } else {
        let path = predictions.map_or_else(|| layout.predictions(), Path::to_path_buf);
        (parse_predictions(&read(&path)?, n)?, load_classes(layout)?.len())
    };
    render::check_labels(&labels, classes)?;
    mkdir(&layout.render_dir())?;
    let images = render::render_views(&scene, &labels, cfg.depth_tol);
    for (view, bytes) in &images {
        write(&layout.render_dir().join(format!("{view}.ppm")), bytes)?;
    }
    write(
        &layout.render_dir().join("points.ply"),
        render::point_cloud_ply(scene.cloud(), &labels),
    )?;
    Ok(format!("rendered {} views and {n} points", images.len()))
}

fn check_mask(bits: &[Option<usize>]) -> Result<(), CliError> {
    match bits.iter().find(|b| !matches!(b, Some(0) | Some(1))) {
        Some(b) => Err(CliError::Usage(format!("mask entries must be 0 or 1, found {b:?}"))),
        None => Ok(()),
    }
}
