use std::path::{Path, PathBuf};

use dma_core::embedding::FeaturePath;

/// File names inside the run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.file("run_config.txt")
    }
    pub fn points(&self) -> PathBuf {
        self.file("scene.pts")
    }
    pub fn cameras(&self) -> PathBuf {
        self.file("cameras.cam")
    }
    pub fn bank(&self) -> PathBuf {
        self.file("bank.emb")
    }
    pub fn classes(&self) -> PathBuf {
        self.file("classes.txt")
    }
    pub fn features_dir(&self) -> PathBuf {
        self.file("features")
    }
    pub fn feature_map(&self, view: &str, path: FeaturePath) -> PathBuf {
        self.features_dir().join(format!("{view}_{path}.feat"))
    }
    pub fn tags(&self) -> PathBuf {
        self.file("tags.txt")
    }
    pub fn captions(&self) -> PathBuf {
        self.file("captions.txt")
    }
    pub fn stoplist(&self) -> PathBuf {
        self.file("stoplist.txt")
    }
    pub fn filtered_tags(&self) -> PathBuf {
        self.file("tags_filtered.txt")
    }
    pub fn filter_report(&self) -> PathBuf {
        self.file("filter_report.tsv")
    }
    pub fn scene_tags(&self) -> PathBuf {
        self.file("scene_tags.txt")
    }
    pub fn queries(&self) -> PathBuf {
        self.file("queries.txt")
    }
    pub fn tag_labels(&self) -> PathBuf {
        self.file("labels_tag.lbl")
    }
    pub fn caption_labels(&self) -> PathBuf {
        self.file("labels_caption.lbl")
    }
    pub fn label_summary(&self) -> PathBuf {
        self.file("labels_summary.txt")
    }
    pub fn model(&self) -> PathBuf {
        self.file("model.ckpt")
    }
    pub fn loss_history(&self) -> PathBuf {
        self.file("loss_history.tsv")
    }
    pub fn predictions(&self) -> PathBuf {
        self.file("predictions.txt")
    }
    pub fn metrics(&self) -> PathBuf {
        self.file("metrics.txt")
    }
    pub fn metrics_table(&self) -> PathBuf {
        self.file("metrics.tsv")
    }
    pub fn query_mask(&self) -> PathBuf {
        self.file("query_mask.txt")
    }
    pub fn gradcheck(&self) -> PathBuf {
        self.file("gradcheck.txt")
    }
    pub fn render_dir(&self) -> PathBuf {
        self.file("render")
    }
}
