//! Scene vocabulary: per-view tag denoising, multi-view voting, query
//! templating, and caption bookkeeping.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use crate::embedding::{EmbeddingBank, EntryKind};
use crate::error::{Error, Result};
use crate::format::{self, check_identifier, LineReader};
use crate::scalar::Scalar;

/// Default minimum number of distinct views a tag must appear in.
pub const DEFAULT_MIN_VIEWS: usize = 5;
pub const DEFAULT_TEMPLATE: &str = "A photo of a {}";

/// Tags recognized in one view. Duplicates collapse to their first occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewTags {
    view_id: String,
    tags: Vec<String>,
}

impl ViewTags {
    pub fn new<I, T>(view_id: impl Into<String>, tags: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let view_id = view_id.into();
        check_identifier(&view_id)?;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for t in tags {
            let t = t.as_ref().trim();
            if t.is_empty() {
                return Err(Error::Invalid(format!("view {view_id}: empty tag name")));
            }
            if seen.insert(t.to_string()) {
                out.push(t.to_string());
            }
        }
        Ok(Self { view_id, tags: out })
    }

    pub fn view_id(&self) -> &str {
        &self.view_id
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagDecision {
    pub tag: String,
    pub keep: bool,
    pub reason: String,
}

/// One decision per input tag, in input order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilterReport {
    pub view_id: String,
    pub decisions: Vec<TagDecision>,
}

/// Decides whether a generated tag is a plausible object noun.
pub trait NoiseFilter {
    /// `Ok(reason)` to keep, `Err(reason)` to drop.
    fn judge(&self, tag: &str) -> std::result::Result<String, String>;
}

impl<F: Fn(&str) -> bool> NoiseFilter for F {
    fn judge(&self, tag: &str) -> std::result::Result<String, String> {
        if self(tag) {
            Ok("accepted by predicate".into())
        } else {
            Err("rejected by predicate".into())
        }
    }
}

/// Word stoplist, matched case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stoplist {
    words: BTreeSet<String>,
}

impl Stoplist {
    pub fn new<I, T>(words: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        Self {
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.trim().to_lowercase())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn format(&self) -> String {
        self.words.iter().map(|w| format!("{w}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&format::read_file(path)?))
    }
}

impl NoiseFilter for Stoplist {
    fn judge(&self, tag: &str) -> std::result::Result<String, String> {
        if self.contains(tag) {
            Err("in stoplist".into())
        } else {
            Ok("not in stoplist".into())
        }
    }
}

pub fn filter_tags<F: NoiseFilter + ?Sized>(view_tags: &ViewTags, filter: &F) -> (ViewTags, FilterReport) {
    let mut kept = Vec::new();
    let mut decisions = Vec::with_capacity(view_tags.tags.len());
    for tag in &view_tags.tags {
        let (keep, reason) = match filter.judge(tag) {
            Ok(r) => (true, r),
            Err(r) => (false, r),
        };
        if keep {
            kept.push(tag.clone());
        }
        decisions.push(TagDecision {
            tag: tag.clone(),
            keep,
            reason,
        });
    }
    (
        ViewTags {
            view_id: view_tags.view_id.clone(),
            tags: kept,
        },
        FilterReport {
            view_id: view_tags.view_id.clone(),
            decisions,
        },
    )
}

/// Scene-level vocabulary. Order defines tag-class indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SceneTagSet {
    tags: Vec<String>,
}

impl SceneTagSet {
    pub fn new<I, T>(tags: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for t in tags {
            let t = t.into();
            if t.trim().is_empty() {
                return Err(Error::Invalid("empty scene tag".into()));
            }
            if !seen.insert(t.clone()) {
                return Err(Error::Duplicate(format!("scene tag {t:?}")));
            }
            out.push(t);
        }
        Ok(Self { tags: out })
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// One tag per line.
    pub fn format(&self) -> String {
        self.tags.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string),
        )
    }
}

/// Keeps tags seen in at least `min_views` distinct views.
///
/// Output order: by the first view in which a tag appears, tags first seen
/// in the same view sorted lexicographically.
pub fn multi_view_vote(all_views: &[ViewTags], min_views: usize) -> Result<SceneTagSet> {
    if min_views == 0 {
        return Err(Error::Invalid("min_views must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<Vec<&str>> = Vec::with_capacity(all_views.len());
    for view in all_views {
        let mut first_seen = Vec::new();
        // ViewTags already collapses duplicates, so each tag counts once per view.
        for tag in &view.tags {
            let c = counts.entry(tag.as_str()).or_insert(0);
            if *c == 0 {
                first_seen.push(tag.as_str());
            }
            *c += 1;
        }
        first_seen.sort_unstable();
        order.push(first_seen);
    }
    let kept = order
        .into_iter()
        .flatten()
        .filter(|t| counts[t] >= min_views)
        .map(str::to_string);
    SceneTagSet::new(kept)
}

/// `min_views` actually applied to a scene with `view_count` views: scenes
/// with fewer views than requested vote with all of their views.
pub fn effective_min_views(requested: usize, view_count: usize) -> usize {
    requested.min(view_count).max(1)
}

pub fn build_text_queries(scene_tags: &SceneTagSet, template: &str) -> Result<Vec<String>> {
    let placeholders = template.matches("{}").count();
    if placeholders != 1 {
        return Err(Error::Invalid(format!(
            "template {template:?} must contain exactly one `{{}}` placeholder, found {placeholders}"
        )));
    }
    Ok(scene_tags.tags.iter().map(|t| template.replacen("{}", t, 1)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub view_id: String,
    pub text: String,
    pub embedding: Option<String>,
}

/// Captions per view, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CaptionSet {
    captions: Vec<Caption>,
}

impl CaptionSet {
    pub fn new(captions: Vec<Caption>) -> Result<Self> {
        for c in &captions {
            check_identifier(&c.view_id)?;
            if c.text.contains('\n') || c.text.contains('|') {
                return Err(Error::Invalid(format!(
                    "caption text {:?} may not contain `|` or newlines",
                    c.text
                )));
            }
            if let Some(e) = &c.embedding {
                check_identifier(e)?;
            }
        }
        Ok(Self { captions })
    }

    pub fn captions(&self) -> &[Caption] {
        &self.captions
    }

    /// Distinct embedding names in first-appearance order.
    pub fn embedding_names(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.captions
            .iter()
            .filter_map(|c| c.embedding.clone())
            .filter(|e| seen.insert(e.clone()))
            .collect()
    }

    /// Resolves every caption to a bank entry of kind `caption`.
    pub fn associate<S: Scalar>(&self, bank: &EmbeddingBank<S>) -> Result<EmbeddingBank<S>> {
        for c in &self.captions {
            let name = c
                .embedding
                .as_deref()
                .ok_or_else(|| Error::Missing(format!("caption {:?} has no embedding name", c.text)))?;
            match bank.get(name) {
                Some(e) if e.kind == EntryKind::Caption => {}
                Some(_) => return Err(Error::Invalid(format!("bank entry {name:?} is not a caption"))),
                None => return Err(Error::Missing(format!("caption embedding {name:?}"))),
            }
        }
        bank.select(self.embedding_names())
    }
}

const TAGS_FORMAT: &str = "DMA-TAGS";
const TAGS_HEADER: &str = "DMA-TAGS v1";
const CAPS_FORMAT: &str = "DMA-CAPS";
const CAPS_HEADER: &str = "DMA-CAPS v1";

/// Splits `view <id> : <rest>`.
fn split_view_line<'a>(format: &'static str, n: usize, line: &'a str) -> Result<(&'a str, &'a str)> {
    let (head, rest) = line
        .split_once(':')
        .ok_or_else(|| Error::parse(format, n, "expected `view <id> : ...`"))?;
    let mut parts = head.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some("view"), Some(id), None) => Ok((id, rest.trim())),
        _ => Err(Error::parse(format, n, "expected `view <id> : ...`")),
    }
}

pub fn format_tags(views: &[ViewTags]) -> String {
    let mut out = format!("{TAGS_HEADER}\n");
    for v in views {
        out.push_str(&format!("view {} : {}\n", v.view_id, v.tags.join(", ")));
    }
    out
}

pub fn parse_tags(text: &str) -> Result<Vec<ViewTags>> {
    let mut lines = LineReader::new(TAGS_FORMAT, text);
    lines.expect_header(TAGS_HEADER)?;
    let mut views = Vec::new();
    let mut ids = HashSet::new();
    while let Some((n, line)) = lines.next_line() {
        let (id, rest) = split_view_line(TAGS_FORMAT, n, line)?;
        if !ids.insert(id.to_string()) {
            return Err(Error::parse(TAGS_FORMAT, n, format!("duplicate view {id}")));
        }
        let tags = rest.split(',').map(str::trim).filter(|t| !t.is_empty());
        views.push(ViewTags::new(id, tags).map_err(|e| Error::parse(TAGS_FORMAT, n, e.to_string()))?);
    }
    Ok(views)
}

pub fn load_tags(path: &Path) -> Result<Vec<ViewTags>> {
    parse_tags(&format::read_file(path)?)
}

pub fn format_captions(set: &CaptionSet) -> String {
    let mut out = format!("{CAPS_HEADER}\n");
    for c in &set.captions {
        match &c.embedding {
            Some(e) => out.push_str(&format!("view {} : {} | {}\n", c.view_id, c.text, e)),
            None => out.push_str(&format!("view {} : {}\n", c.view_id, c.text)),
        }
    }
    out
}

pub fn parse_captions(text: &str) -> Result<CaptionSet> {
    let mut lines = LineReader::new(CAPS_FORMAT, text);
    lines.expect_header(CAPS_HEADER)?;
    let mut captions = Vec::new();
    while let Some((n, line)) = lines.next_line() {
        let (id, rest) = split_view_line(CAPS_FORMAT, n, line)?;
        let (text, embedding) = match rest.rsplit_once('|') {
            Some((t, e)) => {
                let e = e.trim();
                if e.is_empty() || e.contains(char::is_whitespace) {
                    return Err(Error::parse(CAPS_FORMAT, n, format!("invalid embedding name {e:?}")));
                }
                (t.trim(), Some(e.to_string()))
            }
            None => (rest, None),
        };
        if text.is_empty() {
            return Err(Error::parse(CAPS_FORMAT, n, "empty caption"));
        }
        captions.push(Caption {
            view_id: id.to_string(),
            text: text.to_string(),
            embedding,
        });
    }
    CaptionSet::new(captions)
}

pub fn load_captions(path: &Path) -> Result<CaptionSet> {
    parse_captions(&format::read_file(path)?)
}

pub fn format_filter_reports(reports: &[FilterReport]) -> String {
    let mut out = String::new();
    for r in reports {
        for d in &r.decisions {
            let verdict = if d.keep { "keep" } else { "drop" };
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.view_id, d.tag, verdict, d.reason));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize;
    use proptest::prelude::*;

    fn vt(id: &str, tags: &[&str]) -> ViewTags {
        ViewTags::new(id, tags.iter().copied()).unwrap()
    }

    #[test]
    fn stoplist_filter() {
        let stop = Stoplist::new(["purple", "blue", "lay"]);
        let (kept, report) = filter_tags(&vt("v0", &["purple", "chair"]), &stop);
        assert_eq!(kept.tags(), &["chair".to_string()]);
        assert_eq!(report.decisions.len(), 2);
        assert!(!report.decisions[0].keep);
        assert_eq!(report.decisions[0].reason, "in stoplist");

        let (same, _) = filter_tags(&vt("v0", &["purple", "chair"]), &Stoplist::default());
        assert_eq!(same.tags().len(), 2);
        let (none, _) = filter_tags(&vt("v0", &["Blue", "lay"]), &stop);
        assert!(none.tags().is_empty());
    }

    #[test]
    fn closure_predicate() {
        let (kept, report) = filter_tags(&vt("v", &["chair", "x"]), &|t: &str| t.len() > 1);
        assert_eq!(kept.tags(), &["chair".to_string()]);
        assert_eq!(report.decisions[1].reason, "rejected by predicate");
    }

    #[test]
    fn duplicates_collapse() {
        assert_eq!(vt("v", &["a", "b", "a"]).tags(), &["a".to_string(), "b".to_string()]);
        assert!(ViewTags::new("v", ["a", " "]).is_err());
    }

    #[test]
    fn vote_five_of_ten() {
        let views: Vec<ViewTags> = (0..10)
            .map(|i| {
                let mut tags = vec!["wall"];
                if i < 5 {
                    tags.push("chair");
                }
                if i >= 6 {
                    tags.push("ukulele");
                }
                vt(&format!("v{i}"), &tags)
            })
            .collect();
        let set = multi_view_vote(&views, 5).unwrap();
        assert_eq!(set.tags(), &["chair".to_string(), "wall".to_string()]);
    }

    #[test]
    fn vote_edge_cases() {
        let set = multi_view_vote(&[vt("v", &["b", "a"])], 1).unwrap();
        assert_eq!(set.tags(), &["a".to_string(), "b".to_string()]);
        assert!(multi_view_vote(&[], 5).unwrap().is_empty());
        assert!(multi_view_vote(&[], 0).is_err());
        assert_eq!(effective_min_views(5, 3), 3);
        assert_eq!(effective_min_views(5, 10), 5);
        assert_eq!(effective_min_views(5, 0), 1);
    }

    #[test]
    fn queries() {
        let set = SceneTagSet::new(["chair"]).unwrap();
        assert_eq!(
            build_text_queries(&set, "A photo of a {}").unwrap(),
            vec!["A photo of a chair"]
        );
        assert!(build_text_queries(&SceneTagSet::default(), DEFAULT_TEMPLATE)
            .unwrap()
            .is_empty());
        assert!(build_text_queries(&set, "A photo").is_err());
        assert!(build_text_queries(&set, "{} and {}").is_err());
    }

    #[test]
    fn tags_and_captions_round_trip() {
        let views = vec![vt("v0", &["office chair", "table"]), vt("v1", &[])];
        assert_eq!(parse_tags(&format_tags(&views)).unwrap(), views);
        let caps = CaptionSet::new(vec![
            Caption {
                view_id: "v0".into(),
                text: "a chair near a table".into(),
                embedding: Some("cap0".into()),
            },
            Caption {
                view_id: "v1".into(),
                text: "an empty room".into(),
                embedding: None,
            },
        ])
        .unwrap();
        assert_eq!(parse_captions(&format_captions(&caps)).unwrap(), caps);
        assert!(matches!(parse_tags("DMA-TAGS v2\n"), Err(Error::Version { .. })));
        assert!(matches!(
            parse_tags("DMA-TAGS v1\nview a b : x\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn caption_association() {
        let mut bank = EmbeddingBank::<f64>::new(2);
        bank.push("cap0", EntryKind::Caption, normalize(&[1.0, 0.0]).unwrap())
            .unwrap();
        bank.push("chair", EntryKind::Tag, normalize(&[0.0, 1.0]).unwrap())
            .unwrap();
        let ok = CaptionSet::new(vec![Caption {
            view_id: "v".into(),
            text: "t".into(),
            embedding: Some("cap0".into()),
        }])
        .unwrap();
        assert_eq!(ok.associate(&bank).unwrap().len(), 1);
        let missing = CaptionSet::new(vec![Caption {
            view_id: "v".into(),
            text: "t".into(),
            embedding: Some("nope".into()),
        }])
        .unwrap();
        assert!(matches!(missing.associate(&bank), Err(Error::Missing(_))));
        let wrong_kind = CaptionSet::new(vec![Caption {
            view_id: "v".into(),
            text: "t".into(),
            embedding: Some("chair".into()),
        }])
        .unwrap();
        assert!(wrong_kind.associate(&bank).is_err());
    }

    fn arb_views() -> impl Strategy<Value = Vec<Vec<u8>>> {
        proptest::collection::vec(proptest::collection::vec(0u8..8, 0..6), 0..8)
    }

    fn to_views(raw: &[Vec<u8>]) -> Vec<ViewTags> {
        raw.iter()
            .enumerate()
            .map(|(i, tags)| ViewTags::new(format!("v{i}"), tags.iter().map(|t| format!("t{t}"))).unwrap())
            .collect()
    }

    fn sorted(set: &SceneTagSet) -> Vec<String> {
        let mut v = set.tags().to_vec();
        v.sort();
        v
    }

    proptest! {
        #[test]
        fn voting_is_monotone(raw in arb_views(), extra in proptest::collection::vec(0u8..8, 0..6), min_views in 1usize..4) {
            let views = to_views(&raw);
            let before = multi_view_vote(&views, min_views).unwrap();
            let mut more = views.clone();
            more.push(ViewTags::new("extra", extra.iter().map(|t| format!("t{t}"))).unwrap());
            let after = multi_view_vote(&more, min_views).unwrap();
            for t in before.tags() {
                prop_assert!(after.tags().contains(t));
            }
        }

        #[test]
        fn voting_ignores_view_order(raw in arb_views(), min_views in 1usize..4) {
            let views = to_views(&raw);
            let mut reversed = views.clone();
            reversed.reverse();
            let a = multi_view_vote(&views, min_views).unwrap();
            let b = multi_view_vote(&reversed, min_views).unwrap();
            prop_assert_eq!(sorted(&a), sorted(&b));
        }

        #[test]
        fn filter_then_vote_commutes_with_dedup(raw in arb_views(), min_views in 1usize..4) {
            let stop = Stoplist::new(["t0", "t3"]);
            // Duplicate every tag inside its view before building ViewTags.
            let doubled: Vec<ViewTags> = raw
                .iter()
                .enumerate()
                .map(|(i, tags)| ViewTags::new(format!("v{i}"), tags.iter().chain(tags.iter()).map(|t| format!("t{t}"))).unwrap())
                .collect();
            let filter_all = |vs: &[ViewTags]| -> Vec<ViewTags> { vs.iter().map(|v| filter_tags(v, &stop).0).collect() };
            let a = multi_view_vote(&filter_all(&to_views(&raw)), min_views).unwrap();
            let b = multi_view_vote(&filter_all(&doubled), min_views).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
