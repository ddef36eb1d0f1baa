//! Core data model: labels, mentions, samples, datasets, corpus-level
//! statistics, and the JSONL interchange format every pipeline stage reads
//! and writes.
//!
//! Offsets are always char offsets (Unicode scalar values), never bytes.
//! A persisted sample line carries exactly `{id, dataset_id, language, text,
//! mentions}` with `mentions: [{start, end, label}]`; mention surfaces are
//! derived from the text on load, not stored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::util::{char_len, char_slice};

/// Hierarchical entity label. Rendered segments are joined with `->`,
/// e.g. `location->scene`. Parsing trims whitespace around segments, so
/// `location -> scene` reads back as the same label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UniversalLabel {
    segments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("label is empty")]
    Empty,
    #[error("label {0:?} contains an empty segment")]
    EmptySegment(String),
}

impl UniversalLabel {
    pub fn new<I, S>(segments: I) -> Result<Self, LabelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments
            .into_iter()
            .map(|s| s.into().trim().to_string())
            .collect();
        if segments.is_empty() {
            return Err(LabelError::Empty);
        }
        if segments.iter().any(|s| s.is_empty()) {
            return Err(LabelError::EmptySegment(segments.join("->")));
        }
        Ok(UniversalLabel { segments })
    }

    pub fn parse(s: &str) -> Result<Self, LabelError> {
        if s.trim().is_empty() {
            return Err(LabelError::Empty);
        }
        let segments: Vec<&str> = s.split("->").collect();
        if segments.iter().any(|seg| seg.trim().is_empty()) {
            return Err(LabelError::EmptySegment(s.to_string()));
        }
        UniversalLabel::new(segments)
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// Canonical rendered form; `parse(render(l)) == l`.
    pub fn render(&self) -> String {
        self.segments.join("->")
    }

    pub fn parent(&self) -> Option<UniversalLabel> {
        if self.segments.len() < 2 {
            return None;
        }
        Some(UniversalLabel {
            segments: self.segments[..self.segments.len() - 1].to_vec(),
        })
    }

    pub fn leaf(&self) -> &str {
        self.segments.last().expect("label has at least one segment")
    }

    pub fn first_segment(&self) -> &str {
        &self.segments[0]
    }
}

impl fmt::Display for UniversalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for UniversalLabel {
    type Err = LabelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UniversalLabel::parse(s)
    }
}

impl Serialize for UniversalLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for UniversalLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        UniversalLabel::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One annotated entity occurrence. `surface` always mirrors
/// `text[start..end]` of the owning sample (in char offsets); it exists so
/// downstream consumers never re-slice, and it is rederived on load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMention {
    pub label: UniversalLabel,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl EntityMention {
    /// Builds a mention over `text`, deriving the surface. Out-of-range spans
    /// get an empty surface and are left for `validate_sample` to flag.
    pub fn over_text(label: UniversalLabel, start: usize, end: usize, text: &str) -> Self {
        let surface = char_slice(text, start, end).unwrap_or_default();
        EntityMention { label, start, end, surface }
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub dataset_id: String,
    pub language: String,
    pub text: String,
    pub mentions: Vec<EntityMention>,
}

#[derive(Serialize)]
struct MentionRecordRef<'a> {
    start: usize,
    end: usize,
    label: &'a UniversalLabel,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MentionRecord {
    start: usize,
    end: usize,
    label: UniversalLabel,
}

#[derive(Serialize)]
struct SampleRecordRef<'a> {
    id: &'a str,
    dataset_id: &'a str,
    language: &'a str,
    text: &'a str,
    mentions: Vec<MentionRecordRef<'a>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    dataset_id: String,
    language: String,
    text: String,
    mentions: Vec<MentionRecord>,
}

impl Serialize for Sample {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SampleRecordRef {
            id: &self.id,
            dataset_id: &self.dataset_id,
            language: &self.language,
            text: &self.text,
            mentions: self
                .mentions
                .iter()
                .map(|m| MentionRecordRef { start: m.start, end: m.end, label: &m.label })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Sample {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rec = SampleRecord::deserialize(deserializer)?;
        let mentions = rec
            .mentions
            .into_iter()
            .map(|m| EntityMention::over_text(m.label, m.start, m.end, &rec.text))
            .collect();
        Ok(Sample {
            id: rec.id,
            dataset_id: rec.dataset_id,
            language: rec.language,
            text: rec.text,
            mentions,
        })
    }
}

impl Sample {
    /// Distinct labels among this sample's mentions, sorted.
    pub fn label_set(&self) -> BTreeSet<&UniversalLabel> {
        self.mentions.iter().map(|m| &m.label).collect()
    }

    pub fn text_char_len(&self) -> usize {
        char_len(&self.text)
    }

    /// Sorts mentions into the canonical (start, end) order.
    pub fn sort_mentions(&mut self) {
        self.mentions.sort_by_key(|m| (m.start, m.end));
    }
}

/// Validation outcome for one rule breach. Violations are data, not
/// failures: callers decide whether to drop, repair, or abort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: ViolationKind,
    /// Index into `sample.mentions` when the breach is mention-specific.
    pub mention: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptySpan,
    SpanOutOfBounds,
    SurfaceMismatch,
    MentionsUnsorted,
    PartialOverlap,
    OverlapInFlat,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::EmptySpan => "empty span",
            ViolationKind::SpanOutOfBounds => "span out of bounds",
            ViolationKind::SurfaceMismatch => "surface mismatch",
            ViolationKind::MentionsUnsorted => "mentions unsorted",
            ViolationKind::PartialOverlap => "partial overlap",
            ViolationKind::OverlapInFlat => "overlap in flat dataset",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Checks one sample against the span rules. `nested` permits containment
/// between mentions; partial boundary crossings are violations in both modes.
pub fn validate_sample(sample: &Sample, nested: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    let text_len = sample.text_char_len();

    let mut in_bounds: Vec<usize> = Vec::new();
    for (i, m) in sample.mentions.iter().enumerate() {
        if m.start >= m.end {
            out.push(Violation {
                rule: ViolationKind::EmptySpan,
                mention: Some(i),
                detail: format!("empty or inverted span ({}, {})", m.start, m.end),
            });
            continue;
        }
        if m.end > text_len {
            out.push(Violation {
                rule: ViolationKind::SpanOutOfBounds,
                mention: Some(i),
                detail: format!("span ({}, {}) exceeds text length {}", m.start, m.end, text_len),
            });
            continue;
        }
        let slice = char_slice(&sample.text, m.start, m.end).unwrap_or_default();
        if slice != m.surface {
            out.push(Violation {
                rule: ViolationKind::SurfaceMismatch,
                mention: Some(i),
                detail: format!("surface {:?} != text slice {:?}", m.surface, slice),
            });
        }
        in_bounds.push(i);
    }

    for w in sample.mentions.windows(2) {
        if (w[1].start, w[1].end) < (w[0].start, w[0].end) {
            out.push(Violation {
                rule: ViolationKind::MentionsUnsorted,
                mention: None,
                detail: "mentions are not sorted by (start, end)".to_string(),
            });
            break;
        }
    }

    // pairwise overlap check over valid spans; mentions are few per sample
    for (ai, &a) in in_bounds.iter().enumerate() {
        for &b in &in_bounds[ai + 1..] {
            let (m, n) = (&sample.mentions[a], &sample.mentions[b]);
            let (s1, e1) = (m.start.min(n.start), m.end.max(n.end));
            let overlap = m.start < n.end && n.start < m.end;
            if !overlap {
                continue;
            }
            let contained = (m.start <= n.start && n.end <= m.end)
                || (n.start <= m.start && m.end <= n.end);
            if !contained {
                out.push(Violation {
                    rule: ViolationKind::PartialOverlap,
                    mention: Some(b),
                    detail: format!(
                        "spans ({}, {}) and ({}, {}) cross within ({}, {})",
                        m.start, m.end, n.start, n.end, s1, e1
                    ),
                });
            } else if !nested {
                out.push(Violation {
                    rule: ViolationKind::OverlapInFlat,
                    mention: Some(b),
                    detail: format!(
                        "spans ({}, {}) and ({}, {}) overlap in a flat dataset",
                        m.start, m.end, n.start, n.end
                    ),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Descriptive dataset fields, shared by `Dataset` and the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub id: String,
    pub name: String,
    pub language: String,
    pub domain: String,
    pub split: Split,
    pub nested: bool,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum CorpusError {
    #[error("dataset {dataset:?}: duplicate sample id {id:?}")]
    DuplicateSampleId { dataset: String, id: String },
    #[error("duplicate dataset id {0:?}")]
    DuplicateDatasetId(String),
    #[error("sample id {id:?} appears in datasets {first:?} and {second:?}")]
    CrossDatasetSampleId { id: String, first: String, second: String },
    #[error("sample {sample:?} references unknown dataset {dataset:?}")]
    UnknownDataset { sample: String, dataset: String },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// Current label inventory: the distinct labels of this dataset's
    /// mentions. Rebuilt whenever mentions are relabeled.
    pub label_set: BTreeSet<UniversalLabel>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Assembles a dataset, rejecting duplicate sample ids outright.
    /// Duplicate ids are a hard error rather than a violation because ids
    /// key every downstream trace, selection, and prediction artifact.
    pub fn from_parts(meta: DatasetMeta, samples: Vec<Sample>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateSampleId {
                    dataset: meta.id.clone(),
                    id: s.id.clone(),
                });
            }
        }
        let mut ds = Dataset { meta, label_set: BTreeSet::new(), samples };
        ds.rebuild_label_set();
        Ok(ds)
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn rebuild_label_set(&mut self) {
        self.label_set = self
            .samples
            .iter()
            .flat_map(|s| s.mentions.iter().map(|m| m.label.clone()))
            .collect();
    }

    pub fn mention_count(&self) -> usize {
        self.samples.iter().map(|s| s.mentions.len()).sum()
    }

    /// Violations across all samples, keyed by sample id.
    pub fn validate(&self) -> Vec<(String, Violation)> {
        let mut out = Vec::new();
        for s in &self.samples {
            for v in validate_sample(s, self.meta.nested) {
                out.push((s.id.clone(), v));
            }
        }
        out
    }
}

/// An immutable collection of datasets with corpus-wide unique sample ids.
#[derive(Debug, Clone)]
pub struct Corpus {
    datasets: Vec<Dataset>,
}

impl Corpus {
    pub fn new(datasets: Vec<Dataset>) -> Result<Self, CorpusError> {
        let mut ds_ids = BTreeSet::new();
        let mut sample_owner: BTreeMap<&str, &str> = BTreeMap::new();
        for d in &datasets {
            if !ds_ids.insert(d.meta.id.as_str()) {
                return Err(CorpusError::DuplicateDatasetId(d.meta.id.clone()));
            }
            for s in &d.samples {
                if let Some(first) = sample_owner.insert(s.id.as_str(), d.meta.id.as_str()) {
                    return Err(CorpusError::CrossDatasetSampleId {
                        id: s.id.clone(),
                        first: first.to_string(),
                        second: d.meta.id.clone(),
                    });
                }
            }
        }
        Ok(Corpus { datasets })
    }

    /// Rebuilds a corpus from dataset descriptions plus a flat sample list,
    /// the shape every stage reads back from disk.
    pub fn assemble(metas: Vec<DatasetMeta>, samples: Vec<Sample>) -> Result<Self, CorpusError> {
        let mut by_id: BTreeMap<String, Vec<Sample>> =
            metas.iter().map(|m| (m.id.clone(), Vec::new())).collect();
        for s in samples {
            match by_id.get_mut(&s.dataset_id) {
                Some(v) => v.push(s),
                None => {
                    return Err(CorpusError::UnknownDataset {
                        sample: s.id,
                        dataset: s.dataset_id,
                    })
                }
            }
        }
        let datasets = metas
            .into_iter()
            .map(|meta| {
                let samples = by_id.remove(&meta.id).unwrap_or_default();
                Dataset::from_parts(meta, samples)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Corpus::new(datasets)
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn into_datasets(self) -> Vec<Dataset> {
        self.datasets
    }

    pub fn dataset(&self, id: &str) -> Option<&Dataset> {
        self.datasets.iter().find(|d| d.meta.id == id)
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.datasets.iter().flat_map(|d| d.samples.iter())
    }

    pub fn sample_count(&self) -> usize {
        self.datasets.iter().map(|d| d.samples.len()).sum()
    }

    pub fn validate(&self) -> Vec<(String, Violation)> {
        let mut out = Vec::new();
        for d in &self.datasets {
            out.extend(d.validate());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub dataset_id: String,
    pub language: String,
    pub types: usize,
    pub samples: usize,
    pub mentions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LanguageStats {
    pub language: String,
    pub datasets: usize,
    /// Distinct labels across the language group, not a per-dataset sum:
    /// two datasets sharing `location` contribute one type here.
    pub types: usize,
    pub samples: usize,
    pub mentions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Default)]
pub struct TotalStats {
    pub datasets: usize,
    /// Sum of per-language distinct type counts.
    pub types: usize,
    pub samples: usize,
    pub mentions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub per_dataset: Vec<DatasetStats>,
    pub per_language: Vec<LanguageStats>,
    pub totals: TotalStats,
}

pub fn compute_stats(corpus: &Corpus) -> CorpusStats {
    let mut per_dataset = Vec::new();
    let mut lang_types: BTreeMap<&str, BTreeSet<&UniversalLabel>> = BTreeMap::new();
    let mut lang_counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();

    for d in corpus.datasets() {
        per_dataset.push(DatasetStats {
            dataset_id: d.meta.id.clone(),
            language: d.meta.language.clone(),
            types: d.label_set.len(),
            samples: d.samples.len(),
            mentions: d.mention_count(),
        });
        let types = lang_types.entry(&d.meta.language).or_default();
        types.extend(d.label_set.iter());
        let c = lang_counts.entry(&d.meta.language).or_default();
        c.0 += 1;
        c.1 += d.samples.len();
        c.2 += d.mention_count();
    }
    per_dataset.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));

    let per_language: Vec<LanguageStats> = lang_counts
        .iter()
        .map(|(lang, (datasets, samples, mentions))| LanguageStats {
            language: lang.to_string(),
            datasets: *datasets,
            types: lang_types.get(lang).map_or(0, |t| t.len()),
            samples: *samples,
            mentions: *mentions,
        })
        .collect();

    let totals = TotalStats {
        datasets: per_language.iter().map(|l| l.datasets).sum(),
        types: per_language.iter().map(|l| l.types).sum(),
        samples: per_language.iter().map(|l| l.samples).sum(),
        mentions: per_language.iter().map(|l| l.mentions).sum(),
    };

    CorpusStats { per_dataset, per_language, totals }
}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Malformed { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes samples as JSONL, one object per line, in iteration order.
pub fn write_samples_jsonl<'a, W, I>(samples: I, mut w: W) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Sample>,
{
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(io::Error::other)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads samples from JSONL. Blank lines are skipped; any malformed line is
/// an error carrying its 1-based line number.
pub fn read_samples_jsonl<R: BufRead>(r: R) -> Result<Vec<Sample>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line)
            .map_err(|source| JsonlError::Malformed { line: i + 1, source })?;
        out.push(sample);
    }
    Ok(out)
}

/// How a raw dataset on disk is encoded, named by the dataset manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Bio,
    Bioes,
    Jsonl,
}

/// One dataset entry of the corpus manifest. `path` and `label_table` are
/// resolved relative to the manifest file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub meta: DatasetMeta,
    pub format: SourceFormat,
    pub path: String,
    pub label_table: String,
    #[serde(default)]
    pub no_space_join: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub datasets: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn from_reader<R: io::Read>(r: R) -> Result<Self, serde_json::Error> {
        serde_json::from_reader(r)
    }

    pub fn metas(&self) -> Vec<DatasetMeta> {
        self.datasets.iter().map(|e| e.meta.clone()).collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn label(s: &str) -> UniversalLabel {
        UniversalLabel::parse(s).unwrap()
    }

    fn sample(id: &str, ds: &str, text: &str, spans: &[(usize, usize, &str)]) -> Sample {
        let mentions = spans
            .iter()
            .map(|(s, e, l)| EntityMention::over_text(label(l), *s, *e, text))
            .collect();
        Sample {
            id: id.to_string(),
            dataset_id: ds.to_string(),
            language: "en".to_string(),
            text: text.to_string(),
            mentions,
        }
    }

    fn meta(id: &str, lang: &str, nested: bool) -> DatasetMeta {
        DatasetMeta {
            id: id.to_string(),
            name: id.to_uppercase(),
            language: lang.to_string(),
            domain: "news".to_string(),
            split: Split::Train,
            nested,
        }
    }

    #[test]
    fn label_round_trips_through_render() {
        for s in ["person", "location->scene", "organization->company->subsidiary"] {
            let l = label(s);
            assert_eq!(UniversalLabel::parse(&l.render()).unwrap(), l);
            assert_eq!(l.render(), s);
        }
        // spaced input parses to the same label as the compact form
        assert_eq!(label("location -> scene"), label("location->scene"));
    }

    #[test]
    fn label_rejects_empty_segments() {
        assert_eq!(UniversalLabel::parse(""), Err(LabelError::Empty));
        assert!(matches!(UniversalLabel::parse("a->"), Err(LabelError::EmptySegment(_))));
        assert!(matches!(UniversalLabel::parse("->a"), Err(LabelError::EmptySegment(_))));
        assert!(matches!(UniversalLabel::parse("a-> ->b"), Err(LabelError::EmptySegment(_))));
    }

    #[test]
    fn label_parent_chain() {
        let l = label("organization->company->subsidiary");
        let p = l.parent().unwrap();
        assert_eq!(p.render(), "organization->company");
        assert_eq!(p.parent().unwrap().render(), "organization");
        assert_eq!(p.parent().unwrap().parent(), None);
    }

    #[test]
    fn mention_offsets_are_char_offsets() {
        let s = sample("s1", "d", "北京 is the capital", &[(0, 2, "location")]);
        assert_eq!(s.mentions[0].surface, "北京");
        assert!(validate_sample(&s, false).is_empty());
    }

    #[test]
    fn validate_flags_empty_span() {
        let mut s = sample("s1", "d", "hello world", &[]);
        s.mentions.push(EntityMention {
            label: label("x"),
            start: 5,
            end: 5,
            surface: String::new(),
        });
        let v = validate_sample(&s, false);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, ViolationKind::EmptySpan);
        assert_eq!(v[0].mention, Some(0));
    }

    #[test]
    fn validate_flags_out_of_bounds_and_mismatch() {
        let mut s = sample("s1", "d", "short", &[(0, 5, "x")]);
        s.mentions[0].end = 9;
        let v = validate_sample(&s, false);
        assert_eq!(v[0].rule, ViolationKind::SpanOutOfBounds);

        let mut s = sample("s1", "d", "short", &[(0, 5, "x")]);
        s.mentions[0].surface = "wrong".to_string();
        let v = validate_sample(&s, false);
        assert_eq!(v[0].rule, ViolationKind::SurfaceMismatch);
    }

    #[test]
    fn validate_partial_overlap_in_flat() {
        let text = "abcdefghijklmnop";
        let s = sample("s1", "d", text, &[(0, 9, "x"), (4, 12, "y")]);
        let v = validate_sample(&s, false);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, ViolationKind::PartialOverlap);
    }

    #[test]
    fn validate_containment_rules() {
        let text = "abcdefghijkl";
        let s = sample("s1", "d", text, &[(0, 9, "x"), (2, 5, "y")]);
        // mentions sorted by (start, end): reorder to canonical
        let mut s2 = s.clone();
        s2.sort_mentions();
        // nested: containment is fine
        assert!(validate_sample(&s2, true).is_empty());
        // flat: containment violates
        let v = validate_sample(&s2, false);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, ViolationKind::OverlapInFlat);
        // nested but crossing spans still violate
        let s3 = sample("s1", "d", text, &[(0, 6, "x"), (4, 10, "y")]);
        let v3 = validate_sample(&s3, true);
        assert_eq!(v3[0].rule, ViolationKind::PartialOverlap);
    }

    #[test]
    fn validate_flags_unsorted_mentions() {
        let text = "one two three";
        let s = sample("s1", "d", text, &[(4, 7, "x"), (0, 3, "y")]);
        let v = validate_sample(&s, false);
        assert!(v.iter().any(|v| v.rule == ViolationKind::MentionsUnsorted), "{v:?}");
    }

    #[test]
    fn sample_serialization_shape() {
        let s = sample("s1", "d", "Belgium beat Germany", &[(0, 7, "location")]);
        let json = serde_json::to_value(&s).unwrap();
        let obj = json.as_object().unwrap();
        let keys: Vec<&String> = obj.keys().collect();
        assert_eq!(keys, ["id", "dataset_id", "language", "text", "mentions"]);
        let m = json["mentions"][0].as_object().unwrap();
        let mkeys: Vec<&String> = m.keys().collect();
        assert_eq!(mkeys, ["start", "end", "label"]);
        assert!(m.get("surface").is_none(), "surface is derived, not stored");
    }

    #[test]
    fn jsonl_round_trip_rederives_surfaces() {
        let samples = vec![
            sample("a:1", "a", "Belgium beat Germany", &[(0, 7, "location"), (13, 20, "location")]),
            sample("a:2", "a", "没有 mentions", &[]),
        ];
        let mut buf = Vec::new();
        write_samples_jsonl(&samples, &mut buf).unwrap();
        let back = read_samples_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, samples);
        assert_eq!(back[0].mentions[1].surface, "Germany");
    }

    #[test]
    fn jsonl_malformed_line_reports_line_number() {
        let data = "{\"id\":\"a\",\"dataset_id\":\"d\",\"language\":\"en\",\"text\":\"t\",\"mentions\":[]}\nnot json\n";
        let err = read_samples_jsonl(data.as_bytes()).unwrap_err();
        match err {
            JsonlError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_sample_ids_are_hard_errors() {
        let s1 = sample("dup", "d", "a", &[]);
        let s2 = sample("dup", "d", "b", &[]);
        let err = Dataset::from_parts(meta("d", "en", false), vec![s1.clone(), s2]).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateSampleId { .. }));

        let d1 = Dataset::from_parts(meta("d1", "en", false), vec![s1.clone()]).unwrap();
        let mut s3 = s1;
        s3.dataset_id = "d2".to_string();
        let d2 = Dataset::from_parts(meta("d2", "en", false), vec![s3]).unwrap();
        let err = Corpus::new(vec![d1, d2]).unwrap_err();
        assert!(matches!(err, CorpusError::CrossDatasetSampleId { .. }));
    }

    #[test]
    fn assemble_rejects_unknown_dataset() {
        let s = sample("x:1", "ghost", "text", &[]);
        let err = Corpus::assemble(vec![meta("d", "en", false)], vec![s]).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownDataset { .. }));
    }

    /// Mirrors the bundled fixture corpus: 2 datasets, 3 distinct types,
    /// 10 samples, 11 mentions, all English. Counted by hand.
    pub(crate) fn two_dataset_fixture() -> Corpus {
        type Spans<'a> = &'a [(usize, usize, &'a str)];
        let a_texts: [(&str, Spans); 5] = [
            ("Belgium beat Germany today", &[(0, 7, "location"), (13, 20, "location")]),
            ("John Smith visited Belgium", &[(0, 10, "person"), (19, 26, "location")]),
            ("New is a common word", &[(0, 3, "location")]),
            ("Antwerp hosts the fair", &[(0, 7, "location")]),
            ("Nothing happened", &[]),
        ];
        let b_texts: [(&str, Spans); 5] = [
            ("Belgium is a country .", &[(0, 7, "geo-political entity")]),
            ("New Zealand exports wool .", &[(0, 11, "geo-political entity")]),
            (
                "Antwerp lies in Belgium .",
                &[(0, 7, "geo-political entity"), (16, 23, "geo-political entity")],
            ),
            ("The river Thames flows .", &[(10, 16, "location")]),
            ("Rain fell all day .", &[]),
        ];
        let a = Dataset::from_parts(
            meta("news-a", "en", false),
            a_texts
                .iter()
                .enumerate()
                .map(|(i, (t, spans))| sample(&format!("news-a:{}", i + 1), "news-a", t, spans))
                .collect(),
        )
        .unwrap();
        let b = Dataset::from_parts(
            meta("wiki-b", "en", false),
            b_texts
                .iter()
                .enumerate()
                .map(|(i, (t, spans))| sample(&format!("wiki-b:{}", i + 1), "wiki-b", t, spans))
                .collect(),
        )
        .unwrap();
        Corpus::new(vec![a, b]).unwrap()
    }

    #[test]
    fn stats_match_hand_counts() {
        let corpus = two_dataset_fixture();
        let stats = compute_stats(&corpus);
        assert_eq!(stats.totals, TotalStats { datasets: 2, types: 3, samples: 10, mentions: 11 });
        assert_eq!(stats.per_language.len(), 1);
        assert_eq!(stats.per_language[0].types, 3, "location is shared, counted once");
        assert_eq!(stats.per_dataset[0].dataset_id, "news-a");
        assert_eq!(stats.per_dataset[0].types, 2);
        assert_eq!(stats.per_dataset[1].types, 2);
    }

    #[test]
    fn stats_invariant_under_dataset_permutation() {
        let corpus = two_dataset_fixture();
        let mut datasets = corpus.datasets().to_vec();
        datasets.reverse();
        let permuted = Corpus::new(datasets).unwrap();
        assert_eq!(compute_stats(&corpus), compute_stats(&permuted));
    }

    #[test]
    fn stats_empty_corpus_is_all_zeros() {
        let corpus = Corpus::new(Vec::new()).unwrap();
        let stats = compute_stats(&corpus);
        assert_eq!(stats.totals, TotalStats::default());
        assert!(stats.per_dataset.is_empty());
        assert!(stats.per_language.is_empty());
    }

    #[test]
    fn manifest_parses_with_flattened_meta() {
        let json = r#"{
            "datasets": [{
                "id": "news-a", "name": "News A", "language": "en",
                "domain": "news", "split": "train", "nested": false,
                "format": "bio", "path": "news_a.bio",
                "label_table": "news_a.labels.json"
            }]
        }"#;
        let m = DatasetManifest::from_reader(json.as_bytes()).unwrap();
        assert_eq!(m.datasets.len(), 1);
        assert_eq!(m.datasets[0].meta.id, "news-a");
        assert_eq!(m.datasets[0].format, SourceFormat::Bio);
        assert!(!m.datasets[0].no_space_join);
    }
}
