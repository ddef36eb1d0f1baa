//! Cross-dataset consistency checks: rule-based screening of shared mention
//! surfaces, and tagger-based cross-validation producing an F1 matrix. The
//! trainable tagger is abstracted behind a contract with two realizations:
//! an in-process memorization baseline and a line-protocol subprocess.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use aho_corasick::{AhoCorasick, MatchKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::{is_nfc, UnicodeNormalization};

use crate::corpus::{Corpus, Dataset, EntityMention, Sample, Split, UniversalLabel};
use crate::eval::{count_matches, MatchCounts, SpanTriple};
use crate::util::{char_len, char_slice, CharIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    WrongCategory,
    NotExtracted,
    PartiallyExtracted,
}

/// One conflicting occurrence: a surface annotated `label` in dataset A that
/// dataset B treats differently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConflictCase {
    pub surface: String,
    pub label: String,
    pub dataset_a: String,
    pub dataset_b: String,
    pub error_type: ErrorType,
    /// Sample in A where the surface carries the label.
    pub a_example: String,
    /// Sample in B containing the conflicting occurrence.
    pub b_example: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PairCounts {
    pub consistent: usize,
    pub wrong_category: usize,
    pub not_extracted: usize,
    pub partially_extracted: usize,
    /// Occurrences inside a larger extracted entity in B; not shared.
    pub excluded: usize,
}

impl PairCounts {
    pub fn total_shared(&self) -> usize {
        self.consistent + self.wrong_category + self.not_extracted + self.partially_extracted
    }

    pub fn conflicting(&self) -> usize {
        self.wrong_category + self.not_extracted + self.partially_extracted
    }

    pub fn conflict_rate(&self) -> f64 {
        let total = self.total_shared();
        if total == 0 {
            0.0
        } else {
            self.conflicting() as f64 / total as f64
        }
    }
}

/// Screening result for one (source dataset, target dataset, source label)
/// direction.
#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    pub dataset_a: String,
    pub dataset_b: String,
    pub label: String,
    /// Labels in B regarded as the same concept when the pair was formed.
    pub partner_labels: Vec<String>,
    pub counts: PairCounts,
    pub total_shared: usize,
    pub conflict_rate: f64,
    pub low_confidence: bool,
    pub examples: Vec<ConflictCase>,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ConflictReport {
    pub pairs: Vec<PairReport>,
}

/// Which label pairs to screen: surfaces annotated `label` in `dataset_a`
/// are checked against `dataset_b`'s annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPair {
    pub dataset_a: String,
    pub dataset_b: String,
    pub label: String,
    pub partner_labels: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct ScreenOptions {
    /// Pairs with fewer shared occurrences are flagged low-confidence.
    pub min_support: usize,
    /// Example cases kept per pair.
    pub max_examples: usize,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        ScreenOptions { min_support: 20, max_examples: 10 }
    }
}

/// Groups of label names treated as the same concept when pairing datasets.
#[derive(Debug, Clone, Default)]
pub struct SynonymSet {
    group_of: BTreeMap<String, usize>,
    groups: Vec<BTreeSet<String>>,
}

impl SynonymSet {
    pub fn new(groups: Vec<Vec<String>>) -> Self {
        let mut set = SynonymSet::default();
        for group in groups {
            let idx = set.groups.len();
            let members: BTreeSet<String> = group.into_iter().collect();
            for m in &members {
                set.group_of.insert(m.clone(), idx);
            }
            set.groups.push(members);
        }
        set
    }

    /// JSON form: an array of string arrays.
    pub fn from_reader<R: io::Read>(r: R) -> Result<Self, serde_json::Error> {
        let groups: Vec<Vec<String>> = serde_json::from_reader(r)?;
        Ok(Self::new(groups))
    }

    /// The label itself plus everything grouped with it.
    pub fn partners(&self, label: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        out.insert(label.to_string());
        if let Some(&idx) = self.group_of.get(label) {
            out.extend(self.groups[idx].iter().cloned());
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConflictError {
    #[error("unknown dataset {0:?} in label pair")]
    UnknownDataset(String),
    #[error("dataset {dataset:?} has no label {label:?}")]
    UnknownLabel { dataset: String, label: String },
    #[error("tagger failed on pair {train:?} -> {test:?}: {source}")]
    Tagger { train: String, test: String, source: TaggerError },
}

/// Enumerates every ordered dataset pair and every label of A that B also
/// carries, either by exact name or through the synonym set.
pub fn default_label_pairs(corpus: &Corpus, synonyms: &SynonymSet) -> Vec<LabelPair> {
    let mut pairs = Vec::new();
    for a in corpus.datasets() {
        for b in corpus.datasets() {
            if a.id() == b.id() {
                continue;
            }
            let b_labels: BTreeSet<String> = b.label_set.iter().map(|l| l.render()).collect();
            for label in &a.label_set {
                let label = label.render();
                let partner_labels: BTreeSet<String> = synonyms
                    .partners(&label)
                    .into_iter()
                    .filter(|p| b_labels.contains(p))
                    .collect();
                if !partner_labels.is_empty() {
                    pairs.push(LabelPair {
                        dataset_a: a.id().to_string(),
                        dataset_b: b.id().to_string(),
                        label,
                        partner_labels,
                    });
                }
            }
        }
    }
    pairs
}

/// A sample with NFC-normalized text and mention spans projected into it.
/// Matching is exact on NFC forms; the projection assumes mention boundaries
/// sit on composition-stable positions (true for word-aligned annotations).
struct ProjectedSample {
    id: String,
    text: String,
    mentions: Vec<(usize, usize, String)>,
}

fn nfc_string(s: &str) -> String {
    s.nfc().collect()
}

fn project_sample(sample: &Sample) -> ProjectedSample {
    if is_nfc(&sample.text) {
        return ProjectedSample {
            id: sample.id.clone(),
            text: sample.text.clone(),
            mentions: sample
                .mentions
                .iter()
                .map(|m| (m.start, m.end, m.label.render()))
                .collect(),
        };
    }
    let project = |offset: usize| -> usize {
        char_slice(&sample.text, 0, offset)
            .map(|prefix| char_len(&nfc_string(&prefix)))
            .unwrap_or(offset)
    };
    ProjectedSample {
        id: sample.id.clone(),
        text: nfc_string(&sample.text),
        mentions: sample
            .mentions
            .iter()
            .map(|m| (project(m.start), project(m.end), m.label.render()))
            .collect(),
    }
}

enum OccurrenceClass {
    Consistent,
    Conflict(ErrorType),
    Excluded,
}

/// Precedence: exact span beats containment beats partial overlap.
fn classify_occurrence(
    occ: (usize, usize),
    mentions: &[(usize, usize, String)],
    source_label: &str,
) -> OccurrenceClass {
    let mut any_exact = false;
    for (s, e, label) in mentions {
        if (*s, *e) == occ {
            any_exact = true;
            if label == source_label {
                return OccurrenceClass::Consistent;
            }
        }
    }
    if any_exact {
        return OccurrenceClass::Conflict(ErrorType::WrongCategory);
    }
    if mentions
        .iter()
        .any(|(s, e, _)| *s <= occ.0 && occ.1 <= *e && (*e - *s) > (occ.1 - occ.0))
    {
        return OccurrenceClass::Excluded;
    }
    if mentions.iter().any(|(s, e, _)| *s < occ.1 && occ.0 < *e) {
        return OccurrenceClass::Conflict(ErrorType::PartiallyExtracted);
    }
    OccurrenceClass::Conflict(ErrorType::NotExtracted)
}

/// Screens every requested label pair: collects surfaces annotated with the
/// source label in A, finds their occurrences in B's texts, and classifies
/// each occurrence against B's annotations.
pub fn screen_conflicts(
    corpus: &Corpus,
    pairs: &[LabelPair],
    opts: &ScreenOptions,
) -> Result<ConflictReport, ConflictError> {
    for pair in pairs {
        let a = corpus
            .dataset(&pair.dataset_a)
            .ok_or_else(|| ConflictError::UnknownDataset(pair.dataset_a.clone()))?;
        let b = corpus
            .dataset(&pair.dataset_b)
            .ok_or_else(|| ConflictError::UnknownDataset(pair.dataset_b.clone()))?;
        if !a.label_set.iter().any(|l| l.render() == pair.label) {
            return Err(ConflictError::UnknownLabel {
                dataset: pair.dataset_a.clone(),
                label: pair.label.clone(),
            });
        }
        for partner in &pair.partner_labels {
            if !b.label_set.iter().any(|l| l.render() == *partner) {
                return Err(ConflictError::UnknownLabel {
                    dataset: pair.dataset_b.clone(),
                    label: partner.clone(),
                });
            }
        }
    }

    // one automaton per (A, B) direction covering all screened labels
    let mut groups: BTreeMap<(String, String), Vec<&LabelPair>> = BTreeMap::new();
    for pair in pairs {
        groups
            .entry((pair.dataset_a.clone(), pair.dataset_b.clone()))
            .or_default()
            .push(pair);
    }

    let group_reports: Vec<Vec<PairReport>> = groups
        .par_iter()
        .map(|((a_id, b_id), group)| screen_group(corpus, a_id, b_id, group, opts))
        .collect();

    let mut report = ConflictReport::default();
    for mut group in group_reports {
        report.pairs.append(&mut group);
    }
    report
        .pairs
        .sort_by(|x, y| {
            (&x.dataset_a, &x.dataset_b, &x.label).cmp(&(&y.dataset_a, &y.dataset_b, &y.label))
        });
    Ok(report)
}

fn screen_group(
    corpus: &Corpus,
    a_id: &str,
    b_id: &str,
    group: &[&LabelPair],
    opts: &ScreenOptions,
) -> Vec<PairReport> {
    let a = corpus.dataset(a_id).expect("validated");
    let b = corpus.dataset(b_id).expect("validated");

    // (label, NFC surface) -> first A sample carrying it
    let screened: BTreeSet<&str> = group.iter().map(|p| p.label.as_str()).collect();
    let mut surface_examples: BTreeMap<(String, String), String> = BTreeMap::new();
    for sample in &a.samples {
        for m in &sample.mentions {
            let label = m.label.render();
            if !screened.contains(label.as_str()) || m.surface.is_empty() {
                continue;
            }
            surface_examples
                .entry((label, nfc_string(&m.surface)))
                .or_insert_with(|| sample.id.clone());
        }
    }

    let patterns: Vec<(&(String, String), &String)> = surface_examples.iter().collect();
    let automaton = AhoCorasick::builder()
        .match_kind(MatchKind::Standard)
        .build(patterns.iter().map(|((_, surface), _)| surface.as_str()))
        .expect("surface patterns are plain strings");

    let mut counts: BTreeMap<&str, PairCounts> = BTreeMap::new();
    let mut examples: BTreeMap<&str, Vec<ConflictCase>> = BTreeMap::new();
    for pair in group {
        counts.insert(pair.label.as_str(), PairCounts::default());
        examples.insert(pair.label.as_str(), Vec::new());
    }

    for sample in &b.samples {
        let projected = project_sample(sample);
        let index = CharIndex::new(&projected.text);
        let mut occurrences: Vec<(usize, usize, usize)> = automaton
            .find_overlapping_iter(&projected.text)
            .map(|m| {
                let start = index.char_at(m.start());
                let pattern = m.pattern().as_usize();
                let ((_, surface), _) = patterns[pattern];
                (start, start + char_len(surface), pattern)
            })
            .collect();
        occurrences.sort_unstable();

        for (start, end, pattern) in occurrences {
            let ((label, surface), a_example) = patterns[pattern];
            let counts = counts.get_mut(label.as_str()).expect("pattern from group");
            match classify_occurrence((start, end), &projected.mentions, label) {
                OccurrenceClass::Consistent => counts.consistent += 1,
                OccurrenceClass::Excluded => counts.excluded += 1,
                OccurrenceClass::Conflict(error_type) => {
                    match error_type {
                        ErrorType::WrongCategory => counts.wrong_category += 1,
                        ErrorType::NotExtracted => counts.not_extracted += 1,
                        ErrorType::PartiallyExtracted => counts.partially_extracted += 1,
                    }
                    let cases = examples.get_mut(label.as_str()).expect("pattern from group");
                    if cases.len() < opts.max_examples {
                        cases.push(ConflictCase {
                            surface: surface.clone(),
                            label: label.clone(),
                            dataset_a: a_id.to_string(),
                            dataset_b: b_id.to_string(),
                            error_type,
                            a_example: a_example.clone(),
                            b_example: projected.id.clone(),
                        });
                    }
                }
            }
        }
    }

    group
        .iter()
        .map(|pair| {
            let counts = counts[pair.label.as_str()];
            PairReport {
                dataset_a: a_id.to_string(),
                dataset_b: b_id.to_string(),
                label: pair.label.clone(),
                partner_labels: pair.partner_labels.iter().cloned().collect(),
                counts,
                total_shared: counts.total_shared(),
                conflict_rate: counts.conflict_rate(),
                low_confidence: counts.total_shared() < opts.min_support,
                examples: examples.remove(pair.label.as_str()).unwrap_or_default(),
            }
        })
        .collect()
}

/// Human-readable screening summary, one line per pair.
pub fn render_conflict_text(report: &ConflictReport) -> String {
    let mut out = String::from(
        "source -> target | label | shared | consistent | wrong_cat | not_extr | partial | rate | flags\n",
    );
    for p in &report.pairs {
        out.push_str(&format!(
            "{} -> {} | {} | {} | {} | {} | {} | {} | {:.3} | {}\n",
            p.dataset_a,
            p.dataset_b,
            p.label,
            p.total_shared,
            p.counts.consistent,
            p.counts.wrong_category,
            p.counts.not_extracted,
            p.counts.partially_extracted,
            p.conflict_rate,
            if p.low_confidence { "low_confidence" } else { "-" }
        ));
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum TaggerError {
    #[error("training failed: {0}")]
    Train(String),
    #[error("prediction failed: {0}")]
    Predict(String),
    #[error("subprocess io: {0}")]
    Subprocess(#[from] io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// Trainable tagger contract: train once, then predict mentions per text,
/// restricted to an allowed label list at evaluation time.
pub trait Tagger {
    fn train(&self, dataset: &Dataset) -> Result<Box<dyn TaggerModel>, TaggerError>;
}

pub trait TaggerModel {
    fn predict(&mut self, text: &str, allowed: &[String]) -> Result<Vec<EntityMention>, TaggerError>;
}

/// Baseline tagger: memorizes each training surface's majority label and
/// predicts by greedy longest-match, left-to-right, non-overlapping lookup.
/// The allowed-label restriction applies after matching.
#[derive(Debug, Default, Clone, Copy)]
pub struct MemorizationTagger;

pub struct MemorizationModel {
    automaton: Option<AhoCorasick>,
    labels: Vec<UniversalLabel>,
}

impl Tagger for MemorizationTagger {
    fn train(&self, dataset: &Dataset) -> Result<Box<dyn TaggerModel>, TaggerError> {
        let mut votes: BTreeMap<&str, BTreeMap<String, usize>> = BTreeMap::new();
        for sample in &dataset.samples {
            for m in &sample.mentions {
                if m.surface.is_empty() {
                    continue;
                }
                *votes
                    .entry(m.surface.as_str())
                    .or_default()
                    .entry(m.label.render())
                    .or_default() += 1;
            }
        }
        let mut surfaces = Vec::with_capacity(votes.len());
        let mut labels = Vec::with_capacity(votes.len());
        for (surface, tally) in votes {
            // majority label, ties to the lexicographically smaller name
            let best = tally
                .iter()
                .max_by(|(la, ca), (lb, cb)| ca.cmp(cb).then_with(|| lb.cmp(la)))
                .map(|(label, _)| label.clone())
                .expect("tally non-empty");
            surfaces.push(surface);
            labels.push(UniversalLabel::parse(&best).expect("rendered labels re-parse"));
        }
        let automaton = if surfaces.is_empty() {
            None
        } else {
            Some(
                AhoCorasick::builder()
                    .match_kind(MatchKind::LeftmostLongest)
                    .build(&surfaces)
                    .map_err(|e| TaggerError::Train(e.to_string()))?,
            )
        };
        Ok(Box::new(MemorizationModel { automaton, labels }))
    }
}

impl TaggerModel for MemorizationModel {
    fn predict(&mut self, text: &str, allowed: &[String]) -> Result<Vec<EntityMention>, TaggerError> {
        let automaton = match &self.automaton {
            Some(a) => a,
            None => return Ok(Vec::new()),
        };
        let allowed: BTreeSet<&str> = allowed.iter().map(|s| s.as_str()).collect();
        let index = CharIndex::new(text);
        let mut out = Vec::new();
        for m in automaton.find_iter(text) {
            let label = &self.labels[m.pattern().as_usize()];
            if !allowed.contains(label.render().as_str()) {
                continue;
            }
            let start = index.char_at(m.start());
            let end = index.char_at(m.end());
            out.push(EntityMention::over_text(label.clone(), start, end, text));
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct TagRequest {
    cmd: String,
    #[serde(default)]
    payload: Vec<Sample>,
    #[serde(default)]
    allowed: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct TagStatus {
    status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    message: Option<String>,
}

/// Serves a tagger over a line protocol: requests are
/// `{"cmd":"train","payload":[samples]}` answered by `{"status":"ok"}`, and
/// `{"cmd":"predict","payload":[samples],"allowed":[labels]}` answered by
/// one corpus-schema sample line per payload entry.
pub fn serve_tagger<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    tagger: &dyn Tagger,
) -> Result<(), TaggerError> {
    let mut model: Option<Box<dyn TaggerModel>> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: TagRequest = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                respond_status(&mut writer, "error", Some(format!("bad request: {e}")))?;
                continue;
            }
        };
        match request.cmd.as_str() {
            "train" => {
                let meta = match request.payload.first() {
                    Some(first) => crate::corpus::DatasetMeta {
                        id: first.dataset_id.clone(),
                        name: first.dataset_id.clone(),
                        language: first.language.clone(),
                        domain: "served".into(),
                        split: Split::Train,
                        nested: false,
                    },
                    None => {
                        respond_status(&mut writer, "error", Some("empty train payload".into()))?;
                        continue;
                    }
                };
                match Dataset::from_parts(meta, request.payload) {
                    Ok(dataset) => match tagger.train(&dataset) {
                        Ok(m) => {
                            model = Some(m);
                            respond_status(&mut writer, "ok", None)?;
                        }
                        Err(e) => respond_status(&mut writer, "error", Some(e.to_string()))?,
                    },
                    Err(e) => respond_status(&mut writer, "error", Some(e.to_string()))?,
                }
            }
            "predict" => {
                let allowed = request.allowed.unwrap_or_default();
                match &mut model {
                    None => respond_status(&mut writer, "error", Some("train first".into()))?,
                    Some(model) => {
                        for mut sample in request.payload {
                            sample.mentions = model.predict(&sample.text, &allowed)?;
                            sample.sort_mentions();
                            serde_json::to_writer(&mut writer, &sample)
                                .map_err(|e| TaggerError::Protocol(e.to_string()))?;
                            writer.write_all(b"\n")?;
                        }
                        writer.flush()?;
                    }
                }
            }
            other => {
                respond_status(&mut writer, "error", Some(format!("unknown cmd {other:?}")))?
            }
        }
    }
    Ok(())
}

fn respond_status<W: Write>(
    writer: &mut W,
    status: &str,
    message: Option<String>,
) -> Result<(), TaggerError> {
    let line = serde_json::to_string(&TagStatus { status: status.into(), message })
        .map_err(|e| TaggerError::Protocol(e.to_string()))?;
    writer.write_all(line.as_bytes())?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

/// Tagger that shells out to `argv` speaking the serve_tagger protocol.
pub struct SubprocessTagger {
    argv: Vec<String>,
}

impl SubprocessTagger {
    pub fn new(argv: Vec<String>) -> Self {
        SubprocessTagger { argv }
    }
}

pub struct SubprocessModel {
    child: Child,
    stdin: ChildStdin,
    stdout: io::BufReader<ChildStdout>,
    query: u64,
}

impl Tagger for SubprocessTagger {
    fn train(&self, dataset: &Dataset) -> Result<Box<dyn TaggerModel>, TaggerError> {
        let program = self
            .argv
            .first()
            .ok_or_else(|| TaggerError::Train("empty tagger command".into()))?;
        let mut child = Command::new(program)
            .args(&self.argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped");
        let mut stdout = io::BufReader::new(child.stdout.take().expect("piped"));

        let request = TagRequest {
            cmd: "train".into(),
            payload: dataset.samples.clone(),
            allowed: None,
        };
        let line =
            serde_json::to_string(&request).map_err(|e| TaggerError::Protocol(e.to_string()))?;
        stdin.write_all(line.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()?;

        let mut response = String::new();
        stdout.read_line(&mut response)?;
        let status: TagStatus = serde_json::from_str(&response)
            .map_err(|e| TaggerError::Protocol(format!("bad train response: {e}")))?;
        if status.status != "ok" {
            return Err(TaggerError::Train(
                status.message.unwrap_or_else(|| "tagger refused".into()),
            ));
        }
        Ok(Box::new(SubprocessModel { child, stdin, stdout, query: 0 }))
    }
}

impl TaggerModel for SubprocessModel {
    fn predict(&mut self, text: &str, allowed: &[String]) -> Result<Vec<EntityMention>, TaggerError> {
        self.query += 1;
        let stub = Sample {
            id: format!("query:{}", self.query),
            dataset_id: "query".into(),
            language: "und".into(),
            text: text.to_string(),
            mentions: Vec::new(),
        };
        let request = TagRequest {
            cmd: "predict".into(),
            payload: vec![stub],
            allowed: Some(allowed.to_vec()),
        };
        let line =
            serde_json::to_string(&request).map_err(|e| TaggerError::Protocol(e.to_string()))?;
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;

        let mut response = String::new();
        if self.stdout.read_line(&mut response)? == 0 {
            return Err(TaggerError::Protocol("tagger closed its output".into()));
        }
        if let Ok(sample) = serde_json::from_str::<Sample>(&response) {
            return Ok(sample.mentions);
        }
        match serde_json::from_str::<TagStatus>(&response) {
            Ok(status) => Err(TaggerError::Predict(
                status.message.unwrap_or_else(|| "tagger error".into()),
            )),
            Err(e) => Err(TaggerError::Protocol(format!("bad predict response: {e}"))),
        }
    }
}

impl Drop for SubprocessModel {
    fn drop(&mut self) {
        // closing stdin ends the serve loop; reap to avoid zombies
        let _ = self.stdin.flush();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Cell {
    #[serde(flatten)]
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<MatchCounts> for F1Cell {
    fn from(counts: MatchCounts) -> Self {
        F1Cell {
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
        }
    }
}

/// Cross-validation grid for one target label: rows are training datasets,
/// columns are test datasets. Diagonal cells use a held-out split (same
/// dataset name and language, test split); absent held-out data omits the
/// cell.
#[derive(Debug, Clone, Serialize)]
pub struct F1Matrix {
    pub target_label: String,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub cells: Vec<Vec<Option<F1Cell>>>,
}

impl F1Matrix {
    /// CSV with a header row/column of dataset ids; cells carry F1 in
    /// percent, blank when omitted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train\\test");
        for id in &self.test_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (row, train_id) in self.cells.iter().zip(&self.train_ids) {
            out.push_str(train_id);
            for cell in row {
                out.push(',');
                if let Some(cell) = cell {
                    out.push_str(&format!("{:.2}", cell.f1 * 100.0));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn label_triples(sample: &Sample, target: &str) -> Vec<SpanTriple> {
    sample
        .mentions
        .iter()
        .filter(|m| m.label.render() == target)
        .map(|m| SpanTriple { label: m.label.render(), start: m.start, end: m.end })
        .collect()
}

fn score_pair(
    model: &mut dyn TaggerModel,
    test: &Dataset,
    target: &str,
) -> Result<MatchCounts, TaggerError> {
    let allowed = vec![target.to_string()];
    let mut counts = MatchCounts::default();
    for sample in &test.samples {
        let gold = label_triples(sample, target);
        let predicted = model.predict(&sample.text, &allowed)?;
        let pred: Vec<SpanTriple> = predicted
            .iter()
            .filter(|m| m.label.render() == target)
            .map(|m| SpanTriple { label: m.label.render(), start: m.start, end: m.end })
            .collect();
        counts.add(count_matches(&gold, &pred));
    }
    Ok(counts)
}

/// Trains on every listed dataset and evaluates on every other, strict span
/// micro-F1 restricted to `target_label`.
pub fn cross_validate(
    corpus: &Corpus,
    tagger: &dyn Tagger,
    dataset_ids: &[String],
    target_label: &str,
) -> Result<F1Matrix, ConflictError> {
    let mut datasets = Vec::with_capacity(dataset_ids.len());
    for id in dataset_ids {
        let dataset = corpus
            .dataset(id)
            .ok_or_else(|| ConflictError::UnknownDataset(id.clone()))?;
        if !dataset.label_set.iter().any(|l| l.render() == target_label) {
            return Err(ConflictError::UnknownLabel {
                dataset: id.clone(),
                label: target_label.to_string(),
            });
        }
        datasets.push(dataset);
    }

    let mut cells: Vec<Vec<Option<F1Cell>>> = Vec::with_capacity(datasets.len());
    for train in &datasets {
        let mut model = tagger.train(train).map_err(|source| ConflictError::Tagger {
            train: train.id().to_string(),
            test: "-".into(),
            source,
        })?;
        let mut row = Vec::with_capacity(datasets.len());
        for test in &datasets {
            let effective: Option<&Dataset> = if train.id() == test.id() {
                corpus.datasets().iter().find(|d| {
                    d.id() != train.id()
                        && d.meta.name == train.meta.name
                        && d.meta.language == train.meta.language
                        && d.meta.split == Split::Test
                })
            } else {
                Some(*test)
            };
            match effective {
                None => row.push(None),
                Some(test_set) => {
                    let counts = score_pair(model.as_mut(), test_set, target_label).map_err(
                        |source| ConflictError::Tagger {
                            train: train.id().to_string(),
                            test: test_set.id().to_string(),
                            source,
                        },
                    )?;
                    row.push(Some(counts.into()));
                }
            }
        }
        cells.push(row);
    }
    let ids: Vec<String> = datasets.iter().map(|d| d.id().to_string()).collect();
    Ok(F1Matrix {
        target_label: target_label.to_string(),
        train_ids: ids.clone(),
        test_ids: ids,
        cells,
    })
}
