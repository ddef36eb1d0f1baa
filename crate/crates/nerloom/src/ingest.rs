//! Readers for raw datasets: token-per-line BIO/BIOES tag files and
//! span-annotated JSONL, plus the raw label table that translates tag symbols
//! (`LOC`, `PER`, ...) into natural-language labels.
//!
//! Translation is total or the dataset aborts: a raw label missing from the
//! table is an error, never a silent passthrough. Structural problems in
//! individual samples (bad spans, surface mismatches) reject that sample and
//! are reported; they do not abort the dataset.

use std::collections::BTreeMap;
use std::io::{self, BufRead};

use serde::Deserialize;

use crate::corpus::{
    validate_sample, CorpusError, Dataset, DatasetMeta, EntityMention, LabelError, Sample,
    UniversalLabel, Violation, ViolationKind,
};
use crate::util::char_len;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagScheme {
    Bio,
    Bioes,
}

/// Raw tag symbol -> natural-language label. Loaded from a JSON object of
/// the form `{"LOC": "location", "PER": "person"}`.
#[derive(Debug, Clone)]
pub struct RawLabelTable {
    map: BTreeMap<String, UniversalLabel>,
}

impl RawLabelTable {
    pub fn new(map: BTreeMap<String, UniversalLabel>) -> Self {
        RawLabelTable { map }
    }

    pub fn from_reader<R: io::Read>(r: R) -> Result<Self, IngestError> {
        let raw: BTreeMap<String, String> =
            serde_json::from_reader(r).map_err(|source| IngestError::Json { line: 0, source })?;
        let mut map = BTreeMap::new();
        for (k, v) in raw {
            let label = UniversalLabel::parse(&v)
                .map_err(|source| IngestError::BadLabel { raw: k.clone(), source })?;
            map.insert(k, label);
        }
        Ok(RawLabelTable { map })
    }

    pub fn translate(&self, raw: &str) -> Option<&UniversalLabel> {
        self.map.get(raw)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// label -> raw symbol, required by the debug renderer. Errors when two
    /// symbols map to the same label.
    fn inverse(&self) -> Result<BTreeMap<&UniversalLabel, &str>, RenderError> {
        let mut inv: BTreeMap<&UniversalLabel, &str> = BTreeMap::new();
        for (raw, label) in &self.map {
            if inv.insert(label, raw).is_some() {
                return Err(RenderError::NotInvertible(label.render()));
            }
        }
        Ok(inv)
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Concatenate tokens without separators (Chinese-style corpora).
    pub no_space_join: bool,
    /// Turn tag-sequence repairs into hard errors.
    pub strict: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {detail}")]
    MalformedLine { line: usize, detail: String },
    #[error("line {line}: unknown tag prefix in {tag:?}")]
    UnknownTagPrefix { line: usize, tag: String },
    #[error("line {line}: dangling continuation tag {tag:?}")]
    DanglingContinuation { line: usize, tag: String },
    #[error("line {line}: entity run still open at {tag:?}")]
    UnterminatedRun { line: usize, tag: String },
    #[error("raw label {raw:?} missing from the label table")]
    UnmappedLabel { raw: String },
    #[error("label table entry {raw:?} is not a valid label: {source}")]
    BadLabel { raw: String, source: LabelError },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct IngestWarning {
    pub line: usize,
    pub message: String,
}

/// A sample rejected by per-sample validation, with the rules it broke.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RejectedSample {
    pub line: usize,
    pub sample_id: String,
    pub violations: Vec<Violation>,
}

#[derive(Debug)]
pub struct IngestReport {
    pub dataset: Dataset,
    pub warnings: Vec<IngestWarning>,
    pub rejected: Vec<RejectedSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TagAction<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
    End(&'a str),
    Single(&'a str),
}

fn parse_tag<'a>(tag: &'a str, scheme: TagScheme, line: usize) -> Result<TagAction<'a>, IngestError> {
    if tag == "O" {
        return Ok(TagAction::Outside);
    }
    let (prefix, ty) = match tag.split_once('-') {
        Some(p) => p,
        None => {
            return Err(IngestError::UnknownTagPrefix { line, tag: tag.to_string() });
        }
    };
    if ty.is_empty() {
        return Err(IngestError::MalformedLine {
            line,
            detail: format!("tag {tag:?} has an empty type"),
        });
    }
    match (prefix, scheme) {
        ("B", _) => Ok(TagAction::Begin(ty)),
        ("I", _) => Ok(TagAction::Inside(ty)),
        ("E", TagScheme::Bioes) => Ok(TagAction::End(ty)),
        ("S", TagScheme::Bioes) => Ok(TagAction::Single(ty)),
        _ => Err(IngestError::UnknownTagPrefix { line, tag: tag.to_string() }),
    }
}

struct SentenceBuilder<'t> {
    table: &'t RawLabelTable,
    opts: &'t IngestOptions,
    scheme: TagScheme,
}

impl<'t> SentenceBuilder<'t> {
    /// Turns one sentence of (token, tag, line) rows into text plus mentions.
    fn build(
        &self,
        rows: &[(String, String, usize)],
        warnings: &mut Vec<IngestWarning>,
    ) -> Result<(String, Vec<EntityMention>), IngestError> {
        let mut text = String::new();
        let mut bounds = Vec::with_capacity(rows.len());
        let mut cursor = 0usize;
        for (i, (token, _, _)) in rows.iter().enumerate() {
            if i > 0 && !self.opts.no_space_join {
                text.push(' ');
                cursor += 1;
            }
            let start = cursor;
            text.push_str(token);
            cursor += char_len(token);
            bounds.push((start, cursor));
        }

        // (type, first token index, last token index)
        let mut runs: Vec<(&str, usize, usize)> = Vec::new();
        let mut open: Option<(&str, usize)> = None;

        macro_rules! close {
            ($upto:expr) => {
                if let Some((ty, from)) = open.take() {
                    runs.push((ty, from, $upto));
                }
            };
        }

        for (i, (_, tag, line)) in rows.iter().enumerate() {
            let action = parse_tag(tag, self.scheme, *line)?;
            match action {
                TagAction::Outside => close!(i - 1),
                TagAction::Begin(ty) => {
                    if open.is_some() && self.scheme == TagScheme::Bioes {
                        if self.opts.strict {
                            return Err(IngestError::UnterminatedRun { line: *line, tag: tag.clone() });
                        }
                        warnings.push(IngestWarning {
                            line: *line,
                            message: format!("run closed without E- before {tag:?}"),
                        });
                    }
                    close!(i - 1);
                    open = Some((ty, i));
                }
                TagAction::Inside(ty) => match open {
                    Some((cur, _)) if cur == ty => {}
                    _ => {
                        if self.opts.strict {
                            return Err(IngestError::DanglingContinuation {
                                line: *line,
                                tag: tag.clone(),
                            });
                        }
                        warnings.push(IngestWarning {
                            line: *line,
                            message: format!("dangling {tag:?} treated as B-{ty}"),
                        });
                        close!(i - 1);
                        open = Some((ty, i));
                    }
                },
                TagAction::End(ty) => match open {
                    Some((cur, from)) if cur == ty => {
                        runs.push((ty, from, i));
                        open = None;
                    }
                    _ => {
                        if self.opts.strict {
                            return Err(IngestError::DanglingContinuation {
                                line: *line,
                                tag: tag.clone(),
                            });
                        }
                        warnings.push(IngestWarning {
                            line: *line,
                            message: format!("dangling {tag:?} treated as S-{ty}"),
                        });
                        close!(i - 1);
                        runs.push((ty, i, i));
                    }
                },
                TagAction::Single(ty) => {
                    if open.is_some() {
                        if self.opts.strict {
                            return Err(IngestError::UnterminatedRun { line: *line, tag: tag.clone() });
                        }
                        warnings.push(IngestWarning {
                            line: *line,
                            message: format!("run closed without E- before {tag:?}"),
                        });
                        close!(i - 1);
                    }
                    runs.push((ty, i, i));
                }
            }
        }
        if let Some((ty, from)) = open.take() {
            let last = rows.len() - 1;
            let (_, tag, line) = &rows[last];
            if self.scheme == TagScheme::Bioes {
                if self.opts.strict {
                    return Err(IngestError::UnterminatedRun { line: *line, tag: tag.clone() });
                }
                warnings.push(IngestWarning {
                    line: *line,
                    message: format!("run for {ty:?} still open at sentence end"),
                });
            }
            runs.push((ty, from, last));
        }

        let mut mentions = Vec::with_capacity(runs.len());
        for (ty, from, to) in runs {
            let label = self
                .table
                .translate(ty)
                .ok_or_else(|| IngestError::UnmappedLabel { raw: ty.to_string() })?;
            let start = bounds[from].0;
            let end = bounds[to].1;
            mentions.push(EntityMention::over_text(label.clone(), start, end, &text));
        }
        Ok((text, mentions))
    }
}

/// Parses a token-per-line tag file: token in the first column, tag in the
/// last, blank line between sentences. Every raw type must be present in
/// `table` or the whole dataset aborts.
pub fn parse_tagged<R: BufRead>(
    reader: R,
    scheme: TagScheme,
    table: &RawLabelTable,
    meta: DatasetMeta,
    opts: &IngestOptions,
) -> Result<IngestReport, IngestError> {
    let builder = SentenceBuilder { table, opts, scheme };
    let mut warnings = Vec::new();
    let mut samples = Vec::new();
    let mut rows: Vec<(String, String, usize)> = Vec::new();

    let flush = |rows: &mut Vec<(String, String, usize)>,
                 samples: &mut Vec<Sample>,
                 warnings: &mut Vec<IngestWarning>|
     -> Result<(), IngestError> {
        if rows.is_empty() {
            return Ok(());
        }
        let (text, mentions) = builder.build(rows, warnings)?;
        let n = samples.len() + 1;
        samples.push(Sample {
            id: format!("{}:{}", meta.id, n),
            dataset_id: meta.id.clone(),
            language: meta.language.clone(),
            text,
            mentions,
        });
        rows.clear();
        Ok(())
    };

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            flush(&mut rows, &mut samples, &mut warnings)?;
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(IngestError::MalformedLine {
                line: lineno,
                detail: format!("expected token and tag columns, got {line:?}"),
            });
        }
        rows.push((cols[0].to_string(), cols[cols.len() - 1].to_string(), lineno));
    }
    flush(&mut rows, &mut samples, &mut warnings)?;

    let dataset = Dataset::from_parts(meta, samples)?;
    Ok(IngestReport { dataset, warnings, rejected: Vec::new() })
}

#[derive(Deserialize)]
struct RawMentionLine {
    start: usize,
    end: usize,
    label: String,
    #[serde(default)]
    surface: Option<String>,
}

#[derive(Deserialize)]
struct RawSampleLine {
    #[serde(default)]
    id: Option<String>,
    text: String,
    #[serde(default)]
    mentions: Vec<RawMentionLine>,
}

/// Parses span-annotated JSONL: `{"id"?, "text", "mentions": [{"start",
/// "end", "label", "surface"?}]}` per line. Labels are translated through
/// `table`; samples breaking span rules are rejected and reported.
pub fn parse_span_jsonl<R: BufRead>(
    reader: R,
    table: &RawLabelTable,
    meta: DatasetMeta,
    _opts: &IngestOptions,
) -> Result<IngestReport, IngestError> {
    let mut samples = Vec::new();
    let mut rejected = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSampleLine = serde_json::from_str(&line)
            .map_err(|source| IngestError::Json { line: lineno, source })?;

        let id = raw.id.unwrap_or_else(|| format!("{}:{}", meta.id, lineno));
        let mut violations = Vec::new();
        let mut mentions = Vec::new();
        for m in &raw.mentions {
            let label = table
                .translate(&m.label)
                .ok_or_else(|| IngestError::UnmappedLabel { raw: m.label.clone() })?;
            let mention = EntityMention::over_text(label.clone(), m.start, m.end, &raw.text);
            if let Some(given) = &m.surface {
                if *given != mention.surface {
                    violations.push(Violation {
                        rule: ViolationKind::SurfaceMismatch,
                        mention: Some(mentions.len()),
                        detail: format!(
                            "given surface {:?} != text slice {:?}",
                            given, mention.surface
                        ),
                    });
                }
            }
            mentions.push(mention);
        }
        // raw order is not meaningful; canonicalize before validation
        mentions.sort_by_key(|m| (m.start, m.end));
        let sample = Sample {
            id: id.clone(),
            dataset_id: meta.id.clone(),
            language: meta.language.clone(),
            text: raw.text,
            mentions,
        };
        violations.extend(validate_sample(&sample, meta.nested));
        if violations.is_empty() {
            samples.push(sample);
        } else {
            rejected.push(RejectedSample { line: lineno, sample_id: id, violations });
        }
    }

    let dataset = Dataset::from_parts(meta, samples)?;
    Ok(IngestReport { dataset, warnings: Vec::new(), rejected })
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("label {0:?} has no unique raw symbol")]
    NotInvertible(String),
    #[error("label {0:?} missing from the label table")]
    UnmappedLabel(String),
    #[error("sample {sample}: mention span ({}, {}) does not align with token boundaries", span.0, span.1)]
    MisalignedMention { sample: String, span: (usize, usize) },
}

/// Debug renderer: writes a dataset back out as token-tag lines. Inverse of
/// `parse_tagged` for well-formed data; used to test round-tripping and to
/// eyeball ingest output.
pub fn render_tagged(
    dataset: &Dataset,
    scheme: TagScheme,
    table: &RawLabelTable,
    no_space_join: bool,
) -> Result<String, RenderError> {
    let inverse = table.inverse()?;
    let mut out = String::new();
    for (si, sample) in dataset.samples.iter().enumerate() {
        if si > 0 {
            out.push('\n');
        }
        let tokens: Vec<String> = if no_space_join {
            sample.text.chars().map(|c| c.to_string()).collect()
        } else {
            sample.text.split(' ').map(|t| t.to_string()).collect()
        };
        let mut bounds = Vec::with_capacity(tokens.len());
        let mut cursor = 0usize;
        for (i, t) in tokens.iter().enumerate() {
            if i > 0 && !no_space_join {
                cursor += 1;
            }
            let start = cursor;
            cursor += char_len(t);
            bounds.push((start, cursor));
        }
        let mut tags = vec!["O".to_string(); tokens.len()];
        for m in &sample.mentions {
            let raw = inverse
                .get(&m.label)
                .ok_or_else(|| RenderError::UnmappedLabel(m.label.render()))?;
            let from = bounds.iter().position(|b| b.0 == m.start);
            let to = bounds.iter().position(|b| b.1 == m.end);
            let (from, to) = match (from, to) {
                (Some(f), Some(t)) if f <= t => (f, t),
                _ => {
                    return Err(RenderError::MisalignedMention {
                        sample: sample.id.clone(),
                        span: (m.start, m.end),
                    })
                }
            };
            for (pos, tag) in tags.iter_mut().enumerate().take(to + 1).skip(from) {
                *tag = match scheme {
                    TagScheme::Bio => {
                        if pos == from {
                            format!("B-{raw}")
                        } else {
                            format!("I-{raw}")
                        }
                    }
                    TagScheme::Bioes => {
                        if from == to {
                            format!("S-{raw}")
                        } else if pos == from {
                            format!("B-{raw}")
                        } else if pos == to {
                            format!("E-{raw}")
                        } else {
                            format!("I-{raw}")
                        }
                    }
                };
            }
        }
        for (t, tag) in tokens.iter().zip(&tags) {
            out.push_str(t);
            out.push(' ');
            out.push_str(tag);
            out.push('\n');
        }
    }
    Ok(out)
}
