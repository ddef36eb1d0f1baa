//! Strict span micro-F1 scoring for generative NER output: response parsing
//! with a fixed chain of format repairs, surface-to-span resolution, exact
//! (label, start, end) matching, and multi-run aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample};
use crate::util::{char_len, CharIndex};

/// Exact-match counts. Precision/recall/F1 are fractions in [0,1]; the CSV
/// renderings scale to percent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MatchCounts {
    pub fn add(&mut self, other: MatchCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_from_pr(self.precision(), self.recall())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; works on any scale (fractions or
/// percents) since the scale factor cancels.
pub fn f1_from_pr(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One gold or predicted entity: exact triple used for matching.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanTriple {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

pub fn sample_triples(sample: &Sample) -> Vec<SpanTriple> {
    sample
        .mentions
        .iter()
        .map(|m| SpanTriple { label: m.label.render(), start: m.start, end: m.end })
        .collect()
}

/// One-to-one exact matching over multisets of triples.
pub fn count_matches(gold: &[SpanTriple], pred: &[SpanTriple]) -> MatchCounts {
    let mut gold_counts: BTreeMap<&SpanTriple, u64> = BTreeMap::new();
    for g in gold {
        *gold_counts.entry(g).or_default() += 1;
    }
    let mut tp = 0u64;
    for p in pred {
        if let Some(n) = gold_counts.get_mut(p) {
            if *n > 0 {
                *n -= 1;
                tp += 1;
            }
        }
    }
    MatchCounts { tp, fp: pred.len() as u64 - tp, fn_: gold.len() as u64 - tp }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FixKind {
    StripCodeFence,
    TrimProse,
    RequoteSingleQuotes,
    DropUnpromptedLabel,
}

impl FixKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FixKind::StripCodeFence => "strip_code_fence",
            FixKind::TrimProse => "trim_prose",
            FixKind::RequoteSingleQuotes => "requote_single_quotes",
            FixKind::DropUnpromptedLabel => "drop_unprompted_label",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Fix {
    pub kind: FixKind,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct ParsedResponse {
    /// Label -> surfaces, in response order.
    pub surfaces: Vec<(String, Vec<String>)>,
    pub fixes: Vec<Fix>,
    pub parse_failed: bool,
}

fn strip_code_fence(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    // skip an optional language word on the fence line
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(&body[..end])
}

/// First balanced `{...}` region, brace counting suspended inside quoted
/// strings (single or double, with backslash escapes).
fn first_object_region(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + c.len_utf8()]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Rewrites single-quoted JSON strings as double-quoted ones.
fn requote_single_quotes(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_double = false;
    let mut in_single = false;
    let mut escaped = false;
    for c in text.chars() {
        if escaped {
            // \' inside a single-quoted string becomes a plain apostrophe
            if in_single && c == '\'' {
                out.push('\'');
            } else {
                out.push('\\');
                out.push(c);
            }
            escaped = false;
            continue;
        }
        match c {
            '\\' => escaped = true,
            '"' if !in_single => {
                in_double = !in_double;
                out.push('"');
            }
            '"' if in_single => out.push_str("\\\""),
            '\'' if !in_double => {
                in_single = !in_single;
                out.push('"');
            }
            _ => out.push(c),
        }
    }
    out
}

fn object_to_surfaces(value: &serde_json::Map<String, serde_json::Value>) -> Option<Vec<(String, Vec<String>)>> {
    let mut out = Vec::with_capacity(value.len());
    for (label, v) in value {
        let surfaces = match v {
            serde_json::Value::Array(items) => {
                let mut surfaces = Vec::with_capacity(items.len());
                for item in items {
                    surfaces.push(item.as_str()?.to_string());
                }
                surfaces
            }
            _ => return None,
        };
        out.push((label.clone(), surfaces));
    }
    Some(out)
}

/// Recovers a label -> surfaces mapping from a model response. Repairs are
/// applied in a fixed order and logged; an unrecoverable response yields an
/// empty mapping with `parse_failed` set.
pub fn parse_response(text: &str, prompted_labels: &BTreeSet<String>) -> ParsedResponse {
    let mut parsed = ParsedResponse::default();
    let mut working = text;

    if let Some(inner) = strip_code_fence(text) {
        parsed.fixes.push(Fix {
            kind: FixKind::StripCodeFence,
            detail: "unwrapped a fenced code block".into(),
        });
        working = inner;
    }

    let region = match first_object_region(working) {
        Some(r) => r,
        None => {
            parsed.parse_failed = true;
            return parsed;
        }
    };
    if region.len() != working.trim().len() {
        parsed.fixes.push(Fix {
            kind: FixKind::TrimProse,
            detail: format!(
                "dropped {} chars of surrounding prose",
                char_len(working.trim()) - char_len(region)
            ),
        });
    }

    let mut object: Option<serde_json::Map<String, serde_json::Value>> =
        serde_json::from_str(region).ok();
    if object.is_none() {
        let requoted = requote_single_quotes(region);
        if requoted != region {
            if let Ok(v) = serde_json::from_str(&requoted) {
                object = Some(v);
                parsed.fixes.push(Fix {
                    kind: FixKind::RequoteSingleQuotes,
                    detail: "rewrote single-quoted strings".into(),
                });
            }
        }
    }
    let surfaces = object.as_ref().and_then(object_to_surfaces);
    let surfaces = match surfaces {
        Some(s) => s,
        None => {
            parsed.parse_failed = true;
            return parsed;
        }
    };

    for (label, surfaces) in surfaces {
        if prompted_labels.contains(&label) {
            parsed.surfaces.push((label, surfaces));
        } else {
            parsed.fixes.push(Fix {
                kind: FixKind::DropUnpromptedLabel,
                detail: format!("dropped unprompted label {label:?}"),
            });
        }
    }
    parsed
}

/// Surfaces that could not be placed in the text; scored as spurious
/// predictions.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct Spurious {
    pub label: String,
    pub surface: String,
}

/// Resolves surface strings to char spans: each surface takes the leftmost
/// occurrence not overlapping a span already claimed for the same label;
/// when every occurrence is blocked it falls back to the leftmost one
/// (containment across labels is always permitted). Absent surfaces are
/// returned as spurious.
pub fn resolve_spans(
    text: &str,
    surfaces: &[(String, Vec<String>)],
) -> (Vec<SpanTriple>, Vec<Spurious>) {
    let index = CharIndex::new(text);
    let mut claimed: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    let mut resolved = Vec::new();
    let mut spurious = Vec::new();

    for (label, list) in surfaces {
        for surface in list {
            if surface.is_empty() {
                spurious.push(Spurious { label: label.clone(), surface: surface.clone() });
                continue;
            }
            let occurrences: Vec<(usize, usize)> = text
                .match_indices(surface.as_str())
                .map(|(byte, m)| {
                    let start = index.char_at(byte);
                    (start, start + char_len(m))
                })
                .collect();
            if occurrences.is_empty() {
                spurious.push(Spurious { label: label.clone(), surface: surface.clone() });
                continue;
            }
            let taken = claimed.entry(label.as_str()).or_default();
            let free = occurrences
                .iter()
                .find(|(s, e)| taken.iter().all(|(ts, te)| *e <= *ts || *te <= *s));
            let (start, end) = *free.unwrap_or(&occurrences[0]);
            taken.push((start, end));
            resolved.push(SpanTriple { label: label.clone(), start, end });
        }
    }
    (resolved, spurious)
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredSpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PredictionBody {
    /// Raw model response, to be parsed and span-resolved.
    Response(String),
    /// Pre-resolved spans.
    Spans(Vec<PredSpan>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub sample_id: String,
    /// Label set shown to the model; defaults to the dataset's label set.
    pub prompted_labels: Option<Vec<String>>,
    pub body: PredictionBody,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {detail}")]
    Record { line: usize, detail: String },
    #[error("reports disagree on the dataset inventory: {left:?} vs {right:?}")]
    InventoryMismatch { left: Vec<String>, right: Vec<String> },
    #[error("no reports to aggregate")]
    NoReports,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionRecord {
    sample_id: String,
    #[serde(default)]
    response_text: Option<String>,
    #[serde(default)]
    mentions: Option<Vec<PredSpan>>,
    #[serde(default)]
    prompted_labels: Option<Vec<String>>,
}

/// Reads predictions as JSONL: `{"sample_id", "response_text"}` or
/// `{"sample_id", "mentions": [{"label","start","end"}]}`, optionally with
/// `"prompted_labels"`.
pub fn read_predictions_jsonl<R: BufRead>(reader: R) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| EvalError::Record { line: lineno, detail: e.to_string() })?;
        let body = match (rec.response_text, rec.mentions) {
            (Some(r), None) => PredictionBody::Response(r),
            (None, Some(m)) => PredictionBody::Spans(m),
            _ => {
                return Err(EvalError::Record {
                    line: lineno,
                    detail: "need exactly one of response_text or mentions".into(),
                })
            }
        };
        out.push(Prediction {
            sample_id: rec.sample_id,
            prompted_labels: rec.prompted_labels,
            body,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ScoreLine {
    #[serde(flatten)]
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<MatchCounts> for ScoreLine {
    fn from(counts: MatchCounts) -> Self {
        ScoreLine {
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DatasetScore {
    pub dataset_id: String,
    pub samples: usize,
    #[serde(flatten)]
    pub score: ScoreLine,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LabelScore {
    pub label: String,
    #[serde(flatten)]
    pub score: ScoreLine,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub seed: Option<u64>,
    pub per_dataset: Vec<DatasetScore>,
    pub per_label: Vec<LabelScore>,
    pub aggregate: ScoreLine,
    pub parse_failures: usize,
    pub duplicate_predictions: usize,
    pub missing_predictions: usize,
    pub unknown_sample_ids: usize,
    pub fix_counts: BTreeMap<String, usize>,
}

/// Scores predictions against the corpus gold annotations. Aggregate counts
/// are summed before computing F1 (micro semantics); samples without a
/// prediction count their gold mentions as misses.
pub fn score_predictions(corpus: &Corpus, predictions: &[Prediction], seed: Option<u64>) -> RunReport {
    let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    for p in predictions {
        by_id.insert(p.sample_id.as_str(), p);
    }
    let known_ids: BTreeSet<&str> = corpus.samples().map(|s| s.id.as_str()).collect();
    let unknown_sample_ids = predictions
        .iter()
        .filter(|p| !known_ids.contains(p.sample_id.as_str()))
        .count();

    let mut per_dataset: BTreeMap<String, (usize, MatchCounts)> = BTreeMap::new();
    let mut per_label: BTreeMap<String, MatchCounts> = BTreeMap::new();
    let mut aggregate = MatchCounts::default();
    let mut parse_failures = 0usize;
    let mut duplicate_predictions = 0usize;
    let mut missing_predictions = 0usize;
    let mut fix_counts: BTreeMap<String, usize> = BTreeMap::new();

    for dataset in corpus.datasets() {
        let default_labels: BTreeSet<String> =
            dataset.label_set.iter().map(|l| l.render()).collect();
        for sample in &dataset.samples {
            let gold = sample_triples(sample);
            let mut pred: Vec<SpanTriple> = match by_id.get(sample.id.as_str()) {
                None => {
                    missing_predictions += 1;
                    Vec::new()
                }
                Some(p) => match &p.body {
                    PredictionBody::Spans(spans) => spans
                        .iter()
                        .map(|s| SpanTriple { label: s.label.clone(), start: s.start, end: s.end })
                        .collect(),
                    PredictionBody::Response(text) => {
                        let prompted: BTreeSet<String> = match &p.prompted_labels {
                            Some(labels) => labels.iter().cloned().collect(),
                            None => default_labels.clone(),
                        };
                        let parsed = parse_response(text, &prompted);
                        if parsed.parse_failed {
                            parse_failures += 1;
                        }
                        for fix in &parsed.fixes {
                            *fix_counts.entry(fix.kind.as_str().to_string()).or_default() += 1;
                        }
                        let (resolved, spurious) = resolve_spans(&sample.text, &parsed.surfaces);
                        let mut triples = resolved;
                        // unresolvable surfaces still cost precision: encode
                        // them as spans that cannot match any gold mention
                        let far = sample.text_char_len() + 1;
                        for (i, s) in spurious.into_iter().enumerate() {
                            triples.push(SpanTriple {
                                label: s.label,
                                start: far + i,
                                end: far + i,
                            });
                        }
                        triples
                    }
                },
            };
            pred.sort();
            let before = pred.len();
            pred.dedup();
            duplicate_predictions += before - pred.len();

            let counts = count_matches(&gold, &pred);
            aggregate.add(counts);
            let entry = per_dataset.entry(sample.dataset_id.clone()).or_default();
            entry.0 += 1;
            entry.1.add(counts);
            // per-label accounting: restrict both sides to one label
            let labels: BTreeSet<&str> = gold
                .iter()
                .chain(pred.iter())
                .map(|t| t.label.as_str())
                .collect();
            for label in labels {
                let g: Vec<SpanTriple> =
                    gold.iter().filter(|t| t.label == label).cloned().collect();
                let p: Vec<SpanTriple> =
                    pred.iter().filter(|t| t.label == label).cloned().collect();
                per_label.entry(label.to_string()).or_default().add(count_matches(&g, &p));
            }
        }
    }

    RunReport {
        seed,
        per_dataset: per_dataset
            .into_iter()
            .map(|(dataset_id, (samples, counts))| DatasetScore {
                dataset_id,
                samples,
                score: counts.into(),
            })
            .collect(),
        per_label: per_label
            .into_iter()
            .map(|(label, counts)| LabelScore { label, score: counts.into() })
            .collect(),
        aggregate: aggregate.into(),
        parse_failures,
        duplicate_predictions,
        missing_predictions,
        unknown_sample_ids,
        fix_counts,
    }
}

/// CSV rendering, one row per dataset plus a TOTAL row; scores in percent.
pub fn render_report_csv(report: &RunReport) -> String {
    let mut out = String::from("dataset,samples,tp,fp,fn,precision,recall,f1\n");
    let row = |id: &str, samples: usize, s: &ScoreLine| {
        format!(
            "{},{},{},{},{},{:.2},{:.2},{:.2}\n",
            id,
            samples,
            s.counts.tp,
            s.counts.fp,
            s.counts.fn_,
            s.precision * 100.0,
            s.recall * 100.0,
            s.f1 * 100.0
        )
    };
    let mut total_samples = 0usize;
    for d in &report.per_dataset {
        total_samples += d.samples;
        out.push_str(&row(&d.dataset_id, d.samples, &d.score));
    }
    out.push_str(&row("TOTAL", total_samples, &report.aggregate));
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregatedDataset {
    pub dataset_id: String,
    pub per_run_f1: Vec<f64>,
    pub mean_f1: f64,
    pub sd_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub runs: usize,
    /// True when only one run was supplied; sd is reported as 0 by
    /// convention in that case.
    pub single_run: bool,
    pub per_dataset: Vec<AggregatedDataset>,
    pub per_run_aggregate_f1: Vec<f64>,
    pub mean_aggregate_f1: f64,
    pub sd_aggregate_f1: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Averages per-dataset and aggregate F1 across repeated runs. All reports
/// must cover the same datasets.
pub fn aggregate_runs(reports: &[RunReport]) -> Result<AggregateReport, EvalError> {
    let first = reports.first().ok_or(EvalError::NoReports)?;
    let inventory: Vec<String> =
        first.per_dataset.iter().map(|d| d.dataset_id.clone()).collect();
    for report in &reports[1..] {
        let other: Vec<String> =
            report.per_dataset.iter().map(|d| d.dataset_id.clone()).collect();
        if other != inventory {
            return Err(EvalError::InventoryMismatch { left: inventory, right: other });
        }
    }
    let per_dataset = inventory
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let per_run_f1: Vec<f64> =
                reports.iter().map(|r| r.per_dataset[i].score.f1).collect();
            let (mean_f1, sd_f1) = mean_sd(&per_run_f1);
            AggregatedDataset { dataset_id: id.clone(), per_run_f1, mean_f1, sd_f1 }
        })
        .collect();
    let per_run_aggregate_f1: Vec<f64> = reports.iter().map(|r| r.aggregate.f1).collect();
    let (mean_aggregate_f1, sd_aggregate_f1) = mean_sd(&per_run_aggregate_f1);
    Ok(AggregateReport {
        runs: reports.len(),
        single_run: reports.len() == 1,
        per_dataset,
        per_run_aggregate_f1,
        mean_aggregate_f1,
        sd_aggregate_f1,
    })
}
