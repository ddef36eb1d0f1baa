//! One function per subcommand. Each stage reads its inputs from earlier
//! stage directories, writes its own artifacts plus a meta.json sidecar,
//! and reports progress on stderr. Stage outputs carry no timestamps or
//! other run-varying fields, so a rerun with the same inputs and settings
//! is byte-identical.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

use nerloom::conflict::{
    cross_validate, default_label_pairs, screen_conflicts, serve_tagger, MemorizationTagger,
    ScreenOptions, SubprocessTagger, SynonymSet, Tagger,
};
use nerloom::corpus::{
    compute_stats, Corpus, CorpusStats, Dataset, DatasetManifest, Sample, SourceFormat, Split,
};
use nerloom::eval::{aggregate_runs, read_predictions_jsonl, render_report_csv, score_predictions};
use nerloom::ingest::{
    parse_span_jsonl, parse_tagged, IngestOptions, IngestReport, RawLabelTable, TagScheme,
};
use nerloom::instruct::{render, render_fewshot, render_guideline, Guidelines};
use nerloom::prune::{prune_corpus, HashedNgramEmbedder, PruneOutcome};
use nerloom::taxonomy::{apply_mapping, build_tree, lint_labels, LintKind, MappingSet};

use crate::artifact::{
    read_corpus, read_meta, require_stage, stage_dir, write_corpus, write_json, write_meta,
    write_text, CONFLICTS_DIR, CROSSVAL_DIR, EVAL_DIR, INGEST_DIR, INSTRUCT_DIR, LINT_DIR,
    PRUNE_DIR, REMAP_DIR, REPORT_DIR, STATS_DIR,
};
use crate::config::Resolved;
use crate::{Failure, Log};

/// Exemplar pool size per dataset for the fewshot template.
const FEWSHOT_POOL: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    Plain,
    Guideline,
    Fewshot,
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

#[derive(Serialize)]
struct IngestSummary {
    dataset_id: String,
    samples: usize,
    mentions: usize,
    warnings: Vec<nerloom::ingest::IngestWarning>,
    rejected: Vec<nerloom::ingest::RejectedSample>,
}

pub fn ingest(r: &Resolved, log: &Log, strict: bool) -> Result<(), Failure> {
    let manifest_path = r.corpus_manifest.clone().ok_or_else(|| {
        Failure::Usage(
            "no corpus manifest configured; pass --corpus-manifest or set corpus_manifest \
             in the pipeline manifest"
                .into(),
        )
    })?;
    let manifest = DatasetManifest::from_reader(open(&manifest_path)?)
        .with_context(|| format!("parsing corpus manifest {}", manifest_path.display()))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut datasets = Vec::new();
    let mut summaries = Vec::new();
    for entry in &manifest.datasets {
        let table = RawLabelTable::from_reader(open(&base.join(&entry.label_table))?)
            .with_context(|| format!("label table {} for {}", entry.label_table, entry.meta.id))?;
        let data = open(&base.join(&entry.path))?;
        let opts = IngestOptions { no_space_join: entry.no_space_join, strict };
        let report: IngestReport = match entry.format {
            SourceFormat::Bio => parse_tagged(data, TagScheme::Bio, &table, entry.meta.clone(), &opts),
            SourceFormat::Bioes => {
                parse_tagged(data, TagScheme::Bioes, &table, entry.meta.clone(), &opts)
            }
            SourceFormat::Jsonl => parse_span_jsonl(data, &table, entry.meta.clone(), &opts),
        }
        .with_context(|| format!("ingesting dataset {} from {}", entry.meta.id, entry.path))?;
        log.info(
            "ingest",
            &format!(
                "{}: {} samples, {} mentions, {} warnings, {} rejected",
                report.dataset.id(),
                report.dataset.samples.len(),
                report.dataset.mention_count(),
                report.warnings.len(),
                report.rejected.len()
            ),
        );
        summaries.push(IngestSummary {
            dataset_id: report.dataset.id().to_string(),
            samples: report.dataset.samples.len(),
            mentions: report.dataset.mention_count(),
            warnings: report.warnings,
            rejected: report.rejected,
        });
        datasets.push(report.dataset);
    }
    let corpus = Corpus::new(datasets).context("assembling corpus")?;

    let dir = stage_dir(&r.out_dir, INGEST_DIR)?;
    write_corpus(&dir, &corpus)?;
    write_json(&dir.join("ingest-report.json"), &summaries)?;
    write_meta(&dir, "ingest", &r.digest, &[])?;
    log.info("ingest", &format!("wrote {}", dir.display()));
    Ok(())
}

fn stats_csv(stats: &CorpusStats) -> String {
    let mut out = String::from("language,datasets,types,samples,mentions\n");
    for lang in &stats.per_language {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            lang.language, lang.datasets, lang.types, lang.samples, lang.mentions
        ));
    }
    let t = &stats.totals;
    out.push_str(&format!("TOTAL,{},{},{},{}\n", t.datasets, t.types, t.samples, t.mentions));
    out
}

pub fn stats(r: &Resolved, log: &Log) -> Result<(), Failure> {
    let input = require_stage(&r.out_dir, INGEST_DIR, "ingest")?;
    let corpus = read_corpus(&input)?;
    let stats = compute_stats(&corpus);

    let dir = stage_dir(&r.out_dir, STATS_DIR)?;
    write_json(&dir.join("stats.json"), &stats)?;
    write_text(&dir.join("stats.csv"), &stats_csv(&stats))?;
    write_meta(&dir, "stats", &r.digest, &[INGEST_DIR])?;
    log.info(
        "stats",
        &format!(
            "{} datasets, {} types, {} samples, {} mentions",
            stats.totals.datasets, stats.totals.types, stats.totals.samples, stats.totals.mentions
        ),
    );
    Ok(())
}

pub fn detect_conflicts(
    r: &Resolved,
    log: &Log,
    synonyms_flag: Option<&Path>,
    min_support: usize,
    max_examples: usize,
) -> Result<(), Failure> {
    let input = require_stage(&r.out_dir, INGEST_DIR, "ingest")?;
    let corpus = read_corpus(&input)?;

    let synonyms = match synonyms_flag.or(r.synonyms.as_deref()) {
        Some(path) => SynonymSet::from_reader(open(path)?)
            .with_context(|| format!("parsing synonym groups {}", path.display()))?,
        None => SynonymSet::default(),
    };
    let pairs = default_label_pairs(&corpus, &synonyms);
    let opts = ScreenOptions { min_support, max_examples };
    let report = screen_conflicts(&corpus, &pairs, &opts).context("screening conflicts")?;

    let conflicting =
        report.pairs.iter().filter(|p| p.counts.conflicting() > 0).count();
    log.info(
        "detect-conflicts",
        &format!("{} label pairs screened, {} with conflicts", report.pairs.len(), conflicting),
    );

    let dir = stage_dir(&r.out_dir, CONFLICTS_DIR)?;
    write_json(&dir.join("conflicts.json"), &report)?;
    write_text(&dir.join("conflicts.txt"), &nerloom::conflict::render_conflict_text(&report))?;
    write_meta(&dir, "detect-conflicts", &r.digest, &[INGEST_DIR])?;
    Ok(())
}

pub fn cross_validate_cmd(
    r: &Resolved,
    log: &Log,
    target_flag: Option<&str>,
    tagger_cmd: Option<&str>,
) -> Result<(), Failure> {
    let input = require_stage(&r.out_dir, INGEST_DIR, "ingest")?;
    let corpus = read_corpus(&input)?;

    let train_ids: Vec<String> = corpus
        .datasets()
        .iter()
        .filter(|d| d.meta.split == Split::Train)
        .map(|d| d.id().to_string())
        .collect();
    if train_ids.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!("corpus has no train-split datasets")));
    }

    let target = match target_flag.or(r.crossval_target.as_deref()) {
        Some(t) => t.to_string(),
        None => {
            // Cheapest sensible default: the first label every train dataset
            // annotates, so each cell has both training signal and gold.
            let mut shared: Option<BTreeSet<String>> = None;
            for id in &train_ids {
                let labels: BTreeSet<String> = corpus
                    .dataset(id)
                    .expect("train id came from corpus")
                    .label_set
                    .iter()
                    .map(|l| l.render())
                    .collect();
                shared = Some(match shared {
                    None => labels,
                    Some(acc) => acc.intersection(&labels).cloned().collect(),
                });
            }
            shared
                .unwrap_or_default()
                .into_iter()
                .next()
                .ok_or_else(|| {
                    Failure::Data(anyhow::anyhow!(
                        "no label is shared by every train dataset; pass --target-label"
                    ))
                })?
        }
    };

    let matrix = match tagger_cmd {
        Some(cmd) => {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(Failure::Usage("--tagger-cmd is empty".into()));
            }
            let tagger = SubprocessTagger::new(argv);
            run_matrix(&corpus, &tagger, &train_ids, &target)?
        }
        None => run_matrix(&corpus, &MemorizationTagger, &train_ids, &target)?,
    };

    log.info(
        "cross-validate",
        &format!("label {:?} over {} train datasets", matrix.target_label, train_ids.len()),
    );
    let dir = stage_dir(&r.out_dir, CROSSVAL_DIR)?;
    write_json(&dir.join("matrix.json"), &matrix)?;
    write_text(&dir.join("matrix.csv"), &matrix.to_csv())?;
    write_meta(&dir, "cross-validate", &r.digest, &[INGEST_DIR])?;
    Ok(())
}

fn run_matrix(
    corpus: &Corpus,
    tagger: &dyn Tagger,
    ids: &[String],
    target: &str,
) -> Result<nerloom::conflict::F1Matrix, Failure> {
    cross_validate(corpus, tagger, ids, target)
        .context("cross-validating")
        .map_err(Failure::Data)
}

pub fn remap(r: &Resolved, log: &Log, mapping_flag: Option<&Path>) -> Result<(), Failure> {
    let input = require_stage(&r.out_dir, INGEST_DIR, "ingest")?;
    let corpus = read_corpus(&input)?;

    let mapping_path = mapping_flag
        .map(Path::to_path_buf)
        .or_else(|| r.mapping.clone())
        .ok_or_else(|| {
            Failure::Usage(
                "no mapping rules configured; pass --mapping or set mapping in the pipeline \
                 manifest"
                    .into(),
            )
        })?;
    let rules = MappingSet::from_reader(open(&mapping_path)?)
        .with_context(|| format!("parsing mapping rules {}", mapping_path.display()))?;

    let (corpus, outcome) = apply_mapping(corpus, &rules).context("applying label mapping")?;
    log.info(
        "remap",
        &format!(
            "{} mentions renamed, {} dropped, {} unused rules",
            outcome.renamed_mentions,
            outcome.dropped_mentions,
            outcome.unused_rules.len()
        ),
    );

    let universe: BTreeSet<_> =
        corpus.datasets().iter().flat_map(|d| d.label_set.iter().cloned()).collect();
    let tree = build_tree(universe).context("building taxonomy tree")?;

    let dir = stage_dir(&r.out_dir, REMAP_DIR)?;
    write_corpus(&dir, &corpus)?;
    write_json(&dir.join("outcome.json"), &outcome)?;
    write_text(&dir.join("tree.txt"), &tree.render_text())?;
    write_meta(&dir, "remap", &r.digest, &[INGEST_DIR])?;
    Ok(())
}

pub fn lint_taxonomy(r: &Resolved, log: &Log, waive: &[String]) -> Result<(), Failure> {
    let input = require_stage(&r.out_dir, REMAP_DIR, "remap")?;
    let corpus = read_corpus(&input)?;

    let labels: BTreeSet<String> =
        corpus.datasets().iter().flat_map(|d| d.label_set.iter().map(|l| l.render())).collect();
    let waivers: BTreeSet<String> = waive.iter().cloned().collect();
    let findings = lint_labels(labels.iter().map(String::as_str), &waivers);

    let kind_name = |kind: LintKind| match kind {
        LintKind::Acronym => "acronym",
        LintKind::DuplicateCasefold => "duplicate_casefold",
        LintKind::MissingParent => "missing_parent",
        LintKind::EmptySegment => "empty_segment",
    };
    let mut text = String::new();
    for f in &findings {
        text.push_str(&format!("{}: {} ({})\n", f.label, kind_name(f.kind), f.detail));
    }
    if findings.is_empty() {
        text.push_str("no findings\n");
    }
    log.info("lint-taxonomy", &format!("{} findings over {} labels", findings.len(), labels.len()));

    let dir = stage_dir(&r.out_dir, LINT_DIR)?;
    write_json(&dir.join("lint.json"), &findings)?;
    write_text(&dir.join("lint.txt"), &text)?;
    write_meta(&dir, "lint-taxonomy", &r.digest, &[REMAP_DIR])?;
    Ok(())
}

#[derive(Serialize)]
struct PoolSummary {
    key: String,
    label: String,
    capacity: usize,
    size: usize,
    full: bool,
}

#[derive(Serialize)]
struct PruneSummary {
    dataset_id: String,
    total_samples: usize,
    selected: Vec<String>,
    negatives: Vec<String>,
    pools: Vec<PoolSummary>,
    warnings: Vec<String>,
}

pub fn prune(r: &Resolved, log: &Log) -> Result<(), Failure> {
    let input = require_stage(&r.out_dir, REMAP_DIR, "remap")?;
    let corpus = read_corpus(&input)?;

    let embedder = HashedNgramEmbedder::default();
    let cfg = r.prune_config();
    let outcomes: Vec<PruneOutcome> =
        prune_corpus(&corpus, &embedder, &cfg).context("pruning corpus")?;
    let by_id: BTreeMap<&str, &PruneOutcome> =
        outcomes.iter().map(|o| (o.dataset_id.as_str(), o)).collect();

    // Materialize the kept subset in original sample order per dataset.
    let mut pruned = Vec::with_capacity(corpus.datasets().len());
    for dataset in corpus.datasets() {
        let outcome = by_id.get(dataset.id()).expect("one outcome per dataset");
        let keep: BTreeSet<&str> = outcome
            .selected
            .iter()
            .chain(outcome.negatives.iter())
            .map(String::as_str)
            .collect();
        let kept: Vec<Sample> =
            dataset.samples.iter().filter(|s| keep.contains(s.id.as_str())).cloned().collect();
        log.info(
            "prune",
            &format!(
                "{}: kept {} of {} (+{} negatives)",
                dataset.id(),
                outcome.selected.len(),
                dataset.samples.len(),
                outcome.negatives.len()
            ),
        );
        for warning in &outcome.warnings {
            log.warn("prune", &format!("{}: {}", dataset.id(), warning));
        }
        pruned.push(
            Dataset::from_parts(dataset.meta.clone(), kept).context("rebuilding pruned dataset")?,
        );
    }
    let pruned = Corpus::new(pruned).context("assembling pruned corpus")?;

    let dir = stage_dir(&r.out_dir, PRUNE_DIR)?;
    write_corpus(&dir, &pruned)?;

    let trace_path = dir.join("trace.jsonl");
    let file = File::create(&trace_path)
        .with_context(|| format!("creating {}", trace_path.display()))?;
    let mut w = BufWriter::new(file);
    for outcome in &outcomes {
        for entry in &outcome.trace {
            serde_json::to_writer(&mut w, entry)
                .with_context(|| format!("writing {}", trace_path.display()))?;
            w.write_all(b"\n").with_context(|| format!("writing {}", trace_path.display()))?;
        }
    }
    w.flush().with_context(|| format!("flushing {}", trace_path.display()))?;

    let summaries: Vec<PruneSummary> = outcomes
        .iter()
        .map(|o| PruneSummary {
            dataset_id: o.dataset_id.clone(),
            total_samples: corpus
                .dataset(&o.dataset_id)
                .map(|d| d.samples.len())
                .unwrap_or_default(),
            selected: o.selected.clone(),
            negatives: o.negatives.clone(),
            pools: o
                .pools
                .iter()
                .map(|p| PoolSummary {
                    key: p.key.clone(),
                    label: p.label.clone(),
                    capacity: p.capacity,
                    size: p.members.len(),
                    full: p.full,
                })
                .collect(),
            warnings: o.warnings.clone(),
        })
        .collect();
    write_json(&dir.join("outcomes.json"), &summaries)?;
    write_meta(&dir, "prune", &r.digest, &[REMAP_DIR])?;
    Ok(())
}

#[derive(Serialize)]
struct RenderWarning {
    sample_id: String,
    warnings: Vec<String>,
}

pub fn gen_instructions(
    r: &Resolved,
    log: &Log,
    template: Template,
    fewshot_n: usize,
) -> Result<(), Failure> {
    let input = require_stage(&r.out_dir, PRUNE_DIR, "prune")?;
    let corpus = read_corpus(&input)?;
    let cfg = r.instruct_config();

    let universe: BTreeSet<String> =
        corpus.datasets().iter().flat_map(|d| d.label_set.iter().map(|l| l.render())).collect();

    let guidelines = match template {
        Template::Guideline => {
            let path = r.guidelines.clone().ok_or_else(|| {
                Failure::Usage(
                    "the guideline template needs a guidelines file; set guidelines in the \
                     pipeline manifest"
                        .into(),
                )
            })?;
            Some(
                Guidelines::from_reader(open(&path)?)
                    .with_context(|| format!("parsing guidelines {}", path.display()))?,
            )
        }
        _ => None,
    };

    let dir = stage_dir(&r.out_dir, INSTRUCT_DIR)?;
    let out_path = dir.join("instructions.jsonl");
    let file =
        File::create(&out_path).with_context(|| format!("creating {}", out_path.display()))?;
    let mut w = BufWriter::new(file);
    let mut warning_log = Vec::new();
    let mut rendered = 0usize;
    for dataset in corpus.datasets() {
        let pool: Vec<Sample> = dataset.samples.iter().take(FEWSHOT_POOL + 1).cloned().collect();
        for sample in &dataset.samples {
            let (instruction, warnings) = match template {
                Template::Plain => render(sample, &universe, &cfg),
                Template::Guideline => render_guideline(
                    sample,
                    &universe,
                    guidelines.as_ref().expect("checked above"),
                    &cfg,
                ),
                Template::Fewshot => {
                    let exemplars: Vec<Sample> = pool
                        .iter()
                        .filter(|s| s.id != sample.id)
                        .take(FEWSHOT_POOL)
                        .cloned()
                        .collect();
                    render_fewshot(sample, &universe, &exemplars, fewshot_n, &cfg)
                        .context("rendering fewshot prompt")?
                }
            };
            serde_json::to_writer(&mut w, &instruction)
                .with_context(|| format!("writing {}", out_path.display()))?;
            w.write_all(b"\n").with_context(|| format!("writing {}", out_path.display()))?;
            rendered += 1;
            if !warnings.is_empty() {
                warning_log.push(RenderWarning { sample_id: sample.id.clone(), warnings });
            }
        }
    }
    w.flush().with_context(|| format!("flushing {}", out_path.display()))?;

    log.info(
        "gen-instructions",
        &format!("{} prompts rendered, {} with warnings", rendered, warning_log.len()),
    );
    write_json(&dir.join("warnings.json"), &warning_log)?;
    write_meta(&dir, "gen-instructions", &r.digest, &[PRUNE_DIR])?;
    Ok(())
}

pub fn evaluate(r: &Resolved, log: &Log, prediction_files: &[PathBuf]) -> Result<(), Failure> {
    let input = require_stage(&r.out_dir, PRUNE_DIR, "prune")?;
    let corpus = read_corpus(&input)?;

    let mut runs = Vec::with_capacity(prediction_files.len());
    for path in prediction_files {
        let predictions = read_predictions_jsonl(open(path)?)
            .with_context(|| format!("reading predictions {}", path.display()))?;
        let report = score_predictions(&corpus, &predictions, None);
        log.info(
            "evaluate",
            &format!(
                "{}: F1 {:.2} (P {:.2} / R {:.2}), {} parse failures",
                path.display(),
                report.aggregate.f1 * 100.0,
                report.aggregate.precision * 100.0,
                report.aggregate.recall * 100.0,
                report.parse_failures
            ),
        );
        runs.push(report);
    }

    let dir = stage_dir(&r.out_dir, EVAL_DIR)?;
    write_json(&dir.join("report.json"), &runs[0])?;
    write_text(&dir.join("report.csv"), &render_report_csv(&runs[0]))?;
    if runs.len() > 1 {
        let aggregate = aggregate_runs(&runs).context("aggregating runs")?;
        write_json(&dir.join("runs.json"), &runs)?;
        write_json(&dir.join("aggregate.json"), &aggregate)?;
    }
    write_meta(&dir, "evaluate", &r.digest, &[PRUNE_DIR])?;
    Ok(())
}

fn read_value(path: &Path) -> Result<Value, Failure> {
    let value: Value = serde_json::from_reader(open(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(value)
}

fn count_lines(path: &Path) -> Result<usize, Failure> {
    let reader = open(path)?;
    let mut n = 0usize;
    for line in reader.lines() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if !line.trim().is_empty() {
            n += 1;
        }
    }
    Ok(n)
}

pub fn report(r: &Resolved, log: &Log) -> Result<(), Failure> {
    // Stats is the one stage a summary cannot do without.
    require_stage(&r.out_dir, STATS_DIR, "stats")?;

    let stage_names = [
        (INGEST_DIR, "ingest"),
        (STATS_DIR, "stats"),
        (CONFLICTS_DIR, "detect-conflicts"),
        (CROSSVAL_DIR, "cross-validate"),
        (REMAP_DIR, "remap"),
        (LINT_DIR, "lint-taxonomy"),
        (PRUNE_DIR, "prune"),
        (INSTRUCT_DIR, "gen-instructions"),
        (EVAL_DIR, "evaluate"),
    ];
    let mut present = Vec::new();
    let mut digests: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for (dir_name, stage) in stage_names {
        if let Some(meta) = read_meta(&r.out_dir.join(dir_name))? {
            digests.entry(meta.digest).or_default().push(stage);
            present.push(dir_name);
        }
    }
    if digests.len() > 1 {
        let detail: Vec<String> = digests
            .iter()
            .map(|(digest, stages)| format!("{} from {}", stages.join(", "), &digest[..12]))
            .collect();
        return Err(Failure::Data(anyhow::anyhow!(
            "artifacts come from different configurations ({}); rerun the pipeline",
            detail.join("; ")
        )));
    }
    let artifact_digest = digests.keys().next().cloned().unwrap_or_default();
    if artifact_digest != r.digest {
        log.warn(
            "report",
            "current settings differ from the ones that produced these artifacts",
        );
    }

    let mut text = String::new();
    let mut json = serde_json::Map::new();
    json.insert("digest".into(), Value::String(artifact_digest.clone()));

    let stats = read_value(&r.out_dir.join(STATS_DIR).join("stats.json"))?;
    text.push_str("corpus\n------\n");
    text.push_str("language | datasets | types | samples | mentions\n");
    if let Some(rows) = stats.get("per_language").and_then(Value::as_array) {
        for row in rows {
            text.push_str(&format!(
                "{} | {} | {} | {} | {}\n",
                row["language"].as_str().unwrap_or("?"),
                row["datasets"],
                row["types"],
                row["samples"],
                row["mentions"]
            ));
        }
    }
    if let Some(t) = stats.get("totals") {
        text.push_str(&format!(
            "total | {} | {} | {} | {}\n",
            t["datasets"], t["types"], t["samples"], t["mentions"]
        ));
    }
    json.insert("stats".into(), stats);

    let conflicts_path = r.out_dir.join(CONFLICTS_DIR).join("conflicts.json");
    if conflicts_path.exists() {
        let conflicts = read_value(&conflicts_path)?;
        let pairs = conflicts.get("pairs").and_then(Value::as_array).cloned().unwrap_or_default();
        let screened = pairs.len();
        let conflicting = pairs
            .iter()
            .filter(|p| p["conflict_rate"].as_f64().unwrap_or(0.0) > 0.0)
            .count();
        let worst = pairs
            .iter()
            .max_by(|a, b| {
                let ra = a["conflict_rate"].as_f64().unwrap_or(0.0);
                let rb = b["conflict_rate"].as_f64().unwrap_or(0.0);
                ra.total_cmp(&rb)
            })
            .cloned();
        text.push_str(&format!(
            "\nconflicts\n---------\n{screened} label pairs screened, {conflicting} with conflicts\n"
        ));
        if let Some(w) = worst.filter(|w| w["conflict_rate"].as_f64().unwrap_or(0.0) > 0.0) {
            text.push_str(&format!(
                "worst: {} -> {} on {:?} (rate {:.3})\n",
                w["dataset_a"].as_str().unwrap_or("?"),
                w["dataset_b"].as_str().unwrap_or("?"),
                w["label"].as_str().unwrap_or("?"),
                w["conflict_rate"].as_f64().unwrap_or(0.0)
            ));
        }
        json.insert("conflicts".into(), conflicts);
    }

    let outcome_path = r.out_dir.join(REMAP_DIR).join("outcome.json");
    if outcome_path.exists() {
        let outcome = read_value(&outcome_path)?;
        text.push_str(&format!(
            "\nremap\n-----\n{} mentions renamed, {} dropped\n",
            outcome["renamed_mentions"], outcome["dropped_mentions"]
        ));
        json.insert("remap".into(), outcome);
    }

    let lint_path = r.out_dir.join(LINT_DIR).join("lint.json");
    if lint_path.exists() {
        let lint = read_value(&lint_path)?;
        let n = lint.as_array().map(Vec::len).unwrap_or_default();
        text.push_str(&format!("\nlint\n----\n{n} findings\n"));
        json.insert("lint".into(), lint);
    }

    let prune_path = r.out_dir.join(PRUNE_DIR).join("outcomes.json");
    if prune_path.exists() {
        let outcomes = read_value(&prune_path)?;
        let empty = Vec::new();
        let rows = outcomes.as_array().unwrap_or(&empty);
        let before: u64 = rows.iter().filter_map(|o| o["total_samples"].as_u64()).sum();
        let selected: u64 = rows
            .iter()
            .filter_map(|o| o["selected"].as_array().map(|a| a.len() as u64))
            .sum();
        let negatives: u64 = rows
            .iter()
            .filter_map(|o| o["negatives"].as_array().map(|a| a.len() as u64))
            .sum();
        text.push_str(&format!(
            "\npruning\n-------\n{} -> {} samples ({} negatives included)\n",
            before,
            selected + negatives,
            negatives
        ));
        json.insert("prune".into(), outcomes);
    }

    let instructions_path = r.out_dir.join(INSTRUCT_DIR).join("instructions.jsonl");
    if instructions_path.exists() {
        let n = count_lines(&instructions_path)?;
        text.push_str(&format!("\ninstructions\n------------\n{n} prompts rendered\n"));
        json.insert("instructions".into(), Value::Number(n.into()));
    }

    let eval_path = r.out_dir.join(EVAL_DIR).join("report.json");
    if eval_path.exists() {
        let eval = read_value(&eval_path)?;
        let agg = &eval["aggregate"];
        text.push_str(&format!(
            "\nevaluation\n----------\nmicro-F1 {:.2} (P {:.2} / R {:.2}), {} parse failures\n",
            agg["f1"].as_f64().unwrap_or(0.0) * 100.0,
            agg["precision"].as_f64().unwrap_or(0.0) * 100.0,
            agg["recall"].as_f64().unwrap_or(0.0) * 100.0,
            eval["parse_failures"]
        ));
        json.insert("evaluation".into(), eval);
    }

    let dir = stage_dir(&r.out_dir, REPORT_DIR)?;
    write_text(&dir.join("report.txt"), &text)?;
    write_json(&dir.join("report.json"), &Value::Object(json))?;
    let inputs: Vec<&str> = present.clone();
    write_meta(&dir, "report", &artifact_digest, &inputs)?;
    log.info("report", &format!("summarized {} stages", present.len()));
    Ok(())
}

pub fn tag_serve() -> Result<(), Failure> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_tagger(stdin.lock(), stdout.lock(), &MemorizationTagger)
        .context("serving tagger")
        .map_err(Failure::Data)
}
