//! Stage artifact layout under the output directory.
//!
//! Each stage owns one numbered directory and stamps a meta.json sidecar
//! with its name, the config digest, and the input artifacts it consumed.
//! Stages find their inputs by those directory names; a missing sidecar
//! means the producing command has not run yet.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use nerloom::corpus::{
    read_samples_jsonl, write_samples_jsonl, Corpus, Dataset, DatasetMeta, Sample,
};

use crate::Failure;

pub const INGEST_DIR: &str = "10-ingest";
pub const STATS_DIR: &str = "20-stats";
pub const CONFLICTS_DIR: &str = "30-conflicts";
pub const CROSSVAL_DIR: &str = "40-crossval";
pub const REMAP_DIR: &str = "50-remap";
pub const LINT_DIR: &str = "55-lint";
pub const PRUNE_DIR: &str = "70-prune";
pub const INSTRUCT_DIR: &str = "80-instruct";
pub const EVAL_DIR: &str = "90-eval";
pub const REPORT_DIR: &str = "95-report";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageMeta {
    pub stage: String,
    pub digest: String,
    pub inputs: Vec<String>,
}

/// Creates (or reuses) the stage directory and returns its path.
pub fn stage_dir(out_dir: &Path, name: &str) -> Result<PathBuf, Failure> {
    let dir = out_dir.join(name);
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating stage directory {}", dir.display()))?;
    Ok(dir)
}

pub fn write_meta(dir: &Path, stage: &str, digest: &str, inputs: &[&str]) -> Result<(), Failure> {
    let meta = StageMeta {
        stage: stage.to_string(),
        digest: digest.to_string(),
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

pub fn read_meta(dir: &Path) -> Result<Option<StageMeta>, Failure> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Ok(None);
    }
    let file =
        File::open(&path).with_context(|| format!("opening stage metadata {}", path.display()))?;
    let meta: StageMeta = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing stage metadata {}", path.display()))?;
    Ok(Some(meta))
}

/// Resolves a stage directory a command depends on. Absence is a
/// prerequisite failure naming the command to run first, not a data error.
pub fn require_stage(out_dir: &Path, name: &str, run_first: &str) -> Result<PathBuf, Failure> {
    let dir = out_dir.join(name);
    if !dir.join("meta.json").exists() {
        return Err(Failure::Prereq { missing: dir, run_first: run_first.to_string() });
    }
    Ok(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .with_context(|| format!("writing {}", path.display()))?;
    w.write_all(b"\n").with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("flushing {}", path.display()))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// datasets.json entry: dataset descriptor plus its rendered label set.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(flatten)]
    pub meta: DatasetMeta,
    pub label_set: Vec<String>,
}

/// Writes a corpus as corpus.jsonl (samples in dataset order) plus
/// datasets.json (descriptors and label inventories).
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<(), Failure> {
    let path = dir.join("corpus.jsonl");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write_samples_jsonl(corpus.samples(), &mut w)
        .with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("flushing {}", path.display()))?;

    let records: Vec<DatasetRecord> = corpus
        .datasets()
        .iter()
        .map(|d| DatasetRecord {
            meta: d.meta.clone(),
            label_set: d.label_set.iter().map(|l| l.render()).collect(),
        })
        .collect();
    write_json(&dir.join("datasets.json"), &records)
}

/// Reads a corpus artifact back. Sample order within each dataset follows
/// corpus.jsonl; dataset order follows datasets.json.
pub fn read_corpus(dir: &Path) -> Result<Corpus, Failure> {
    let ds_path = dir.join("datasets.json");
    let file =
        File::open(&ds_path).with_context(|| format!("opening {}", ds_path.display()))?;
    let records: Vec<DatasetRecord> = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing {}", ds_path.display()))?;

    let samples_path = dir.join("corpus.jsonl");
    let file = File::open(&samples_path)
        .with_context(|| format!("opening {}", samples_path.display()))?;
    let samples = read_samples_jsonl(BufReader::new(file))
        .with_context(|| format!("reading {}", samples_path.display()))?;

    let mut grouped: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for record in &records {
        grouped.insert(record.meta.id.clone(), Vec::new());
    }
    for sample in samples {
        match grouped.get_mut(sample.dataset_id.as_str()) {
            Some(bucket) => bucket.push(sample),
            None => {
                return Err(Failure::Data(anyhow::anyhow!(
                    "{}: sample {} references dataset {:?} absent from datasets.json",
                    samples_path.display(),
                    sample.id,
                    sample.dataset_id
                )))
            }
        }
    }
    let mut datasets = Vec::with_capacity(records.len());
    for record in records {
        let bucket = grouped.remove(record.meta.id.as_str()).unwrap_or_default();
        let dataset = Dataset::from_parts(record.meta, bucket)
            .with_context(|| format!("rebuilding corpus from {}", dir.display()))?;
        datasets.push(dataset);
    }
    let corpus =
        Corpus::new(datasets).with_context(|| format!("rebuilding corpus from {}", dir.display()))?;
    Ok(corpus)
}
