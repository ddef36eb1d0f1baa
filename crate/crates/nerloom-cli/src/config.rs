//! Pipeline manifest loading and flag/env/manifest resolution.
//!
//! Every stage runs against one `Resolved` view of the configuration. The
//! digest over that view is stamped into each stage's meta.json, so the
//! report stage can tell whether all artifacts came from the same settings.

use std::env;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nerloom::prune::{PruneConfig, Strategy};

use crate::Failure;

pub const OUT_DIR_ENV: &str = "NERLOOM_OUT_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub k: usize,
    pub b: f64,
    pub strategy: Strategy,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample_size: Option<usize>,
}

impl Default for PruneSection {
    fn default() -> Self {
        let d = PruneConfig::default();
        PruneSection { k: d.k, b: d.b, strategy: d.strategy, tau: d.tau, downsample_size: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructSection {
    pub dynamic_labels: bool,
    pub min_extra: usize,
    pub max_extra: usize,
    pub dropout_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_prompt_chars: Option<usize>,
}

impl Default for InstructSection {
    fn default() -> Self {
        InstructSection {
            dynamic_labels: true,
            min_extra: 0,
            max_extra: 10,
            dropout_prob: 0.1,
            max_prompt_chars: None,
        }
    }
}

/// On-disk pipeline manifest. All paths are relative to the manifest file's
/// directory; everything is optional so single-command runs can rely on
/// flags instead.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineManifest {
    pub corpus_manifest: Option<String>,
    pub mapping: Option<String>,
    pub synonyms: Option<String>,
    pub guidelines: Option<String>,
    pub out_dir: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub crossval_target: Option<String>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub instruct: InstructSection,
}

/// Flag-level overrides collected from the command line before resolution.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub corpus_manifest: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub crossval_target: Option<String>,
    pub prune_k: Option<usize>,
    pub prune_b: Option<f64>,
    pub prune_strategy: Option<Strategy>,
    pub prune_tau: Option<f64>,
    pub prune_downsample_size: Option<usize>,
    pub instruct_dropout: Option<f64>,
    pub instruct_min_extra: Option<usize>,
    pub instruct_max_extra: Option<usize>,
    pub instruct_max_prompt_chars: Option<usize>,
    pub instruct_static_labels: bool,
}

/// Fully resolved configuration for one invocation: flags beat the
/// `NERLOOM_OUT_DIR` environment variable, which beats the manifest.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub corpus_manifest: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub guidelines: Option<PathBuf>,
    pub crossval_target: Option<String>,
    pub prune: PruneSection,
    pub instruct: InstructSection,
    /// Hex SHA-256 over the effective settings; embedded in stage metadata.
    pub digest: String,
}

impl Resolved {
    pub fn prune_config(&self) -> PruneConfig {
        PruneConfig {
            k: self.prune.k,
            b: self.prune.b,
            seed: self.seed,
            strategy: self.prune.strategy,
            tau: self.prune.tau,
            downsample_size: self.prune.downsample_size,
        }
    }

    pub fn instruct_config(&self) -> nerloom::instruct::RegularizationConfig {
        nerloom::instruct::RegularizationConfig {
            dynamic_labels: self.instruct.dynamic_labels,
            min_extra: self.instruct.min_extra,
            max_extra: self.instruct.max_extra,
            dropout_prob: self.instruct.dropout_prob,
            seed: self.seed,
            max_prompt_chars: self.instruct.max_prompt_chars,
        }
    }
}

/// Everything that must agree across stages for a report to be coherent.
/// Output location and thread count are deliberately excluded: they change
/// where results land and how fast they arrive, never what they contain.
#[derive(Serialize)]
struct DigestInput<'a> {
    seed: u64,
    corpus_manifest: Option<String>,
    mapping: Option<String>,
    synonyms: Option<String>,
    guidelines: Option<String>,
    crossval_target: &'a Option<String>,
    prune: &'a PruneSection,
    instruct: &'a InstructSection,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Loads the manifest if present. An explicitly named manifest must exist;
/// the implicit default `pipeline.json` may be absent, which yields an empty
/// manifest so flag-only invocations still work.
pub fn load_manifest(path: Option<&Path>) -> Result<(PipelineManifest, PathBuf), Failure> {
    let (path, explicit) = match path {
        Some(p) => (p.to_path_buf(), true),
        None => (PathBuf::from("pipeline.json"), false),
    };
    if !path.exists() {
        if explicit {
            return Err(Failure::Usage(format!(
                "pipeline manifest {} does not exist",
                path.display()
            )));
        }
        return Ok((PipelineManifest::default(), PathBuf::from(".")));
    }
    let file = File::open(&path)
        .with_context(|| format!("opening pipeline manifest {}", path.display()))
        .map_err(|e| Failure::Usage(format!("{e:#}")))?;
    let manifest: PipelineManifest = serde_json::from_reader(file)
        .map_err(|e| Failure::Usage(format!("pipeline manifest {}: {e}", path.display())))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    Ok((manifest, dir))
}

fn resolve_rel(dir: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

pub fn resolve(manifest: &PipelineManifest, manifest_dir: &Path, ov: &Overrides) -> Resolved {
    let out_dir = ov
        .out_dir
        .clone()
        .or_else(|| env::var(OUT_DIR_ENV).ok().map(PathBuf::from))
        .or_else(|| manifest.out_dir.as_deref().map(|d| resolve_rel(manifest_dir, d)))
        .unwrap_or_else(|| PathBuf::from("nerloom-out"));
    let seed = ov.seed.unwrap_or(manifest.seed);
    let jobs = ov.jobs.or(manifest.jobs);

    let corpus_manifest = ov
        .corpus_manifest
        .clone()
        .or_else(|| manifest.corpus_manifest.as_deref().map(|p| resolve_rel(manifest_dir, p)));
    let mapping = ov
        .mapping
        .clone()
        .or_else(|| manifest.mapping.as_deref().map(|p| resolve_rel(manifest_dir, p)));
    let synonyms = ov
        .synonyms
        .clone()
        .or_else(|| manifest.synonyms.as_deref().map(|p| resolve_rel(manifest_dir, p)));
    let guidelines = manifest.guidelines.as_deref().map(|p| resolve_rel(manifest_dir, p));
    let crossval_target = ov.crossval_target.clone().or_else(|| manifest.crossval_target.clone());

    let mut prune = manifest.prune.clone();
    if let Some(k) = ov.prune_k {
        prune.k = k;
    }
    if let Some(b) = ov.prune_b {
        prune.b = b;
    }
    if let Some(s) = ov.prune_strategy {
        prune.strategy = s;
    }
    if let Some(t) = ov.prune_tau {
        prune.tau = t;
    }
    if let Some(n) = ov.prune_downsample_size {
        prune.downsample_size = Some(n);
    }

    let mut instruct = manifest.instruct.clone();
    if ov.instruct_static_labels {
        instruct.dynamic_labels = false;
    }
    if let Some(p) = ov.instruct_dropout {
        instruct.dropout_prob = p;
    }
    if let Some(n) = ov.instruct_min_extra {
        instruct.min_extra = n;
    }
    if let Some(n) = ov.instruct_max_extra {
        instruct.max_extra = n;
    }
    if let Some(n) = ov.instruct_max_prompt_chars {
        instruct.max_prompt_chars = Some(n);
    }

    // Digest over path text as configured, not absolutized: moving the whole
    // tree to another directory must not invalidate a pipeline.
    let digest_input = DigestInput {
        seed,
        corpus_manifest: corpus_manifest.as_deref().map(path_text),
        mapping: mapping.as_deref().map(path_text),
        synonyms: synonyms.as_deref().map(path_text),
        guidelines: guidelines.as_deref().map(path_text),
        crossval_target: &crossval_target,
        prune: &prune,
        instruct: &instruct,
    };
    let digest =
        sha256_hex(serde_json::to_string(&digest_input).expect("config serializes").as_bytes());

    Resolved {
        out_dir,
        seed,
        jobs,
        corpus_manifest,
        mapping,
        synonyms,
        guidelines,
        crossval_target,
        prune,
        instruct,
        digest,
    }
}

/// File name portion only: digests must survive relocation of the pipeline
/// directory, and the file name is the stable part of a configured path.
fn path_text(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}
