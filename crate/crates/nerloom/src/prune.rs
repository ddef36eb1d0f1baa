//! Diversity-aware pruning: per (dataset, entity type) sample pools filled by
//! a seeded traversal where acceptance probability falls with similarity to
//! already-kept samples, plus uniform and threshold baselines for comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dataset};
use crate::util::{derive_seed, fnv1a64};

/// Deterministic text embedding contract: unit-norm vectors of a fixed
/// dimension, compared by cosine.
pub trait EmbeddingProvider: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedError(pub String);

impl fmt::Display for EmbedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for EmbedError {}

/// Default embedder: signed hashed character 3-gram term frequencies,
/// L2-normalized. N-grams wrap around the end of the text so that a string
/// and its repetition share one n-gram distribution. Deterministic stand-in
/// for a learned sentence encoder.
#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    dim: usize,
}

impl HashedNgramEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        HashedNgramEmbedder { dim }
    }
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        HashedNgramEmbedder::new(256)
    }
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let chars: Vec<char> = text.chars().collect();
        let mut raw = vec![0.0f64; self.dim];
        let n = chars.len();
        for i in 0..n {
            // each char as UTF-32 LE keeps distinct grams byte-distinct
            let gram = [chars[i], chars[(i + 1) % n], chars[(i + 2) % n]];
            let mut bytes = [0u8; 12];
            for (j, c) in gram.iter().enumerate() {
                bytes[j * 4..(j + 1) * 4].copy_from_slice(&(*c as u32).to_le_bytes());
            }
            let h = fnv1a64(&bytes);
            let bin = ((h >> 8) % self.dim as u64) as usize;
            raw[bin] += if h & 1 == 0 { 1.0 } else { -1.0 };
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut v = vec![0.0f32; self.dim];
        if norm == 0.0 {
            // empty text, or full sign cancellation: fixed basis direction
            v[0] = 1.0;
        } else {
            for (out, x) in v.iter_mut().zip(&raw) {
                *out = (x / norm) as f32;
            }
        }
        Ok(v)
    }
}

/// Cosine of two unit-norm vectors. Bitwise-identical inputs short-circuit
/// to exactly 1.0 so duplicate texts get acceptance probability exactly 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    if a == b {
        return 1.0;
    }
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Probability of admitting a sample given the maximum cosine to current
/// pool members (0 for an empty pool): clamp(1 - max_sim + b, 0, 1).
pub fn accept_probability(max_sim: f64, b: f64) -> f64 {
    (1.0 - max_sim + b).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Diversity,
    RandomPerType,
    RandomDownsample,
    ThresholdFilter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Pool capacity per (dataset, entity type).
    pub k: usize,
    /// Similarity offset added inside the acceptance probability.
    pub b: f64,
    pub seed: u64,
    pub strategy: Strategy,
    /// Acceptance threshold for the threshold_filter strategy.
    pub tau: f64,
    /// Explicit size for random_downsample; None matches the diversity
    /// run's output size on the same configuration.
    pub downsample_size: Option<usize>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            k: 400,
            b: 0.0,
            seed: 0,
            strategy: Strategy::Diversity,
            tau: 0.9,
            downsample_size: None,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<(), PruneError> {
        if self.k == 0 {
            return Err(PruneError::InvalidConfig("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(PruneError::InvalidConfig("tau must lie in [0, 1]".into()));
        }
        if !self.b.is_finite() {
            return Err(PruneError::InvalidConfig("b must be finite".into()));
        }
        Ok(())
    }

    /// Negative samples admitted per dataset.
    pub fn negative_cap(&self) -> usize {
        self.k / 5
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PruneError {
    #[error("invalid pruning config: {0}")]
    InvalidConfig(String),
    #[error("embedding failed on sample {sample_id:?}: {detail}")]
    Embed { sample_id: String, detail: String },
}

/// One acceptance decision, enough to replay the run exactly. `u` is absent
/// for the deterministic threshold strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub sample_id: String,
    pub pool_key: String,
    pub max_sim: f64,
    pub p: f64,
    pub u: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoolReport {
    pub key: String,
    pub label: String,
    pub capacity: usize,
    /// Sample ids in acceptance order.
    pub members: Vec<String>,
    pub full: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PruneOutcome {
    pub dataset_id: String,
    /// Selected positive sample ids, in original dataset order.
    pub selected: Vec<String>,
    /// Selected zero-mention sample ids, in original dataset order.
    pub negatives: Vec<String>,
    pub pools: Vec<PoolReport>,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
}

struct PruneItem {
    id: String,
    labels: Vec<String>,
    embedding: Vec<f32>,
    negative: bool,
}

struct PoolState {
    label: String,
    members: Vec<usize>,
}

fn pool_key(dataset_id: &str, label: &str) -> String {
    format!("{dataset_id}/{label}")
}

fn prepare_items(
    dataset: &Dataset,
    embedder: &dyn EmbeddingProvider,
    warnings: &mut Vec<String>,
) -> Result<Vec<PruneItem>, PruneError> {
    let items: Vec<Result<PruneItem, PruneError>> = dataset
        .samples
        .par_iter()
        .map(|sample| {
            let embedding = embedder.embed(&sample.text).map_err(|e| PruneError::Embed {
                sample_id: sample.id.clone(),
                detail: e.to_string(),
            })?;
            if embedding.len() != embedder.dim() {
                return Err(PruneError::Embed {
                    sample_id: sample.id.clone(),
                    detail: format!(
                        "provider returned {} dims, declared {}",
                        embedding.len(),
                        embedder.dim()
                    ),
                });
            }
            let labels: BTreeSet<String> =
                sample.mentions.iter().map(|m| m.label.render()).collect();
            Ok(PruneItem {
                id: sample.id.clone(),
                labels: labels.into_iter().collect(),
                embedding,
                negative: sample.mentions.is_empty(),
            })
        })
        .collect();
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        out.push(item?);
    }
    for (item, sample) in out.iter().zip(&dataset.samples) {
        if sample.text.is_empty() {
            warnings.push(format!("sample {}: empty text embedded as basis vector", item.id));
        }
    }
    Ok(out)
}

/// Single seeded traversal. Per sample, pools are visited in sorted key
/// order; each non-full pool draws its own uniform variate (diversity) or
/// applies the tau rule (threshold). Pool membership feeds later maxima.
fn traverse(
    dataset_id: &str,
    items: &[PruneItem],
    order: &[usize],
    cfg: &PruneConfig,
    rng: &mut ChaCha8Rng,
) -> (BTreeSet<usize>, Vec<PoolState>, Vec<TraceEntry>) {
    let mut pools: BTreeMap<String, PoolState> = BTreeMap::new();
    for item in items {
        for label in &item.labels {
            pools
                .entry(label.clone())
                .or_insert_with(|| PoolState { label: label.clone(), members: Vec::new() });
        }
    }

    let mut selected = BTreeSet::new();
    let mut trace = Vec::new();
    for &idx in order {
        let item = &items[idx];
        for label in &item.labels {
            let pool = pools.get_mut(label).expect("pool pre-created");
            if pool.members.len() >= cfg.k {
                continue;
            }
            let max_sim = pool
                .members
                .iter()
                .map(|&m| cosine(&items[m].embedding, &item.embedding))
                .fold(0.0f64, f64::max);
            let (p, u, accepted) = match cfg.strategy {
                Strategy::ThresholdFilter => {
                    let accepted = pool.members.is_empty() || max_sim < cfg.tau;
                    (accept_probability(max_sim, cfg.b), None, accepted)
                }
                _ => {
                    let p = accept_probability(max_sim, cfg.b);
                    let u: f64 = rng.gen();
                    (p, Some(u), u < p)
                }
            };
            trace.push(TraceEntry {
                sample_id: item.id.clone(),
                pool_key: pool_key(dataset_id, label),
                max_sim,
                p,
                u,
                accepted,
            });
            if accepted {
                pool.members.push(idx);
                selected.insert(idx);
            }
        }
    }
    (selected, pools.into_values().collect(), trace)
}

fn pool_reports(dataset_id: &str, pools: Vec<PoolState>, items: &[PruneItem], k: usize) -> Vec<PoolReport> {
    pools
        .into_iter()
        .map(|pool| PoolReport {
            key: pool_key(dataset_id, &pool.label),
            label: pool.label,
            capacity: k,
            members: pool.members.iter().map(|&i| items[i].id.clone()).collect(),
            full: pool.members.len() >= k,
        })
        .collect()
}

fn ids_in_dataset_order(items: &[PruneItem], picked: &BTreeSet<usize>) -> Vec<String> {
    picked.iter().map(|&i| items[i].id.clone()).collect()
}

fn diversity_outcome(
    dataset_id: &str,
    items: &[PruneItem],
    cfg: &PruneConfig,
    mut warnings: Vec<String>,
) -> PruneOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, dataset_id));
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let (selected, pools, trace) = traverse(dataset_id, items, &order, cfg, &mut rng);

    let negatives = if cfg.strategy == Strategy::Diversity {
        let candidates: Vec<usize> =
            (0..items.len()).filter(|&i| items[i].negative).collect();
        let take = cfg.negative_cap().min(candidates.len());
        let chosen: BTreeSet<usize> = rand::seq::index::sample(&mut rng, candidates.len(), take)
            .iter()
            .map(|i| candidates[i])
            .collect();
        ids_in_dataset_order(items, &chosen)
    } else {
        Vec::new()
    };
    if cfg.strategy == Strategy::Diversity {
        let have: Vec<usize> = (0..items.len()).filter(|&i| items[i].negative).collect();
        if have.len() < cfg.negative_cap() && !have.is_empty() {
            warnings.push(format!(
                "only {} zero-mention samples available for {} negative slots",
                have.len(),
                cfg.negative_cap()
            ));
        }
    }

    PruneOutcome {
        dataset_id: dataset_id.to_string(),
        selected: ids_in_dataset_order(items, &selected),
        negatives,
        pools: pool_reports(dataset_id, pools, items, cfg.k),
        trace,
        warnings,
    }
}

fn random_per_type_outcome(
    dataset_id: &str,
    items: &[PruneItem],
    cfg: &PruneConfig,
    warnings: Vec<String>,
) -> PruneOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, dataset_id));
    let mut by_label: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        for label in &item.labels {
            by_label.entry(label.clone()).or_default().push(i);
        }
    }
    let mut selected = BTreeSet::new();
    let mut pools = Vec::new();
    for (label, candidates) in by_label {
        let take = cfg.k.min(candidates.len());
        let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), take)
            .iter()
            .map(|i| candidates[i])
            .collect();
        chosen.sort_unstable();
        selected.extend(chosen.iter().copied());
        pools.push(PoolState { label, members: chosen });
    }
    PruneOutcome {
        dataset_id: dataset_id.to_string(),
        selected: ids_in_dataset_order(items, &selected),
        negatives: Vec::new(),
        pools: pool_reports(dataset_id, pools, items, cfg.k),
        trace: Vec::new(),
        warnings,
    }
}

fn random_downsample_outcome(
    dataset_id: &str,
    items: &[PruneItem],
    cfg: &PruneConfig,
    mut warnings: Vec<String>,
) -> PruneOutcome {
    let size = match cfg.downsample_size {
        Some(size) => size,
        None => {
            // matched-size comparison: replay the diversity run's total
            let diversity_cfg = PruneConfig { strategy: Strategy::Diversity, ..cfg.clone() };
            let outcome = diversity_outcome(dataset_id, items, &diversity_cfg, Vec::new());
            outcome.selected.len() + outcome.negatives.len()
        }
    };
    let take = if size > items.len() {
        warnings.push(format!(
            "requested downsample size {size} exceeds dataset size {}; taking all",
            items.len()
        ));
        items.len()
    } else {
        size
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, dataset_id));
    let chosen: BTreeSet<usize> =
        rand::seq::index::sample(&mut rng, items.len(), take).iter().collect();
    PruneOutcome {
        dataset_id: dataset_id.to_string(),
        selected: ids_in_dataset_order(items, &chosen),
        negatives: Vec::new(),
        pools: Vec::new(),
        trace: Vec::new(),
        warnings,
    }
}

/// Prunes one dataset under the configured strategy. Selected samples keep
/// every mention; the outcome lists ids, per-pool membership, and a full
/// decision trace for replay.
pub fn prune_dataset(
    dataset: &Dataset,
    embedder: &dyn EmbeddingProvider,
    cfg: &PruneConfig,
) -> Result<PruneOutcome, PruneError> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let items = prepare_items(dataset, embedder, &mut warnings)?;
    let outcome = match cfg.strategy {
        Strategy::Diversity | Strategy::ThresholdFilter => {
            diversity_outcome(dataset.id(), &items, cfg, warnings)
        }
        Strategy::RandomPerType => random_per_type_outcome(dataset.id(), &items, cfg, warnings),
        Strategy::RandomDownsample => {
            random_downsample_outcome(dataset.id(), &items, cfg, warnings)
        }
    };
    Ok(outcome)
}

/// Prunes every dataset concurrently; outcomes ordered by dataset id.
pub fn prune_corpus(
    corpus: &Corpus,
    embedder: &dyn EmbeddingProvider,
    cfg: &PruneConfig,
) -> Result<Vec<PruneOutcome>, PruneError> {
    cfg.validate()?;
    let mut outcomes = corpus
        .datasets()
        .par_iter()
        .map(|dataset| prune_dataset(dataset, embedder, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    outcomes.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
    Ok(outcomes)
}
