//! Seeded synthetic corpus generator for scale tests and benchmarks.
//! Entity surfaces are dedicated tokens shared across datasets, so the
//! generated corpora are internally consistent: every occurrence of an
//! entity surface is annotated, with the same label everywhere.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Dataset, DatasetMeta, EntityMention, Sample, Split, UniversalLabel};
use crate::util::derive_seed;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub datasets: usize,
    pub samples_per_dataset: usize,
    pub entity_types: usize,
    /// Probability that a sample carries no mentions at all.
    pub negative_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            datasets: 4,
            samples_per_dataset: 250,
            entity_types: 20,
            negative_fraction: 0.1,
            seed: 0,
        }
    }
}

fn type_label(t: usize) -> UniversalLabel {
    UniversalLabel::parse(&format!("type-{t:02}")).expect("generated names parse")
}

fn entity_surface(t: usize, j: usize) -> String {
    format!("Ent{t:02}N{j:02}")
}

/// Deterministic corpus: each dataset gets its own RNG stream; the first
/// `entity_types` samples of every dataset each carry one forced mention so
/// every type occurs in every dataset.
pub fn generate(cfg: &SynthConfig) -> Corpus {
    let types = cfg.entity_types.max(1);
    let mut datasets = Vec::with_capacity(cfg.datasets);
    for d in 0..cfg.datasets {
        let dataset_id = format!("synth-{d:02}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &dataset_id));
        let mut samples = Vec::with_capacity(cfg.samples_per_dataset);
        for i in 0..cfg.samples_per_dataset {
            let forced = if i < types { Some(i) } else { None };
            let negative =
                forced.is_none() && rng.gen::<f64>() < cfg.negative_fraction;
            let n_words = rng.gen_range(6..=12usize);
            let mut text = String::new();
            let mut mentions: Vec<EntityMention> = Vec::new();
            let mut offset = 0usize;
            for w in 0..n_words {
                let entity_type = if w == 0 {
                    forced.or_else(|| {
                        (!negative && rng.gen::<f64>() < 0.25)
                            .then(|| rng.gen_range(0..types))
                    })
                } else if !negative && rng.gen::<f64>() < 0.25 {
                    Some(rng.gen_range(0..types))
                } else {
                    None
                };
                let word = match entity_type {
                    Some(t) => entity_surface(t, rng.gen_range(0..40usize)),
                    None => format!("w{:03}", rng.gen_range(0..180usize)),
                };
                if w > 0 {
                    text.push(' ');
                    offset += 1;
                }
                let start = offset;
                offset += word.len();
                if let Some(t) = entity_type {
                    mentions.push(EntityMention {
                        label: type_label(t),
                        start,
                        end: offset,
                        surface: word.clone(),
                    });
                }
                text.push_str(&word);
            }
            samples.push(Sample {
                id: format!("{dataset_id}:{}", i + 1),
                dataset_id: dataset_id.clone(),
                language: "en".into(),
                text,
                mentions,
            });
        }
        let meta = DatasetMeta {
            id: dataset_id.clone(),
            name: dataset_id.to_uppercase(),
            language: "en".into(),
            domain: "synthetic".into(),
            split: Split::Train,
            nested: false,
        };
        datasets.push(Dataset::from_parts(meta, samples).expect("generator emits valid data"));
    }
    Corpus::new(datasets).expect("dataset ids are distinct")
}
