//! Shared input builders for the criterion benches.

use nerloom::corpus::Corpus;
use nerloom::synth::{generate, SynthConfig};

/// Fixed-seed synthetic corpus: four datasets of `per_dataset` samples over
/// twenty entity types, 10% negatives. Same generator the pipeline tests
/// use, so bench numbers track the shapes the tools actually see.
pub fn corpus(per_dataset: usize) -> Corpus {
    generate(&SynthConfig { samples_per_dataset: per_dataset, ..SynthConfig::default() })
}
