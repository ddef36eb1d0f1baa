//! nerloom assembles many named-entity recognition datasets into one
//! instruction-tuning corpus: a shared hierarchical label taxonomy,
//! cross-dataset consistency screening, diversity-aware pruning, prompt
//! rendering with label-set regularization, and strict span-F1 scoring.

pub mod conflict;
pub mod corpus;
pub mod eval;
pub mod ingest;
pub mod instruct;
pub mod prune;
pub mod synth;
pub mod taxonomy;
mod util;

pub use conflict::{
    cross_validate, default_label_pairs, screen_conflicts, ConflictReport, F1Matrix, LabelPair,
    MemorizationTagger, ScreenOptions, SubprocessTagger, SynonymSet, Tagger, TaggerModel,
};
pub use corpus::{
    compute_stats, Corpus, CorpusStats, Dataset, DatasetManifest, DatasetMeta, EntityMention,
    ManifestEntry, Sample, SourceFormat, Split, UniversalLabel,
};
pub use eval::{
    aggregate_runs, parse_response, resolve_spans, score_predictions, MatchCounts, Prediction,
    RunReport,
};
pub use ingest::{parse_span_jsonl, parse_tagged, render_tagged, IngestOptions, RawLabelTable, TagScheme};
pub use instruct::{
    render, render_fewshot, render_guideline, Guidelines, InstructionSample, RegularizationConfig,
};
pub use prune::{
    accept_probability, prune_corpus, prune_dataset, EmbeddingProvider, HashedNgramEmbedder,
    PruneConfig, PruneOutcome, Strategy,
};
pub use taxonomy::{apply_mapping, build_tree, lint_labels, MappingSet, TaxonomyTree};
