//! nerloom: staged pipeline for unifying NER datasets into one
//! instruction-tuning corpus.
//!
//! Every subcommand reads earlier stage artifacts from the output directory
//! and writes its own, stamped with a digest of the effective settings.
//! Exit codes: 0 success, 1 usage, 2 data, 3 missing prerequisite artifact.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod artifact;
mod commands;
mod config;

use commands::Template;
use config::{Overrides, Resolved};
use nerloom::prune::Strategy;

#[derive(Debug)]
pub enum Failure {
    /// Bad invocation or configuration; nothing was attempted.
    Usage(String),
    /// Input data or artifacts were unusable.
    Data(anyhow::Error),
    /// A consumed stage has not produced its artifact yet.
    Prereq { missing: PathBuf, run_first: String },
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Prereq { .. } => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Data(e) => format!("{e:#}"),
            Failure::Prereq { missing, run_first } => format!(
                "missing artifact {}; run `nerloom {run_first}` first",
                missing.display()
            ),
        }
    }
}

/// Line logger on stderr; stdout stays reserved for the tagger protocol.
#[derive(Clone, Copy)]
pub struct Log {
    json: bool,
}

impl Log {
    pub fn info(&self, stage: &str, message: &str) {
        self.emit("info", stage, message);
    }

    pub fn warn(&self, stage: &str, message: &str) {
        self.emit("warn", stage, message);
    }

    fn emit(&self, level: &str, stage: &str, message: &str) {
        if self.json {
            eprintln!(
                "{}",
                serde_json::json!({ "level": level, "stage": stage, "message": message })
            );
        } else if level == "warn" {
            eprintln!("[{stage}] warning: {message}");
        } else {
            eprintln!("[{stage}] {message}");
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Diversity,
    RandomPerType,
    RandomDownsample,
    ThresholdFilter,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Strategy {
        match s {
            StrategyArg::Diversity => Strategy::Diversity,
            StrategyArg::RandomPerType => Strategy::RandomPerType,
            StrategyArg::RandomDownsample => Strategy::RandomDownsample,
            StrategyArg::ThresholdFilter => Strategy::ThresholdFilter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TemplateArg {
    Plain,
    Guideline,
    Fewshot,
}

impl From<TemplateArg> for Template {
    fn from(t: TemplateArg) -> Template {
        match t {
            TemplateArg::Plain => Template::Plain,
            TemplateArg::Guideline => Template::Guideline,
            TemplateArg::Fewshot => Template::Fewshot,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "nerloom",
    version,
    about = "Assemble heterogeneous NER datasets into one instruction-tuning corpus"
)]
struct Cli {
    /// Pipeline manifest (default: ./pipeline.json when present)
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,

    /// Directory for stage artifacts (beats NERLOOM_OUT_DIR and the manifest)
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Base seed for every randomized decision
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Emit stderr log lines as JSON objects
    #[arg(long, global = true)]
    log_json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the raw datasets named by the corpus manifest into one corpus
    Ingest {
        /// Corpus manifest listing raw dataset files and label tables
        #[arg(long, value_name = "FILE")]
        corpus_manifest: Option<PathBuf>,
        /// Treat tag-sequence repairs as hard errors
        #[arg(long)]
        strict: bool,
    },
    /// Summarize corpus size per dataset and language
    Stats,
    /// Screen shared surface forms for cross-dataset annotation conflicts
    DetectConflicts {
        /// Synonym groups widening which label pairs are compared
        #[arg(long, value_name = "FILE")]
        synonyms: Option<PathBuf>,
        /// Shared mentions needed before a pair's rate is trusted
        #[arg(long, default_value_t = 20)]
        min_support: usize,
        /// Conflict examples kept per label pair
        #[arg(long, default_value_t = 10)]
        max_examples: usize,
    },
    /// Train-on-one, test-on-another F1 matrix for a single label
    CrossValidate {
        /// Label to score (default: the manifest's crossval_target)
        #[arg(long)]
        target_label: Option<String>,
        /// External tagger command speaking the JSON line protocol
        #[arg(long, value_name = "CMD")]
        tagger_cmd: Option<String>,
    },
    /// Relabel the corpus into the unified taxonomy
    Remap {
        /// Mapping rules file
        #[arg(long, value_name = "FILE")]
        mapping: Option<PathBuf>,
    },
    /// Check the unified label inventory against the naming rules
    LintTaxonomy {
        /// Accept this label as-is (repeatable)
        #[arg(long, value_name = "LABEL")]
        waive: Vec<String>,
    },
    /// Select a diverse subset per dataset and entity type
    Prune {
        /// Pool capacity per (dataset, entity type)
        #[arg(long)]
        k: Option<usize>,
        /// Similarity offset inside the acceptance probability
        #[arg(long, allow_negative_numbers = true)]
        b: Option<f64>,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Acceptance threshold for the threshold-filter strategy
        #[arg(long)]
        tau: Option<f64>,
        /// Explicit size for the random-downsample strategy
        #[arg(long)]
        downsample_size: Option<usize>,
    },
    /// Render instruction prompts and answers for the pruned corpus
    GenInstructions {
        #[arg(long, value_enum, default_value_t = TemplateArg::Plain)]
        template: TemplateArg,
        /// Exemplars per prompt for the fewshot template
        #[arg(long, default_value_t = 3)]
        fewshot_n: usize,
        /// Per-label probability of dropping a gold label
        #[arg(long)]
        dropout: Option<f64>,
        /// Fewest distractor labels added per prompt
        #[arg(long)]
        min_extra: Option<usize>,
        /// Most distractor labels added per prompt
        #[arg(long)]
        max_extra: Option<usize>,
        /// Character budget; distractors are shed to meet it
        #[arg(long)]
        max_prompt_chars: Option<usize>,
        /// Prompt the full label universe instead of sampled subsets
        #[arg(long)]
        static_labels: bool,
    },
    /// Score prediction files against the pruned gold corpus
    Evaluate {
        /// Predictions JSONL (repeat for multi-run aggregation)
        #[arg(long, required = true, value_name = "FILE")]
        predictions: Vec<PathBuf>,
    },
    /// Summarize every produced artifact into one report
    Report,
    /// Serve the built-in memorization tagger over stdin/stdout
    #[command(hide = true)]
    TagServe,
}

fn overrides_for(cli: &Cli) -> Overrides {
    let mut ov = Overrides {
        out_dir: cli.out_dir.clone(),
        seed: cli.seed,
        jobs: cli.jobs,
        ..Default::default()
    };
    match &cli.command {
        Command::Ingest { corpus_manifest, .. } => {
            ov.corpus_manifest = corpus_manifest.clone();
        }
        Command::DetectConflicts { synonyms, .. } => {
            ov.synonyms = synonyms.clone();
        }
        Command::CrossValidate { target_label, .. } => {
            ov.crossval_target = target_label.clone();
        }
        Command::Remap { mapping } => {
            ov.mapping = mapping.clone();
        }
        Command::Prune { k, b, strategy, tau, downsample_size } => {
            ov.prune_k = *k;
            ov.prune_b = *b;
            ov.prune_strategy = strategy.map(Into::into);
            ov.prune_tau = *tau;
            ov.prune_downsample_size = *downsample_size;
        }
        Command::GenInstructions {
            dropout,
            min_extra,
            max_extra,
            max_prompt_chars,
            static_labels,
            ..
        } => {
            ov.instruct_dropout = *dropout;
            ov.instruct_min_extra = *min_extra;
            ov.instruct_max_extra = *max_extra;
            ov.instruct_max_prompt_chars = *max_prompt_chars;
            ov.instruct_static_labels = *static_labels;
        }
        _ => {}
    }
    ov
}

fn run(cli: Cli) -> Result<(), Failure> {
    let log = Log { json: cli.log_json };

    // The tagger server is self-contained: no manifest, no artifacts.
    if matches!(cli.command, Command::TagServe) {
        return commands::tag_serve();
    }

    let (manifest, manifest_dir) = config::load_manifest(cli.manifest.as_deref())?;
    let overrides = overrides_for(&cli);
    let resolved: Resolved = config::resolve(&manifest, &manifest_dir, &overrides);

    if let Some(jobs) = resolved.jobs {
        // A second invocation in-process would fail here; that is fine, the
        // pool keeps its first size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }

    match &cli.command {
        Command::Ingest { strict, .. } => commands::ingest(&resolved, &log, *strict),
        Command::Stats => commands::stats(&resolved, &log),
        Command::DetectConflicts { synonyms, min_support, max_examples } => commands::detect_conflicts(
            &resolved,
            &log,
            synonyms.as_deref(),
            *min_support,
            *max_examples,
        ),
        Command::CrossValidate { target_label, tagger_cmd } => commands::cross_validate_cmd(
            &resolved,
            &log,
            target_label.as_deref(),
            tagger_cmd.as_deref(),
        ),
        Command::Remap { mapping } => commands::remap(&resolved, &log, mapping.as_deref()),
        Command::LintTaxonomy { waive } => commands::lint_taxonomy(&resolved, &log, waive),
        Command::Prune { .. } => commands::prune(&resolved, &log),
        Command::GenInstructions { template, fewshot_n, .. } => {
            commands::gen_instructions(&resolved, &log, (*template).into(), *fewshot_n)
        }
        Command::Evaluate { predictions } => commands::evaluate(&resolved, &log, predictions),
        Command::Report => commands::report(&resolved, &log),
        Command::TagServe => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive as "errors" but exit clean.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}
