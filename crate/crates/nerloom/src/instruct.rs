//! Instruction-sample rendering: task prompt with a per-sample label set,
//! JSON-object answers keyed by label. Regularization varies label count
//! and order and may drop gold labels from both prompt and answer.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EntityMention, Sample};
use crate::util::derive_seed;

/// Task wording, isolated so it can be swapped without touching logic.
pub const TASK_INSTRUCTION: &str = "Given the entity label set, recognize all entity \
mentions in the input text. Respond with a JSON object mapping each label from the set \
to the list of extracted mention strings. Respond with {} when no listed entity occurs.";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularizationConfig {
    /// Off: every prompt carries the full label universe, in sorted order.
    pub dynamic_labels: bool,
    pub min_extra: usize,
    pub max_extra: usize,
    /// Per gold label probability of dropping it from prompt and answer.
    pub dropout_prob: f64,
    pub seed: u64,
    /// Character budget; only distractor labels are shed to meet it.
    pub max_prompt_chars: Option<usize>,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        RegularizationConfig {
            dynamic_labels: true,
            min_extra: 0,
            max_extra: 10,
            dropout_prob: 0.1,
            seed: 0,
            max_prompt_chars: None,
        }
    }
}

impl RegularizationConfig {
    pub fn validate(&self) -> Result<(), InstructError> {
        if self.min_extra > self.max_extra {
            return Err(InstructError::InvalidConfig(
                "min_extra must not exceed max_extra".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(InstructError::InvalidConfig(
                "dropout_prob must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InstructError {
    #[error("invalid instruction config: {0}")]
    InvalidConfig(String),
    #[error("guideline labels collide ignoring case: {0:?}")]
    GuidelineCaseCollision(String),
    #[error("exemplar {0:?} equals the query sample")]
    ExemplarIsQuery(String),
    #[error("guideline file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionMeta {
    pub sample_id: String,
    pub dataset_id: String,
    /// Labels offered in the prompt, in prompt order.
    pub prompted_labels: Vec<String>,
    pub dropped_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub prompt: String,
    pub answer: String,
    pub meta: InstructionMeta,
}

/// Label to annotation-prose mapping; labels must be unique ignoring case.
#[derive(Debug, Clone, Default)]
pub struct Guidelines {
    map: BTreeMap<String, String>,
}

impl Guidelines {
    pub fn new(map: BTreeMap<String, String>) -> Result<Self, InstructError> {
        let mut seen: BTreeMap<String, &String> = BTreeMap::new();
        for label in map.keys() {
            if let Some(previous) = seen.insert(label.to_lowercase(), label) {
                return Err(InstructError::GuidelineCaseCollision(format!(
                    "{previous} vs {label}"
                )));
            }
        }
        Ok(Guidelines { map })
    }

    pub fn from_reader<R: io::Read>(r: R) -> Result<Self, InstructError> {
        let map: BTreeMap<String, String> = serde_json::from_reader(r)?;
        Self::new(map)
    }

    pub fn get(&self, label: &str) -> Option<&str> {
        self.map.get(label).map(|s| s.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

struct Plan {
    prompted: Vec<String>,
    dropped: Vec<String>,
    gold: BTreeSet<String>,
    kept_mentions: Vec<EntityMention>,
    rng: ChaCha8Rng,
    warnings: Vec<String>,
}

/// Seeded per-sample draws, in a fixed order: one dropout variate per sorted
/// gold label, then distractor count, then distractor choice, then prompt
/// order shuffle. Later draws (few-shot exemplars) continue the same stream.
fn plan(sample: &Sample, label_universe: &BTreeSet<String>, cfg: &RegularizationConfig) -> Plan {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &sample.id));
    let mut warnings = Vec::new();

    let gold: BTreeSet<String> = sample.mentions.iter().map(|m| m.label.render()).collect();
    let mut dropped = Vec::new();
    let mut surviving: Vec<String> = Vec::new();
    for label in &gold {
        let u: f64 = rng.gen();
        if u < cfg.dropout_prob {
            dropped.push(label.clone());
        } else {
            surviving.push(label.clone());
        }
    }

    let prompted = if cfg.dynamic_labels {
        let extra = rng.gen_range(cfg.min_extra..=cfg.max_extra);
        let pool: Vec<&String> = label_universe.iter().filter(|l| !gold.contains(*l)).collect();
        let take = if extra > pool.len() {
            warnings.push(format!(
                "requested {extra} distractor labels, universe offers {}",
                pool.len()
            ));
            pool.len()
        } else {
            extra
        };
        let mut prompted = surviving.clone();
        prompted.extend(
            rand::seq::index::sample(&mut rng, pool.len(), take)
                .iter()
                .map(|i| pool[i].clone()),
        );
        prompted.shuffle(&mut rng);
        prompted
    } else {
        label_universe
            .iter()
            .filter(|l| !dropped.contains(*l))
            .cloned()
            .collect()
    };

    let mut kept_mentions: Vec<EntityMention> = sample
        .mentions
        .iter()
        .filter(|m| !dropped.contains(&m.label.render()))
        .cloned()
        .collect();
    kept_mentions.sort_by_key(|m| (m.start, m.end));

    Plan { prompted, dropped, gold, kept_mentions, rng, warnings }
}

/// JSON object keyed by label in prompt order; values are mention surfaces
/// in text order; mention-free labels are omitted; all-empty renders "{}".
fn build_answer(mentions: &[EntityMention], prompted: &[String]) -> String {
    let mut by_label: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for m in mentions {
        by_label.entry(m.label.render()).or_default().push(m.surface.clone());
    }
    let mut object = serde_json::Map::new();
    for label in prompted {
        if let Some(surfaces) = by_label.get(label) {
            object.insert(
                label.clone(),
                serde_json::Value::Array(
                    surfaces.iter().map(|s| serde_json::Value::String(s.clone())).collect(),
                ),
            );
        }
    }
    serde_json::Value::Object(object).to_string()
}

fn label_set_line(prompted: &[String]) -> String {
    format!(
        "Label Set: {}",
        serde_json::to_string(prompted).expect("string list serializes")
    )
}

/// Shrinks the prompted set from the tail, distractors only, until the
/// composed prompt fits the character budget.
fn enforce_budget<F>(
    compose: F,
    prompted: &mut Vec<String>,
    gold: &BTreeSet<String>,
    budget: Option<usize>,
    warnings: &mut Vec<String>,
) -> String
where
    F: Fn(&[String]) -> String,
{
    let budget = match budget {
        Some(b) => b,
        None => return compose(prompted),
    };
    let mut shed = 0usize;
    loop {
        let prompt = compose(prompted);
        if prompt.chars().count() <= budget {
            if shed > 0 {
                warnings.push(format!("dropped {shed} distractor labels to fit {budget} chars"));
            }
            return prompt;
        }
        match prompted.iter().rposition(|l| !gold.contains(l)) {
            Some(i) => {
                prompted.remove(i);
                shed += 1;
            }
            None => {
                if shed > 0 {
                    warnings
                        .push(format!("dropped {shed} distractor labels to fit {budget} chars"));
                }
                warnings.push(format!("prompt exceeds {budget} chars with no distractors left"));
                return prompt;
            }
        }
    }
}

fn finish(sample: &Sample, mut plan: Plan, prompt: String) -> (InstructionSample, Vec<String>) {
    let answer = build_answer(&plan.kept_mentions, &plan.prompted);
    plan.dropped.sort();
    (
        InstructionSample {
            prompt,
            answer,
            meta: InstructionMeta {
                sample_id: sample.id.clone(),
                dataset_id: sample.dataset_id.clone(),
                prompted_labels: plan.prompted,
                dropped_labels: plan.dropped,
            },
        },
        plan.warnings,
    )
}

/// Plain template: task wording, label set line, input text.
pub fn render(
    sample: &Sample,
    label_universe: &BTreeSet<String>,
    cfg: &RegularizationConfig,
) -> (InstructionSample, Vec<String>) {
    let mut plan = plan(sample, label_universe, cfg);
    let text = &sample.text;
    let compose =
        |labels: &[String]| format!("{TASK_INSTRUCTION}\n{}\nText: {text}", label_set_line(labels));
    let mut prompted = std::mem::take(&mut plan.prompted);
    let prompt =
        enforce_budget(compose, &mut prompted, &plan.gold, cfg.max_prompt_chars, &mut plan.warnings);
    plan.prompted = prompted;
    finish(sample, plan, prompt)
}

/// Adds one guideline line per prompted label after the label set.
pub fn render_guideline(
    sample: &Sample,
    label_universe: &BTreeSet<String>,
    guidelines: &Guidelines,
    cfg: &RegularizationConfig,
) -> (InstructionSample, Vec<String>) {
    let mut plan = plan(sample, label_universe, cfg);
    let text = &sample.text;
    let compose = |labels: &[String]| {
        let mut lines = String::from("Guidelines:");
        for label in labels {
            if let Some(prose) = guidelines.get(label) {
                lines.push_str(&format!("\n- {label}: {prose}"));
            }
        }
        format!("{TASK_INSTRUCTION}\n{}\n{lines}\nText: {text}", label_set_line(labels))
    };
    let mut prompted = std::mem::take(&mut plan.prompted);
    let prompt =
        enforce_budget(compose, &mut prompted, &plan.gold, cfg.max_prompt_chars, &mut plan.warnings);
    for label in &prompted {
        if guidelines.get(label).is_none() {
            plan.warnings.push(format!("no guideline for prompted label {label:?}"));
        }
    }
    plan.prompted = prompted;
    finish(sample, plan, prompt)
}

/// Embeds n seeded-chosen exemplars, each with the same answer form the
/// model must produce, before the query text.
pub fn render_fewshot(
    sample: &Sample,
    label_universe: &BTreeSet<String>,
    exemplars: &[Sample],
    n: usize,
    cfg: &RegularizationConfig,
) -> Result<(InstructionSample, Vec<String>), InstructError> {
    for exemplar in exemplars {
        if exemplar.id == sample.id {
            return Err(InstructError::ExemplarIsQuery(exemplar.id.clone()));
        }
    }
    let mut plan = plan(sample, label_universe, cfg);
    let take = if n > exemplars.len() {
        plan.warnings
            .push(format!("requested {n} exemplars, only {} available", exemplars.len()));
        exemplars.len()
    } else {
        n
    };
    let chosen: Vec<&Sample> = if take == 0 {
        Vec::new()
    } else {
        rand::seq::index::sample(&mut plan.rng, exemplars.len(), take)
            .iter()
            .map(|i| &exemplars[i])
            .collect()
    };

    let text = &sample.text;
    let compose = |labels: &[String]| {
        let mut prompt = format!("{TASK_INSTRUCTION}\n{}", label_set_line(labels));
        if !chosen.is_empty() {
            prompt.push_str("\nExamples:");
            for exemplar in &chosen {
                let mut mentions = exemplar.mentions.clone();
                mentions.sort_by_key(|m| (m.start, m.end));
                let answer = build_answer(&mentions, labels);
                prompt.push_str(&format!("\nText: {}\nAnswer: {answer}", exemplar.text));
            }
        }
        prompt.push_str(&format!("\nText: {text}"));
        prompt
    };
    let mut prompted = std::mem::take(&mut plan.prompted);
    let prompt =
        enforce_budget(compose, &mut prompted, &plan.gold, cfg.max_prompt_chars, &mut plan.warnings);
    plan.prompted = prompted;
    Ok(finish(sample, plan, prompt))
}
