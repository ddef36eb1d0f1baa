//! Label remapping and taxonomy hygiene: expert-authored rules translate
//! each dataset's labels into the shared inventory, a linter flags names
//! that break the naming principles, and the label tree export shows the
//! resulting hierarchy.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dataset, LabelError, UniversalLabel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleAction {
    Rename(UniversalLabel),
    Drop,
}

/// One remapping decision: what happens to `raw_label` inside `dataset_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingRule {
    pub dataset_id: String,
    pub raw_label: String,
    pub action: RuleAction,
    pub note: Option<String>,
}

/// On-disk form: `{"dataset_id", "raw_label", "action": "rename"|"drop",
/// "to"?, "note"?}`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleRecord {
    dataset_id: String,
    raw_label: String,
    action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    to: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("duplicate rule for dataset {dataset_id:?} label {raw_label:?}")]
    DuplicateRule { dataset_id: String, raw_label: String },
    #[error("rule for dataset {dataset_id:?} label {raw_label:?} is invalid: {detail}")]
    InvalidRule { dataset_id: String, raw_label: String, detail: String },
    #[error("rename target {raw:?} is not a valid label: {source}")]
    BadLabel { raw: String, source: LabelError },
    #[error("no rule covers: {}", uncovered_list(.0))]
    MissingRules(Vec<(String, String)>),
    #[error("duplicate label {0:?} in taxonomy input")]
    DuplicateLabel(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn uncovered_list(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .map(|(d, l)| format!("{d}/{l}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// The full rule set, exactly one rule per (dataset_id, raw_label).
#[derive(Debug, Clone, Default)]
pub struct MappingSet {
    rules: BTreeMap<(String, String), MappingRule>,
}

impl MappingSet {
    pub fn from_rules(rules: Vec<MappingRule>) -> Result<Self, TaxonomyError> {
        let mut map = BTreeMap::new();
        for rule in rules {
            let key = (rule.dataset_id.clone(), rule.raw_label.clone());
            if map.insert(key.clone(), rule).is_some() {
                return Err(TaxonomyError::DuplicateRule {
                    dataset_id: key.0,
                    raw_label: key.1,
                });
            }
        }
        Ok(MappingSet { rules: map })
    }

    pub fn from_reader<R: io::Read>(r: R) -> Result<Self, TaxonomyError> {
        let records: Vec<RuleRecord> = serde_json::from_reader(r)?;
        let mut rules = Vec::with_capacity(records.len());
        for rec in records {
            let action = match rec.action.as_str() {
                "rename" => match rec.to {
                    Some(to) => RuleAction::Rename(UniversalLabel::parse(&to).map_err(
                        |source| TaxonomyError::BadLabel { raw: to.clone(), source },
                    )?),
                    None => {
                        return Err(TaxonomyError::InvalidRule {
                            dataset_id: rec.dataset_id,
                            raw_label: rec.raw_label,
                            detail: "rename requires a \"to\" target".into(),
                        })
                    }
                },
                "drop" => {
                    if rec.to.is_some() {
                        return Err(TaxonomyError::InvalidRule {
                            dataset_id: rec.dataset_id,
                            raw_label: rec.raw_label,
                            detail: "drop must not carry a \"to\" target".into(),
                        });
                    }
                    RuleAction::Drop
                }
                other => {
                    return Err(TaxonomyError::InvalidRule {
                        dataset_id: rec.dataset_id,
                        raw_label: rec.raw_label,
                        detail: format!("unknown action {other:?}"),
                    })
                }
            };
            rules.push(MappingRule {
                dataset_id: rec.dataset_id,
                raw_label: rec.raw_label,
                action,
                note: rec.note,
            });
        }
        Self::from_rules(rules)
    }

    pub fn get(&self, dataset_id: &str, raw_label: &str) -> Option<&MappingRule> {
        self.rules
            .get(&(dataset_id.to_string(), raw_label.to_string()))
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> impl Iterator<Item = &MappingRule> {
        self.rules.values()
    }

    /// Rendered labels every rename rule maps into (tree/lint input).
    pub fn rename_targets(&self) -> BTreeSet<UniversalLabel> {
        self.rules
            .values()
            .filter_map(|r| match &r.action {
                RuleAction::Rename(to) => Some(to.clone()),
                RuleAction::Drop => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct RuleHit {
    pub dataset_id: String,
    pub raw_label: String,
    pub action: String,
    pub mentions: usize,
}

/// Exact accounting for one apply_mapping run.
#[derive(Debug, Clone, Serialize, Default)]
pub struct MappingOutcome {
    pub mentions_before: usize,
    pub mentions_after: usize,
    pub renamed_mentions: usize,
    pub dropped_mentions: usize,
    pub rule_hits: Vec<RuleHit>,
    /// Rules that matched nothing in the corpus, as "dataset/label" keys.
    pub unused_rules: Vec<String>,
}

/// Relabels every mention per its rule. Rules must be total over the
/// (dataset, label) pairs present; dropped labels lose their mentions but
/// keep their samples.
pub fn apply_mapping(
    corpus: Corpus,
    rules: &MappingSet,
) -> Result<(Corpus, MappingOutcome), TaxonomyError> {
    let mut uncovered = BTreeSet::new();
    for dataset in corpus.datasets() {
        for label in &dataset.label_set {
            if rules.get(dataset.id(), &label.render()).is_none() {
                uncovered.insert((dataset.id().to_string(), label.render()));
            }
        }
    }
    if !uncovered.is_empty() {
        return Err(TaxonomyError::MissingRules(uncovered.into_iter().collect()));
    }

    // Per-dataset hit tallies keyed (dataset id, raw label), merged after the
    // parallel pass.
    type HitTally = Vec<((String, String), usize)>;
    let mut hit_counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mapped: Vec<(Dataset, HitTally)> = corpus
        .into_datasets()
        .into_par_iter()
        .map(|mut dataset| {
            let mut hits: BTreeMap<(String, String), usize> = BTreeMap::new();
            for sample in &mut dataset.samples {
                sample.mentions.retain_mut(|m| {
                    let key = (dataset.meta.id.clone(), m.label.render());
                    let rule = rules
                        .get(&key.0, &key.1)
                        .expect("coverage checked before dispatch");
                    *hits.entry(key).or_default() += 1;
                    match &rule.action {
                        RuleAction::Rename(to) => {
                            m.label = to.clone();
                            true
                        }
                        RuleAction::Drop => false,
                    }
                });
            }
            dataset.rebuild_label_set();
            let hits: Vec<_> = hits.into_iter().collect();
            (dataset, hits)
        })
        .collect();

    let mut outcome = MappingOutcome::default();
    let mut datasets = Vec::with_capacity(mapped.len());
    for (dataset, hits) in mapped {
        for (key, n) in hits {
            *hit_counts.entry(key).or_default() += n;
        }
        outcome.mentions_after += dataset.mention_count();
        datasets.push(dataset);
    }
    for ((dataset_id, raw_label), mentions) in &hit_counts {
        let rule = rules.get(dataset_id, raw_label).expect("hit implies rule");
        let action = match &rule.action {
            RuleAction::Rename(to) => {
                outcome.renamed_mentions += mentions;
                format!("rename:{}", to.render())
            }
            RuleAction::Drop => {
                outcome.dropped_mentions += mentions;
                "drop".to_string()
            }
        };
        outcome.rule_hits.push(RuleHit {
            dataset_id: dataset_id.clone(),
            raw_label: raw_label.clone(),
            action,
            mentions: *mentions,
        });
    }
    outcome.mentions_before = outcome.renamed_mentions + outcome.dropped_mentions;
    for rule in rules.rules() {
        let key = (rule.dataset_id.clone(), rule.raw_label.clone());
        if !hit_counts.contains_key(&key) {
            outcome.unused_rules.push(format!("{}/{}", key.0, key.1));
        }
    }

    let corpus = Corpus::new(datasets).expect("ids untouched by relabeling");
    Ok((corpus, outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LintKind {
    Acronym,
    DuplicateCasefold,
    MissingParent,
    EmptySegment,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct LintFinding {
    pub label: String,
    pub kind: LintKind,
    pub detail: String,
}

fn is_acronym_token(segment: &str) -> bool {
    let single_token = segment.split_whitespace().count() == 1 && !segment.contains(char::is_whitespace);
    single_token
        && (2..=4).contains(&segment.chars().count())
        && segment.chars().all(|c| c.is_ascii_uppercase())
}

/// Checks rendered label texts against the naming principles: no bare
/// acronyms (unless waived), no casefold duplicates, hierarchical children
/// need their parent present, no empty segments.
pub fn lint_labels<'a, I>(labels: I, waivers: &BTreeSet<String>) -> Vec<LintFinding>
where
    I: IntoIterator<Item = &'a str>,
{
    let texts: Vec<&str> = labels.into_iter().collect();
    let mut findings = Vec::new();
    let mut parsed: Vec<(&str, UniversalLabel)> = Vec::new();
    for text in &texts {
        match UniversalLabel::parse(text) {
            Ok(label) => parsed.push((text, label)),
            Err(e) => findings.push(LintFinding {
                label: text.to_string(),
                kind: LintKind::EmptySegment,
                detail: e.to_string(),
            }),
        }
    }

    let rendered: BTreeSet<String> = parsed.iter().map(|(_, l)| l.render()).collect();
    let mut seen_casefold: BTreeMap<String, String> = BTreeMap::new();

    for (text, label) in &parsed {
        for segment in label.segments() {
            if is_acronym_token(segment) && !waivers.contains(segment) {
                findings.push(LintFinding {
                    label: text.to_string(),
                    kind: LintKind::Acronym,
                    detail: format!("segment {segment:?} looks like an acronym"),
                });
            }
        }
        let folded = label.render().to_lowercase();
        match seen_casefold.get(&folded) {
            Some(first) if *first != label.render() => findings.push(LintFinding {
                label: text.to_string(),
                kind: LintKind::DuplicateCasefold,
                detail: format!("collides with {first:?} after casefold"),
            }),
            Some(_) => {}
            None => {
                seen_casefold.insert(folded, label.render());
            }
        }
        if let Some(parent) = label.parent() {
            if !rendered.contains(&parent.render()) {
                findings.push(LintFinding {
                    label: text.to_string(),
                    kind: LintKind::MissingParent,
                    detail: format!("parent {:?} absent from the taxonomy", parent.render()),
                });
            }
        }
    }
    findings
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct TaxonomyNode {
    pub segment: String,
    /// Full path of this node.
    pub label: String,
    /// True when the node exists only as an ancestor of explicit labels.
    pub implicit: bool,
    pub children: Vec<TaxonomyNode>,
}

#[derive(Debug, Clone, Serialize, Default, PartialEq, Eq)]
pub struct TaxonomyTree {
    pub roots: Vec<TaxonomyNode>,
}

impl TaxonomyTree {
    /// Indented text export, one node per line.
    pub fn render_text(&self) -> String {
        fn walk(node: &TaxonomyNode, depth: usize, out: &mut String) {
            out.push_str(&"  ".repeat(depth));
            out.push_str(&node.segment);
            if node.implicit {
                out.push_str(" (implicit)");
            }
            out.push('\n');
            for child in &node.children {
                walk(child, depth + 1, out);
            }
        }
        let mut out = String::new();
        for root in &self.roots {
            walk(root, 0, &mut out);
        }
        out
    }

    pub fn node_count(&self) -> usize {
        fn count(node: &TaxonomyNode) -> usize {
            1 + node.children.iter().map(count).sum::<usize>()
        }
        self.roots.iter().map(count).sum()
    }
}

/// Groups labels into a forest by shared path prefixes, sorted at every
/// level. Ancestors absent from the input are created and flagged implicit.
pub fn build_tree<I>(labels: I) -> Result<TaxonomyTree, TaxonomyError>
where
    I: IntoIterator<Item = UniversalLabel>,
{
    struct Builder {
        explicit: bool,
        children: BTreeMap<String, Builder>,
    }
    impl Builder {
        fn new() -> Self {
            Builder { explicit: false, children: BTreeMap::new() }
        }
    }

    let mut root = Builder::new();
    let mut seen = BTreeSet::new();
    for label in labels {
        if !seen.insert(label.render()) {
            return Err(TaxonomyError::DuplicateLabel(label.render()));
        }
        let mut node = &mut root;
        for segment in label.segments() {
            node = node.children.entry(segment.clone()).or_insert_with(Builder::new);
        }
        node.explicit = true;
    }

    fn freeze(name: &str, builder: &Builder, path: &[String]) -> TaxonomyNode {
        let mut full = path.to_vec();
        full.push(name.to_string());
        let children = builder
            .children
            .iter()
            .map(|(seg, child)| freeze(seg, child, &full))
            .collect();
        TaxonomyNode {
            segment: name.to_string(),
            label: full.join("->"),
            implicit: !builder.explicit,
            children,
        }
    }

    let roots = root
        .children
        .iter()
        .map(|(seg, child)| freeze(seg, child, &[]))
        .collect();
    Ok(TaxonomyTree { roots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::two_dataset_fixture;

    fn rule(dataset: &str, from: &str, action: RuleAction) -> MappingRule {
        MappingRule {
            dataset_id: dataset.into(),
            raw_label: from.into(),
            action,
            note: None,
        }
    }

    fn rename(dataset: &str, from: &str, to: &str) -> MappingRule {
        rule(dataset, from, RuleAction::Rename(UniversalLabel::parse(to).unwrap()))
    }

    fn fixture_rules() -> MappingSet {
        MappingSet::from_rules(vec![
            rename("news-a", "location", "location or geo-political entity"),
            rename("news-a", "person", "person"),
            rename("wiki-b", "geo-political entity", "location or geo-political entity"),
            rename("wiki-b", "location", "location (without geo-political entity)"),
        ])
        .unwrap()
    }

    #[test]
    fn rename_rewrites_labels_and_label_sets() {
        let corpus = two_dataset_fixture();
        let (mapped, outcome) = apply_mapping(corpus, &fixture_rules()).unwrap();
        let a = mapped.dataset("news-a").unwrap();
        assert!(a
            .label_set
            .iter()
            .any(|l| l.render() == "location or geo-political entity"));
        assert!(!a.label_set.iter().any(|l| l.render() == "location"));
        assert_eq!(outcome.mentions_before, 11);
        assert_eq!(outcome.mentions_after, 11);
        assert_eq!(outcome.renamed_mentions, 11);
        assert_eq!(outcome.dropped_mentions, 0);
    }

    #[test]
    fn drop_removes_mentions_but_keeps_samples() {
        let corpus = two_dataset_fixture();
        let before_samples = corpus.sample_count();
        let rules = MappingSet::from_rules(vec![
            rule("news-a", "location", RuleAction::Drop),
            rename("news-a", "person", "person"),
            rename("wiki-b", "geo-political entity", "geo-political entity"),
            rename("wiki-b", "location", "location"),
        ])
        .unwrap();
        let (mapped, outcome) = apply_mapping(corpus, &rules).unwrap();
        assert_eq!(mapped.sample_count(), before_samples);
        let a = mapped.dataset("news-a").unwrap();
        assert!(!a.label_set.iter().any(|l| l.render() == "location"));
        // news-a has 5 location mentions out of 11 total
        assert_eq!(outcome.dropped_mentions, 5);
        assert_eq!(outcome.mentions_after, 6);
        assert_eq!(
            outcome.mentions_before - outcome.dropped_mentions,
            outcome.mentions_after
        );
    }

    #[test]
    fn missing_rules_error_lists_all_uncovered_pairs() {
        let corpus = two_dataset_fixture();
        let rules = MappingSet::from_rules(vec![rename("news-a", "person", "person")]).unwrap();
        let err = apply_mapping(corpus, &rules).unwrap_err();
        match err {
            TaxonomyError::MissingRules(pairs) => {
                assert_eq!(
                    pairs,
                    vec![
                        ("news-a".to_string(), "location".to_string()),
                        ("wiki-b".to_string(), "geo-political entity".to_string()),
                        ("wiki-b".to_string(), "location".to_string()),
                    ]
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn texts_and_sample_order_survive_mapping() {
        let corpus = two_dataset_fixture();
        let texts_before: Vec<String> =
            corpus.samples().map(|s| s.text.clone()).collect();
        let (mapped, _) = apply_mapping(corpus, &fixture_rules()).unwrap();
        let texts_after: Vec<String> = mapped.samples().map(|s| s.text.clone()).collect();
        assert_eq!(texts_before, texts_after);
    }

    #[test]
    fn identity_mapping_is_idempotent() {
        let corpus = two_dataset_fixture();
        let (mapped, _) = apply_mapping(corpus, &fixture_rules()).unwrap();
        let identity: Vec<MappingRule> = mapped
            .datasets()
            .iter()
            .flat_map(|d| {
                d.label_set
                    .iter()
                    .map(|l| rename(d.id(), &l.render(), &l.render()))
                    .collect::<Vec<_>>()
            })
            .collect();
        let identity = MappingSet::from_rules(identity).unwrap();
        let snapshot: Vec<_> = mapped.samples().cloned().collect();
        let (again, outcome) = apply_mapping(mapped, &identity).unwrap();
        let after: Vec<_> = again.samples().cloned().collect();
        assert_eq!(snapshot, after);
        assert_eq!(outcome.dropped_mentions, 0);
    }

    #[test]
    fn rule_file_round_trip_and_validation() {
        let json = r#"[
            {"dataset_id": "d", "raw_label": "PER", "action": "rename", "to": "person", "note": "coarse"},
            {"dataset_id": "d", "raw_label": "MISC", "action": "drop"}
        ]"#;
        let set = MappingSet::from_reader(json.as_bytes()).unwrap();
        assert_eq!(set.len(), 2);
        assert!(matches!(set.get("d", "MISC").unwrap().action, RuleAction::Drop));

        let bad = r#"[{"dataset_id": "d", "raw_label": "PER", "action": "rename"}]"#;
        assert!(matches!(
            MappingSet::from_reader(bad.as_bytes()).unwrap_err(),
            TaxonomyError::InvalidRule { .. }
        ));
        let bad = r#"[{"dataset_id": "d", "raw_label": "M", "action": "drop", "to": "x"}]"#;
        assert!(matches!(
            MappingSet::from_reader(bad.as_bytes()).unwrap_err(),
            TaxonomyError::InvalidRule { .. }
        ));
        let bad = r#"[{"dataset_id": "d", "raw_label": "P", "action": "merge"}]"#;
        assert!(matches!(
            MappingSet::from_reader(bad.as_bytes()).unwrap_err(),
            TaxonomyError::InvalidRule { .. }
        ));
        let bad = r#"[{"dataset_id": "d", "raw_label": "P", "action": "rename", "to": "a-> ->b"}]"#;
        assert!(matches!(
            MappingSet::from_reader(bad.as_bytes()).unwrap_err(),
            TaxonomyError::BadLabel { .. }
        ));
    }

    #[test]
    fn duplicate_rules_rejected() {
        let err = MappingSet::from_rules(vec![
            rename("d", "PER", "person"),
            rule("d", "PER", RuleAction::Drop),
        ])
        .unwrap_err();
        assert!(matches!(err, TaxonomyError::DuplicateRule { .. }));
    }

    #[test]
    fn coarse_type_renamed_to_child_of_others() {
        let corpus = two_dataset_fixture();
        let rules = MappingSet::from_rules(vec![
            rename("news-a", "person", "person->others"),
            rename("news-a", "location", "location"),
            rename("wiki-b", "geo-political entity", "geo-political entity"),
            rename("wiki-b", "location", "location"),
        ])
        .unwrap();
        let (mapped, _) = apply_mapping(corpus, &rules).unwrap();
        let a = mapped.dataset("news-a").unwrap();
        assert!(a.label_set.iter().any(|l| l.render() == "person->others"));
    }

    #[test]
    fn lint_flags_acronyms_unless_waived() {
        let waivers: BTreeSet<String> = ["DNA".to_string()].into_iter().collect();
        let findings = lint_labels(["PER", "DNA", "person", "HOUSE", "GPs"], &waivers);
        let acronyms: Vec<&str> = findings
            .iter()
            .filter(|f| f.kind == LintKind::Acronym)
            .map(|f| f.label.as_str())
            .collect();
        assert_eq!(acronyms, vec!["PER"]);
    }

    #[test]
    fn lint_flags_casefold_duplicates() {
        let findings = lint_labels(["Person", "person"], &BTreeSet::new());
        let dups: Vec<&LintFinding> = findings
            .iter()
            .filter(|f| f.kind == LintKind::DuplicateCasefold)
            .collect();
        assert_eq!(dups.len(), 1);
        assert_eq!(dups[0].label, "person");
        assert!(dups[0].detail.contains("Person"));
    }

    #[test]
    fn lint_checks_parent_presence() {
        let ok = lint_labels(["location", "location->scene"], &BTreeSet::new());
        assert!(ok.iter().all(|f| f.kind != LintKind::MissingParent));
        let bad = lint_labels(["location->scene"], &BTreeSet::new());
        assert!(bad.iter().any(|f| f.kind == LintKind::MissingParent));
    }

    #[test]
    fn lint_flags_empty_segments() {
        let findings = lint_labels(["a-> ->b"], &BTreeSet::new());
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].kind, LintKind::EmptySegment);
    }

    #[test]
    fn tree_groups_children_under_root() {
        let labels = ["person", "person->artist", "person->scientist"]
            .iter()
            .map(|s| UniversalLabel::parse(s).unwrap());
        let tree = build_tree(labels).unwrap();
        assert_eq!(tree.roots.len(), 1);
        let root = &tree.roots[0];
        assert_eq!(root.segment, "person");
        assert!(!root.implicit);
        let kids: Vec<&str> = root.children.iter().map(|c| c.segment.as_str()).collect();
        assert_eq!(kids, vec!["artist", "scientist"]);
        assert_eq!(root.children[0].label, "person->artist");
    }

    #[test]
    fn tree_of_nothing_is_empty() {
        let tree = build_tree(std::iter::empty()).unwrap();
        assert!(tree.roots.is_empty());
        assert_eq!(tree.node_count(), 0);
    }

    #[test]
    fn orphan_child_creates_implicit_parent() {
        let tree = build_tree([UniversalLabel::parse("a->b").unwrap()]).unwrap();
        assert_eq!(tree.roots.len(), 1);
        assert!(tree.roots[0].implicit);
        assert!(!tree.roots[0].children[0].implicit);
        assert_eq!(tree.render_text(), "a (implicit)\n  b\n");
    }

    #[test]
    fn duplicate_tree_input_rejected() {
        let err = build_tree([
            UniversalLabel::parse("person").unwrap(),
            UniversalLabel::parse("person").unwrap(),
        ])
        .unwrap_err();
        assert!(matches!(err, TaxonomyError::DuplicateLabel(_)));
    }

    #[test]
    fn tree_roots_sorted_deterministically() {
        let tree = build_tree(
            ["zebra", "apple", "mango"]
                .iter()
                .map(|s| UniversalLabel::parse(s).unwrap()),
        )
        .unwrap();
        let names: Vec<&str> = tree.roots.iter().map(|r| r.segment.as_str()).collect();
        assert_eq!(names, vec!["apple", "mango", "zebra"]);
    }
}
