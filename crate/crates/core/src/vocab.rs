//! Canonical ingredient vocabulary and the equality rule used by Hit@k.
//!
//! Normalization is a fixed rule chain: lowercase, collapse whitespace, trim
//! non-alphanumeric edges, per-word spelling standardization, then
//! suffix-rule singularization of the head (last) word. Both rule tables are
//! plain-text data files; editable copies can be loaded at runtime.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{RecipeSet, SubstitutionSample};
use crate::jsonl::{self, JsonlError};

const DEFAULT_EXCEPTIONS: &str = include_str!("../data/singular_exceptions.txt");
const DEFAULT_SPELLING: &str = include_str!("../data/spelling_map.txt");

/// Passes of the rule chain before the result is required to be stable.
const MAX_PASSES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("ingredient {raw:?} is empty after normalization")]
    EmptyAfterNormalization { raw: String },
    #[error("rule file line {line}: {message}")]
    RuleFile { line: usize, message: String },
    #[error("rule {key:?} -> {value:?} does not produce a normalized form")]
    UnstableRule { key: String, value: String },
    #[error("alias {alias:?} resolves to both {first:?} and {second:?}")]
    AliasConflict {
        alias: String,
        first: String,
        second: String,
    },
    #[error("duplicate canonical entry {0:?}")]
    DuplicateCanonical(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct Normalizer {
    invariant: HashSet<String>,
    irregular: HashMap<String, String>,
    spelling: HashMap<String, String>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer::from_rule_text(DEFAULT_EXCEPTIONS, DEFAULT_SPELLING)
            .expect("bundled rule files are valid")
    }
}

fn parse_rule_lines(text: &str) -> Result<Vec<(usize, String, Option<String>)>, VocabError> {
    let mut rules = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once("->") {
            Some((k, v)) => {
                let (k, v) = (k.trim().to_lowercase(), v.trim().to_lowercase());
                if k.is_empty() || v.is_empty() || k.contains(' ') || v.contains(' ') {
                    return Err(VocabError::RuleFile {
                        line: idx + 1,
                        message: format!("expected `word -> word`, got {line:?}"),
                    });
                }
                rules.push((idx + 1, k, Some(v)));
            }
            None if line.contains(' ') => {
                return Err(VocabError::RuleFile {
                    line: idx + 1,
                    message: format!("expected a single word, got {line:?}"),
                })
            }
            None => rules.push((idx + 1, line.to_lowercase(), None)),
        }
    }
    Ok(rules)
}

impl Normalizer {
    /// Builds a normalizer from the text of an exceptions file and a spelling map.
    ///
    /// Every rule target must already be a fixed point of the chain, otherwise
    /// normalization would not be idempotent.
    pub fn from_rule_text(exceptions: &str, spelling: &str) -> Result<Self, VocabError> {
        let mut normalizer = Normalizer {
            invariant: HashSet::new(),
            irregular: HashMap::new(),
            spelling: HashMap::new(),
        };
        for (_, key, value) in parse_rule_lines(exceptions)? {
            match value {
                Some(v) => {
                    normalizer.irregular.insert(key, v);
                }
                None => {
                    normalizer.invariant.insert(key);
                }
            }
        }
        for (line, key, value) in parse_rule_lines(spelling)? {
            let value = value.ok_or_else(|| VocabError::RuleFile {
                line,
                message: "spelling map entries need `variant -> canonical`".into(),
            })?;
            normalizer.spelling.insert(key, value);
        }
        for (key, value) in normalizer.irregular.iter().chain(normalizer.spelling.iter()) {
            if normalizer.spelling.contains_key(value)
                || normalizer.singularize(value) != *value
            {
                return Err(VocabError::UnstableRule {
                    key: key.clone(),
                    value: value.clone(),
                });
            }
        }
        Ok(normalizer)
    }

    pub fn from_files(exceptions: &Path, spelling: &Path) -> Result<Self, VocabError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| VocabError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        Normalizer::from_rule_text(&read(exceptions)?, &read(spelling)?)
    }

    pub fn normalize(&self, raw: &str) -> Result<String, VocabError> {
        let mut current = self.pass(raw);
        for _ in 1..MAX_PASSES {
            let next = self.pass(&current);
            if next == current {
                break;
            }
            current = next;
        }
        if current.is_empty() {
            return Err(VocabError::EmptyAfterNormalization { raw: raw.into() });
        }
        Ok(current)
    }

    fn pass(&self, raw: &str) -> String {
        let lowered = raw.to_lowercase();
        let cleaned = trim_edges(&lowered);
        let mut words: Vec<String> = cleaned
            .split_whitespace()
            .map(|w| self.respell(w).to_string())
            .collect();
        if let Some(last) = words.last_mut() {
            let singular = self.singularize(last);
            *last = self.respell(&singular).to_string();
        }
        trim_edges(&words.join(" ")).to_string()
    }

    fn respell<'a>(&'a self, word: &'a str) -> &'a str {
        self.spelling.get(word).map(String::as_str).unwrap_or(word)
    }

    /// Suffix rules: -ies→-y, -oes→-o, -ches/-shes/-xes/-sses/-zzes drop "es",
    /// other trailing "s" dropped unless the word ends in -ss, -us or -is.
    pub fn singularize(&self, word: &str) -> String {
        if word.chars().count() < 3 || self.invariant.contains(word) {
            return word.to_string();
        }
        if let Some(singular) = self.irregular.get(word) {
            return singular.clone();
        }
        let len = word.len();
        if word.ends_with("ies") && len > 4 {
            return format!("{}y", &word[..len - 3]);
        }
        if word.ends_with("oes") && len > 4 {
            return word[..len - 2].to_string();
        }
        if ["ches", "shes", "xes", "sses", "zzes"]
            .iter()
            .any(|suffix| word.ends_with(suffix))
        {
            return word[..len - 2].to_string();
        }
        if ["ss", "us", "is"].iter().any(|suffix| word.ends_with(suffix)) {
            return word.to_string();
        }
        match word.strip_suffix('s') {
            Some(stem) => stem.to_string(),
            None => word.to_string(),
        }
    }
}

fn trim_edges(s: &str) -> &str {
    s.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Normalizes with the bundled rule tables.
pub fn normalize_ingredient(raw: &str) -> Result<String, VocabError> {
    default_normalizer().normalize(raw)
}

pub fn default_normalizer() -> &'static Normalizer {
    static DEFAULT: std::sync::OnceLock<Normalizer> = std::sync::OnceLock::new();
    DEFAULT.get_or_init(Normalizer::default)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub canonical: String,
    pub aliases: BTreeSet<String>,
    pub frequency: u64,
    #[serde(default)]
    pub category: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Levenshtein,
    DamerauLevenshtein,
}

impl DistanceMetric {
    pub fn distance(self, a: &str, b: &str) -> usize {
        match self {
            DistanceMetric::Levenshtein => strsim::levenshtein(a, b),
            DistanceMetric::DamerauLevenshtein => strsim::damerau_levenshtein(a, b),
        }
    }
}

/// Controls how rare entries are folded into frequent neighbours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeRules {
    /// Entries with fewer mentions than this are merge candidates; entries at
    /// or above it are merge targets.
    pub min_frequency: u64,
    pub max_distance: usize,
    /// Candidates shorter than this (in chars) are never merged.
    pub min_length: usize,
    pub metric: DistanceMetric,
}

impl Default for MergeRules {
    fn default() -> Self {
        MergeRules {
            min_frequency: 2,
            max_distance: 1,
            min_length: 5,
            metric: DistanceMetric::Levenshtein,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeLogEntry {
    pub from: String,
    pub into: String,
    pub distance: usize,
    pub frequency: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub mentions: u64,
    pub unnormalizable: u64,
    pub merged: usize,
}

#[derive(Debug, Clone)]
pub struct IngredientVocab {
    entries: Vec<VocabEntry>,
    alias_index: HashMap<String, String>,
    positions: HashMap<String, usize>,
    normalizer: Normalizer,
}

impl IngredientVocab {
    /// An empty vocabulary: `matches` falls back to normalized equality.
    pub fn empty(normalizer: Normalizer) -> Self {
        IngredientVocab {
            entries: Vec::new(),
            alias_index: HashMap::new(),
            positions: HashMap::new(),
            normalizer,
        }
    }

    pub fn from_entries(
        mut entries: Vec<VocabEntry>,
        normalizer: Normalizer,
    ) -> Result<Self, VocabError> {
        entries.sort_by(|a, b| a.canonical.cmp(&b.canonical));
        let mut alias_index: HashMap<String, String> = HashMap::new();
        let mut positions = HashMap::new();
        for (pos, entry) in entries.iter().enumerate() {
            if positions.insert(entry.canonical.clone(), pos).is_some() {
                return Err(VocabError::DuplicateCanonical(entry.canonical.clone()));
            }
        }
        let mut bind = |alias: String, canonical: &str| -> Result<(), VocabError> {
            match alias_index.get(&alias) {
                Some(existing) if existing != canonical => Err(VocabError::AliasConflict {
                    alias,
                    first: existing.clone(),
                    second: canonical.to_string(),
                }),
                Some(_) => Ok(()),
                None => {
                    alias_index.insert(alias, canonical.to_string());
                    Ok(())
                }
            }
        };
        for entry in &entries {
            bind(entry.canonical.clone(), &entry.canonical)?;
        }
        for entry in &entries {
            for alias in &entry.aliases {
                if let Ok(key) = normalizer.normalize(alias) {
                    bind(key, &entry.canonical)?;
                }
            }
        }
        Ok(IngredientVocab {
            entries,
            alias_index,
            positions,
            normalizer,
        })
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn normalize(&self, raw: &str) -> Result<String, VocabError> {
        self.normalizer.normalize(raw)
    }

    pub fn get(&self, canonical: &str) -> Option<&VocabEntry> {
        self.positions.get(canonical).map(|&i| &self.entries[i])
    }

    /// Normalizes `raw` and maps it through the alias index. Unknown names
    /// resolve to their normalized form.
    pub fn resolve(&self, raw: &str) -> Option<String> {
        let key = self.normalizer.normalize(raw).ok()?;
        Some(self.alias_index.get(&key).cloned().unwrap_or(key))
    }

    /// The equality rule shared by Hit@k and preference mining.
    pub fn matches(&self, prediction: &str, gold: &str) -> bool {
        self.gold_matcher(gold)(prediction)
    }

    /// [`matches`](Self::matches) against a fixed gold answer, resolved once.
    pub fn gold_matcher<'a>(&'a self, gold: &str) -> impl Fn(&str) -> bool + 'a {
        let resolved = self.resolve(gold);
        let plain = gold.trim().to_lowercase();
        move |prediction| match (self.resolve(prediction), &resolved) {
            (Some(a), Some(b)) => &a == b,
            (None, None) => prediction.trim().to_lowercase() == plain,
            _ => false,
        }
    }

    pub fn category_of(&self, raw: &str) -> Option<&str> {
        let canonical = self.resolve(raw)?;
        self.get(&canonical)?.category.as_deref()
    }

    /// Attaches categories keyed by any alias. Returns names that did not resolve.
    pub fn attach_categories<'a, I>(&mut self, categories: I) -> Vec<String>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut unresolved = Vec::new();
        for (name, category) in categories {
            let pos = self
                .resolve(name)
                .and_then(|canonical| self.positions.get(&canonical).copied());
            match pos {
                Some(pos) => self.entries[pos].category = Some(category.to_string()),
                None => unresolved.push(name.to_string()),
            }
        }
        unresolved
    }

    pub fn total_frequency(&self) -> u64 {
        self.entries.iter().map(|e| e.frequency).sum()
    }

    pub fn save(&self, path: &Path) -> Result<usize, VocabError> {
        Ok(jsonl::write_jsonl(path, &self.entries)?)
    }

    pub fn load(path: &Path, normalizer: Normalizer) -> Result<Self, VocabError> {
        let entries: Vec<VocabEntry> = jsonl::read_jsonl(path)?;
        IngredientVocab::from_entries(entries, normalizer)
    }
}

#[derive(Debug, Clone)]
pub struct VocabBuild {
    pub vocab: IngredientVocab,
    pub merge_log: Vec<MergeLogEntry>,
    pub stats: BuildStats,
}

/// Every raw ingredient mention in the corpora: recipe aliases plus each
/// sample's source and target.
pub fn corpus_mentions<'a>(
    recipes: &'a RecipeSet,
    samples: &'a [SubstitutionSample],
) -> impl Iterator<Item = &'a str> + 'a {
    recipes
        .iter()
        .flat_map(|r| r.ingredient_groups.iter().flatten().map(String::as_str))
        .chain(
            samples
                .iter()
                .flat_map(|s| [s.source.as_str(), s.target.as_str()]),
        )
}

pub fn build_vocab(
    recipes: &RecipeSet,
    samples: &[SubstitutionSample],
    rules: &MergeRules,
    normalizer: Normalizer,
) -> VocabBuild {
    build_vocab_from_mentions(corpus_mentions(recipes, samples), rules, normalizer)
}

pub fn build_vocab_from_mentions<'a, I>(
    mentions: I,
    rules: &MergeRules,
    normalizer: Normalizer,
) -> VocabBuild
where
    I: IntoIterator<Item = &'a str>,
{
    let mut stats = BuildStats::default();
    let mut collapsed: BTreeMap<String, VocabEntry> = BTreeMap::new();
    for raw in mentions {
        stats.mentions += 1;
        let Ok(canonical) = normalizer.normalize(raw) else {
            stats.unnormalizable += 1;
            log::warn!("skipping unnormalizable ingredient {raw:?}");
            continue;
        };
        let entry = collapsed
            .entry(canonical.clone())
            .or_insert_with(|| VocabEntry {
                canonical,
                aliases: BTreeSet::new(),
                frequency: 0,
                category: None,
            });
        entry.frequency += 1;
        entry.aliases.insert(raw.trim().to_string());
    }

    let merge_log = merge_rare(&mut collapsed, rules);
    stats.merged = merge_log.len();
    let vocab = IngredientVocab::from_entries(collapsed.into_values().collect(), normalizer)
        .expect("collapsed entries have unique canonicals and disjoint aliases");
    VocabBuild {
        vocab,
        merge_log,
        stats,
    }
}

fn merge_rare(entries: &mut BTreeMap<String, VocabEntry>, rules: &MergeRules) -> Vec<MergeLogEntry> {
    let anchors: Vec<(String, u64, usize)> = entries
        .values()
        .filter(|e| e.frequency >= rules.min_frequency)
        .map(|e| (e.canonical.clone(), e.frequency, e.canonical.chars().count()))
        .collect();
    let candidates: Vec<String> = entries
        .values()
        .filter(|e| e.frequency < rules.min_frequency && e.canonical.chars().count() >= rules.min_length)
        .map(|e| e.canonical.clone())
        .collect();

    let mut plan = Vec::new();
    for rare in candidates {
        let rare_len = rare.chars().count();
        let mut best: Option<(usize, u64, &str)> = None;
        for (anchor, freq, anchor_len) in &anchors {
            if rare_len.abs_diff(*anchor_len) > rules.max_distance {
                continue;
            }
            let d = rules.metric.distance(&rare, anchor);
            if d > rules.max_distance {
                continue;
            }
            // nearest first, then most frequent, then lexicographic
            let better = match best {
                None => true,
                Some((bd, bf, bn)) => (d, std::cmp::Reverse(*freq), anchor.as_str()) < (bd, std::cmp::Reverse(bf), bn),
            };
            if better {
                best = Some((d, *freq, anchor));
            }
        }
        if let Some((distance, _, into)) = best {
            plan.push((rare, into.to_string(), distance));
        }
    }

    let mut log = Vec::with_capacity(plan.len());
    for (from, into, distance) in plan {
        let rare = entries.remove(&from).expect("candidate present");
        let target = entries.get_mut(&into).expect("anchor present");
        target.frequency += rare.frequency;
        target.aliases.extend(rare.aliases);
        target.aliases.insert(rare.canonical.clone());
        log.push(MergeLogEntry {
            from,
            into,
            distance,
            frequency: rare.frequency,
        });
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(s: &str) -> String {
        normalize_ingredient(s).unwrap()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(norm("Lemons"), "lemon");
        assert_eq!(norm("lemon"), "lemon");
        // lowercase -> collapse -> trim -> singularize last word
        assert_eq!(norm("  Watermelon  Wedges "), "watermelon wedge");
        assert_eq!(norm("tomatoes"), "tomato");
        assert_eq!(norm("Fresh Blueberries!"), "fresh blueberry");
        assert_eq!(norm("peaches"), "peach");
        assert_eq!(norm("glasses"), "glass");
        assert_eq!(norm("asparagus"), "asparagus");
        assert_eq!(norm("bay leaves"), "bay leaf");
        assert_eq!(norm("Red Chillies"), "red chili");
        assert_eq!(norm("greek yoghurt"), "greek yogurt");
        assert_eq!(norm("cheeses"), "cheese");
        assert_eq!(norm("egg"), "egg");
    }

    #[test]
    fn empty_after_normalization_is_an_error() {
        assert!(matches!(
            normalize_ingredient("  ...  "),
            Err(VocabError::EmptyAfterNormalization { .. })
        ));
        assert!(normalize_ingredient("").is_err());
    }

    #[test]
    fn unstable_rule_rejected() {
        let err = Normalizer::from_rule_text("", "colour -> colours").unwrap_err();
        assert!(matches!(err, VocabError::UnstableRule { .. }));
        let err = Normalizer::from_rule_text("two words", "").unwrap_err();
        assert!(matches!(err, VocabError::RuleFile { line: 1, .. }));
    }

    #[test]
    fn alias_collapse_counts_every_mention() {
        let build = build_vocab_from_mentions(
            ["lemon", "lemons", "Lemon"],
            &MergeRules::default(),
            Normalizer::default(),
        );
        assert_eq!(build.vocab.len(), 1);
        let entry = &build.vocab.entries()[0];
        assert_eq!(entry.canonical, "lemon");
        assert_eq!(entry.frequency, 3);
    }

    #[test]
    fn rare_misspelling_merges_into_frequent_neighbour() {
        let rules = MergeRules {
            min_frequency: 2,
            ..MergeRules::default()
        };
        let build = build_vocab_from_mentions(
            ["barley", "barley", "barleyy", "orange"],
            &rules,
            Normalizer::default(),
        );
        assert_eq!(build.merge_log.len(), 1);
        assert_eq!(build.merge_log[0].from, "barleyy");
        assert_eq!(build.merge_log[0].into, "barley");
        assert_eq!(build.merge_log[0].distance, 1);
        let barley = build.vocab.get("barley").unwrap();
        assert_eq!(barley.frequency, 3);
        assert!(barley.aliases.contains("barleyy"));
        assert!(build.vocab.matches("barleyy", "Barley"));
        // "orange" is rare but has no neighbour within distance 1
        assert!(build.vocab.get("orange").is_some());
        assert_eq!(build.vocab.total_frequency(), 4);
    }

    #[test]
    fn match_examples() {
        let build = build_vocab_from_mentions(
            ["lemon", "lemons", "lime", "strawberry"],
            &MergeRules::default(),
            Normalizer::default(),
        );
        let v = &build.vocab;
        assert!(v.matches("lime", "lime"));
        assert!(v.matches("Lemons", "lemon"));
        assert!(!v.matches("strawberry", "lime"));
        // unknown strings compare by normalized form
        assert!(v.matches("Blood Oranges", "blood orange"));
        assert!(!v.matches("blood orange", "orange"));
    }

    #[test]
    fn categories_and_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.jsonl");
        let mut build = build_vocab_from_mentions(
            ["Lemons", "lemon", "milk"],
            &MergeRules::default(),
            Normalizer::default(),
        );
        let missing = build
            .vocab
            .attach_categories([("lemons", "citrus"), ("milk", "dairy"), ("kale", "greens")]);
        assert_eq!(missing, vec!["kale".to_string()]);
        build.vocab.save(&path).unwrap();
        let loaded = IngredientVocab::load(&path, Normalizer::default()).unwrap();
        assert_eq!(loaded.entries(), build.vocab.entries());
        assert_eq!(loaded.category_of("Lemon"), Some("citrus"));
        assert!(loaded.matches("LEMONS", "lemon"));
    }

    #[test]
    fn conflicting_aliases_rejected_on_load() {
        let entries = vec![
            VocabEntry {
                canonical: "lemon".into(),
                aliases: ["lemons".to_string()].into(),
                frequency: 1,
                category: None,
            },
            VocabEntry {
                canonical: "lime".into(),
                aliases: ["lemon".to_string()].into(),
                frequency: 1,
                category: None,
            },
        ];
        assert!(matches!(
            IngredientVocab::from_entries(entries, Normalizer::default()),
            Err(VocabError::AliasConflict { .. })
        ));
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(raw in "[A-Za-z' .,-]{0,12}( [A-Za-z'-]{1,10}){0,3}[s!.]?") {
            if let Ok(once) = normalize_ingredient(&raw) {
                prop_assert_eq!(normalize_ingredient(&once).unwrap(), once);
            }
        }

        #[test]
        fn match_is_reflexive_and_symmetric(a in "[a-zA-Z ]{1,12}", b in "[a-zA-Z ]{1,12}") {
            let vocab = build_vocab_from_mentions(
                [a.as_str(), b.as_str(), "lemon"],
                &MergeRules::default(),
                Normalizer::default(),
            ).vocab;
            prop_assert!(vocab.matches(&a, &a));
            prop_assert_eq!(vocab.matches(&a, &b), vocab.matches(&b, &a));
        }

        #[test]
        fn merging_conserves_mentions(words in proptest::collection::vec("[a-z]{3,8}s?", 1..40)) {
            let build = build_vocab_from_mentions(
                words.iter().map(String::as_str),
                &MergeRules { min_frequency: 2, max_distance: 2, min_length: 3, ..MergeRules::default() },
                Normalizer::default(),
            );
            prop_assert_eq!(build.vocab.total_frequency(), words.len() as u64);
        }
    }
}
