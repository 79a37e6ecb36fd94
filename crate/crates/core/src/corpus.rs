//! Recipe and substitution corpora.
//!
//! Two recipe layouts are accepted: the Recipe1M `layer1.json` shape (a JSON
//! array of `{id, title, ingredients: [{text}], instructions: [{text}]}`),
//! streamed record by record, and a JSONL fixture shape whose `ingredients`
//! are already alias groups. Substitution files are JSONL lines of
//! `{id, ingredients, subs: [source, target]}`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, DeserializeSeed, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::vocab::Normalizer;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: record {record}: {message}")]
    InvalidRecord {
        path: PathBuf,
        record: usize,
        message: String,
    },
    #[error("duplicate recipe ids: {}", .ids.join(", "))]
    DuplicateIds { ids: Vec<String> },
    #[error("cannot draw {requested} samples from {available}")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("unknown split {0:?} (expected train, valid or test)")]
    UnknownSplit(String),
    #[error("unknown recipe format {0:?} (expected recipe1m-json or jsonl)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub id: String,
    pub title: String,
    pub ingredient_groups: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions: Option<Vec<String>>,
}

impl Recipe {
    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty recipe id".into());
        }
        if self.ingredient_groups.is_empty() {
            return Err(format!("recipe {} has no ingredients", self.id));
        }
        for group in &self.ingredient_groups {
            if group.is_empty() {
                return Err(format!("recipe {} has an empty ingredient group", self.id));
            }
            if group.iter().any(|alias| alias.trim().is_empty()) {
                return Err(format!("recipe {} has a blank ingredient alias", self.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeFormat {
    Recipe1mJson,
    Jsonl,
}

impl FromStr for RecipeFormat {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recipe1m-json" => Ok(RecipeFormat::Recipe1mJson),
            "jsonl" => Ok(RecipeFormat::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.into())),
        }
    }
}

/// Recipes keyed by id, in file order.
#[derive(Debug, Clone, Default)]
pub struct RecipeSet {
    recipes: Vec<Recipe>,
    by_id: HashMap<String, usize>,
}

impl RecipeSet {
    pub fn new(recipes: Vec<Recipe>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(recipes.len());
        let mut dupes = Vec::new();
        let mut seen_dupe = HashSet::new();
        for (i, r) in recipes.iter().enumerate() {
            if by_id.insert(r.id.clone(), i).is_some() && seen_dupe.insert(r.id.clone()) {
                dupes.push(r.id.clone());
            }
        }
        if !dupes.is_empty() {
            return Err(CorpusError::DuplicateIds { ids: dupes });
        }
        Ok(RecipeSet { recipes, by_id })
    }

    pub fn len(&self) -> usize {
        self.recipes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recipes.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Recipe> {
        self.by_id.get(id).map(|&i| &self.recipes[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Recipe> {
        self.recipes.iter()
    }

    pub fn as_slice(&self) -> &[Recipe] {
        &self.recipes
    }
}

#[derive(Deserialize)]
struct TextEntry {
    text: String,
}

#[derive(Deserialize)]
struct Recipe1mRecord {
    id: String,
    #[serde(default)]
    title: String,
    ingredients: Vec<TextEntry>,
    #[serde(default)]
    instructions: Option<Vec<TextEntry>>,
}

impl From<Recipe1mRecord> for Recipe {
    fn from(r: Recipe1mRecord) -> Self {
        Recipe {
            id: r.id,
            title: r.title,
            ingredient_groups: r.ingredients.into_iter().map(|t| vec![t.text]).collect(),
            instructions: r
                .instructions
                .map(|steps| steps.into_iter().map(|t| t.text).collect()),
        }
    }
}

#[derive(Deserialize)]
struct JsonlRecipeRecord {
    id: String,
    #[serde(default)]
    title: String,
    ingredients: Vec<Vec<String>>,
    #[serde(default)]
    instructions: Option<Vec<String>>,
}

/// Streams the elements of a top-level JSON array, validating each one.
struct RecipeArray<'a> {
    out: &'a mut Vec<Recipe>,
}

impl<'de> DeserializeSeed<'de> for RecipeArray<'_> {
    type Value = ();
    fn deserialize<D: Deserializer<'de>>(self, deserializer: D) -> Result<(), D::Error> {
        deserializer.deserialize_seq(self)
    }
}

impl<'de> Visitor<'de> for RecipeArray<'_> {
    type Value = ();

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a JSON array of recipe objects")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<(), A::Error> {
        let mut record = 0usize;
        loop {
            let next = seq
                .next_element::<Recipe1mRecord>()
                .map_err(|e| de::Error::custom(format!("record {record}: {e}")))?;
            let Some(raw) = next else { break };
            let recipe = Recipe::from(raw);
            recipe
                .validate()
                .map_err(|m| de::Error::custom(format!("record {record}: {m}")))?;
            self.out.push(recipe);
            record += 1;
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path).map(BufReader::new).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_recipes(path: &Path, format: RecipeFormat) -> Result<RecipeSet, CorpusError> {
    let recipes = match format {
        RecipeFormat::Recipe1mJson => load_recipe1m(path)?,
        RecipeFormat::Jsonl => load_recipe_jsonl(path)?,
    };
    let set = RecipeSet::new(recipes)?;
    log::info!("loaded {} recipes from {}", set.len(), path.display());
    Ok(set)
}

fn load_recipe1m(path: &Path) -> Result<Vec<Recipe>, CorpusError> {
    let mut reader = open(path)?;
    // An empty file is an empty corpus rather than a parse error.
    let first_non_ws = loop {
        let buf = reader.fill_buf().map_err(io_err(path))?;
        if buf.is_empty() {
            break None;
        }
        match buf.iter().position(|b| !b.is_ascii_whitespace()) {
            Some(_) => break Some(()),
            None => {
                let n = buf.len();
                reader.consume(n);
            }
        }
    };
    if first_non_ws.is_none() {
        return Ok(Vec::new());
    }

    let mut out = Vec::new();
    let mut de = serde_json::Deserializer::from_reader(reader.by_ref());
    RecipeArray { out: &mut out }
        .deserialize(&mut de)
        .and_then(|()| de.end())
        .map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    Ok(out)
}

fn load_recipe_jsonl(path: &Path) -> Result<Vec<Recipe>, CorpusError> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonlRecipeRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        let recipe = Recipe {
            id: raw.id,
            title: raw.title,
            ingredient_groups: raw.ingredients,
            instructions: raw.instructions,
        };
        recipe.validate().map_err(|message| CorpusError::InvalidRecord {
            path: path.to_path_buf(),
            record: idx + 1,
            message,
        })?;
        out.push(recipe);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "val" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::UnknownSplit(other.into())),
        }
    }
}

/// One (recipe, source → target) substitution. The canonical JSONL form
/// written by `ingest` always carries `recipe_id, title, source, target, split`;
/// recipe context travels along when known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionSample {
    pub recipe_id: String,
    pub title: Option<String>,
    pub source: String,
    pub target: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingredients: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions: Option<Vec<String>>,
}

impl SubstitutionSample {
    pub fn new(recipe_id: &str, source: &str, target: &str, split: Split) -> Self {
        SubstitutionSample {
            recipe_id: recipe_id.into(),
            title: None,
            source: source.into(),
            target: target.into(),
            split,
            ingredients: None,
            instructions: None,
        }
    }

    pub fn with_title(mut self, title: &str) -> Self {
        self.title = Some(title.into());
        self
    }

    /// Stable identifier joining prompts, predictions and preference rows.
    pub fn key(&self) -> String {
        format!("{}/{}/{}->{}", self.split, self.recipe_id, self.source, self.target)
    }
}

#[derive(Deserialize)]
struct SubstitutionRecord {
    id: String,
    #[serde(default)]
    ingredients: Option<Vec<Vec<String>>>,
    subs: (String, String),
}

#[derive(Debug, Clone, Default)]
pub struct SubstitutionLoad {
    pub samples: Vec<SubstitutionSample>,
    /// Lines whose source and target normalize to the same ingredient.
    pub skipped_identical: usize,
}

pub fn load_substitutions(
    path: &Path,
    split: Split,
    normalizer: &Normalizer,
) -> Result<SubstitutionLoad, CorpusError> {
    let reader = open(path)?;
    let mut load = SubstitutionLoad::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let raw: SubstitutionRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            column: e.column(),
            message: e.to_string(),
        })?;
        let invalid = |message: String| CorpusError::InvalidRecord {
            path: path.to_path_buf(),
            record: lineno,
            message,
        };
        if raw.id.trim().is_empty() {
            return Err(invalid("empty recipe id".into()));
        }
        let (source, target) = raw.subs;
        let src = normalizer.normalize(&source).map_err(|e| invalid(e.to_string()))?;
        let tgt = normalizer.normalize(&target).map_err(|e| invalid(e.to_string()))?;
        if src == tgt {
            log::warn!(
                "{}:{lineno}: skipping substitution {source:?} -> {target:?} (same ingredient)",
                path.display()
            );
            load.skipped_identical += 1;
            continue;
        }
        load.samples.push(SubstitutionSample {
            recipe_id: raw.id,
            title: None,
            source,
            target,
            split,
            ingredients: raw.ingredients,
            instructions: None,
        });
    }
    log::info!(
        "loaded {} {split} substitutions from {} ({} skipped)",
        load.samples.len(),
        path.display(),
        load.skipped_identical
    );
    Ok(load)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinOutcome {
    pub joined: Vec<SubstitutionSample>,
    pub orphans: Vec<SubstitutionSample>,
}

/// Attaches recipe titles (and any missing recipe context) by recipe id.
pub fn join_titles(samples: Vec<SubstitutionSample>, recipes: &RecipeSet) -> JoinOutcome {
    let mut outcome = JoinOutcome::default();
    for mut sample in samples {
        match recipes.get(&sample.recipe_id) {
            Some(recipe) => {
                sample.title = Some(recipe.title.clone());
                if sample.ingredients.is_none() {
                    sample.ingredients = Some(recipe.ingredient_groups.clone());
                }
                if sample.instructions.is_none() {
                    sample.instructions = recipe.instructions.clone();
                }
                outcome.joined.push(sample);
            }
            None => outcome.orphans.push(sample),
        }
    }
    outcome
}

/// Uniform draw of `n` items without replacement, keeping input order.
pub fn sample_subset<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<T>, CorpusError> {
    if n > items.len() {
        return Err(CorpusError::SubsetTooLarge {
            requested: n,
            available: items.len(),
        });
    }
    if n == items.len() {
        return Ok(items.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, items.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}
