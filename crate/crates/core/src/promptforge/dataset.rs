use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::template::{render_prompt, ContextVariant, PatternSet, PromptConfig};
use super::PromptError;
use crate::corpus::{sample_subset, Recipe, SubstitutionSample};
use crate::evald::PredictionRecord;
use crate::jsonl;
use crate::promptforge::template::ingredient_list;
use crate::vocab::IngredientVocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTag {
    Subst,
    RecipeQa,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub sample_key: String,
    pub task: TaskTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<ContextVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patterns: Option<PatternSet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt: String,
    pub completion: String,
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceMeta {
    pub sample_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTriplet {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub meta: PreferenceMeta,
}

/// One substitution record per sample, completion = gold target, input order.
pub fn build_sft(
    samples: &[SubstitutionSample],
    config: &PromptConfig,
) -> Result<Vec<PromptRecord>, PromptError> {
    samples
        .iter()
        .map(|sample| {
            let completion = sample.target.trim();
            if completion.is_empty() {
                return Err(PromptError::EmptyCompletion(sample.key()));
            }
            Ok(PromptRecord {
                prompt: render_prompt(sample, config)?,
                completion: completion.to_string(),
                meta: RecordMeta {
                    sample_key: sample.key(),
                    task: TaskTag::Subst,
                    variant: Some(config.variant),
                    patterns: Some(config.patterns.clone()),
                },
            })
        })
        .collect()
}

pub fn build_sft_dataset(
    samples: &[SubstitutionSample],
    config: &PromptConfig,
    out: &Path,
) -> Result<usize, PromptError> {
    let records = build_sft(samples, config)?;
    Ok(jsonl::write_jsonl(out, &records)?)
}

/// Question and answer for one recipe, or `None` when the recipe has no title.
pub fn recipe_qa_pair(recipe: &Recipe) -> Option<(String, String)> {
    let title = recipe.title.trim();
    if title.is_empty() {
        return None;
    }
    let question = format!("What are the ingredients we need to make {title}?");
    let answer = format!(
        "To make {title} you need {}.",
        ingredient_list(&recipe.ingredient_groups)
    );
    Some((question, answer))
}

#[derive(Debug, Clone, Default)]
pub struct QaBuild {
    pub records: Vec<PromptRecord>,
    pub skipped_untitled: usize,
}

pub fn build_recipe_qa(recipes: &[Recipe], config: &PromptConfig) -> QaBuild {
    let mut build = QaBuild::default();
    for recipe in recipes {
        let Some((question, answer)) = recipe_qa_pair(recipe) else {
            log::warn!("recipe {} has no title; skipped", recipe.id);
            build.skipped_untitled += 1;
            continue;
        };
        build.records.push(PromptRecord {
            prompt: config.template.wrap_instruction(&question),
            completion: answer,
            meta: RecordMeta {
                sample_key: recipe.id.clone(),
                task: TaskTag::RecipeQa,
                variant: None,
                patterns: None,
            },
        });
    }
    build
}

pub fn build_recipe_qa_dataset(
    recipes: &[Recipe],
    config: &PromptConfig,
    out: &Path,
) -> Result<(usize, QaBuild), PromptError> {
    let build = build_recipe_qa(recipes, config);
    let n = jsonl::write_jsonl(out, &build.records)?;
    Ok((n, build))
}

/// Substitution-to-QA mixing proportion, written `subst:qa`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixRatio {
    pub subst: u32,
    pub qa: u32,
}

impl Default for MixRatio {
    fn default() -> Self {
        MixRatio { subst: 1, qa: 1 }
    }
}

impl fmt::Display for MixRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.subst, self.qa)
    }
}

impl FromStr for MixRatio {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PromptError::UnknownName(s.to_string());
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        Ok(MixRatio {
            subst: a.trim().parse().map_err(|_| bad())?,
            qa: b.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// Draws the largest mixture with exactly the requested proportion, then
/// shuffles it. Each side is downsampled with an order-preserving seeded draw.
pub fn build_multitask(
    subst: &[PromptRecord],
    qa: &[PromptRecord],
    ratio: MixRatio,
    seed: u64,
) -> Result<Vec<PromptRecord>, PromptError> {
    if ratio.subst == 0 || ratio.qa == 0 {
        return Err(PromptError::ZeroRatio {
            subst: ratio.subst,
            qa: ratio.qa,
        });
    }
    if subst.is_empty() || qa.is_empty() {
        return Err(PromptError::EmptyMixInput);
    }
    let units = (subst.len() / ratio.subst as usize).min(qa.len() / ratio.qa as usize);
    let n_subst = units * ratio.subst as usize;
    let n_qa = units * ratio.qa as usize;

    let mut mixed = sample_subset(subst, n_subst, seed)?;
    mixed.extend(sample_subset(qa, n_qa, seed.wrapping_add(1))?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mixed.shuffle(&mut rng);
    Ok(mixed)
}

pub fn build_multitask_dataset(
    subst: &[PromptRecord],
    qa: &[PromptRecord],
    ratio: MixRatio,
    seed: u64,
    out: &Path,
) -> Result<usize, PromptError> {
    let mixed = build_multitask(subst, qa, ratio, seed)?;
    Ok(jsonl::write_jsonl(out, &mixed)?)
}

#[derive(Debug, Clone, Default)]
pub struct DpoBuild {
    pub triplets: Vec<PreferenceTriplet>,
    /// Top prediction already matched the gold answer.
    pub excluded_correct: usize,
    /// No parsed prediction to use as the rejected answer.
    pub skipped_no_prediction: usize,
    /// Eligible triplets dropped by the cap.
    pub truncated: usize,
}

/// Mines preference triplets from evaluation misses: chosen is the gold
/// target, rejected the model's top-ranked wrong answer.
pub fn build_dpo(
    predictions: &[PredictionRecord],
    vocab: &IngredientVocab,
    cap: usize,
) -> Result<DpoBuild, PromptError> {
    let mut build = DpoBuild::default();
    for record in predictions {
        let Some(top) = record.ranked.first() else {
            build.skipped_no_prediction += 1;
            continue;
        };
        if vocab.matches(top, &record.gold) {
            build.excluded_correct += 1;
            continue;
        }
        let prompt = record
            .prompt
            .clone()
            .ok_or_else(|| PromptError::MissingPrompt(record.sample_key.clone()))?;
        if build.triplets.len() == cap {
            build.truncated += 1;
            continue;
        }
        build.triplets.push(PreferenceTriplet {
            prompt,
            chosen: record.gold.clone(),
            rejected: top.clone(),
            meta: PreferenceMeta {
                sample_key: record.sample_key.clone(),
            },
        });
    }
    Ok(build)
}

pub fn build_dpo_dataset(
    predictions: &[PredictionRecord],
    vocab: &IngredientVocab,
    cap: usize,
    out: &Path,
) -> Result<(usize, DpoBuild), PromptError> {
    let build = build_dpo(predictions, vocab, cap)?;
    let n = jsonl::write_jsonl(out, &build.triplets)?;
    Ok((n, build))
}
