//! Prompt patterns, recipe-context variants and chat markers.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::corpus::SubstitutionSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPattern {
    Persona,
    Template,
    ContextManager,
}

impl PromptPattern {
    pub const ALL: [PromptPattern; 3] = [
        PromptPattern::Persona,
        PromptPattern::Template,
        PromptPattern::ContextManager,
    ];

    /// Catalogue text for the pattern.
    pub fn text(self) -> &'static str {
        match self {
            PromptPattern::Persona => "As a master chef, your culinary prowess knows no bounds.",
            PromptPattern::Template => {
                "Follow the instructions below and suggest the best substitute for the given ingredient."
            }
            PromptPattern::ContextManager => {
                "Your ability to flawlessly cook any dish is unparalleled. Even when faced with a missing ingredient, you effortlessly identify the perfect substitute"
            }
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            PromptPattern::Persona => {
                "Act as a specific persona and provide outputs that such a persona would."
            }
            PromptPattern::Template => {
                "To ensure an LLM\u{2019}s output follows a precise template in terms of structure."
            }
            PromptPattern::ContextManager => {
                "To focus the conversation on specific topics or exclude unrelated topics from consideration."
            }
        }
    }
}

impl FromStr for PromptPattern {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "persona" => Ok(PromptPattern::Persona),
            "template" => Ok(PromptPattern::Template),
            "context_manager" | "context-manager" => Ok(PromptPattern::ContextManager),
            other => Err(PromptError::UnknownName(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatternSet(BTreeSet<PromptPattern>);

impl PatternSet {
    pub fn all() -> Self {
        PatternSet(PromptPattern::ALL.into_iter().collect())
    }

    pub fn none() -> Self {
        PatternSet(BTreeSet::new())
    }

    pub fn contains(&self, p: PromptPattern) -> bool {
        self.0.contains(&p)
    }

    pub fn iter(&self) -> impl Iterator<Item = PromptPattern> + '_ {
        self.0.iter().copied()
    }
}

impl Default for PatternSet {
    fn default() -> Self {
        PatternSet::all()
    }
}

impl FromIterator<PromptPattern> for PatternSet {
    fn from_iter<I: IntoIterator<Item = PromptPattern>>(iter: I) -> Self {
        PatternSet(iter.into_iter().collect())
    }
}

/// Which recipe fields accompany the source ingredient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ContextVariant {
    SourceOnly,
    #[default]
    SourceTitle,
    SourceIngredients,
    SourceTitleIngredients,
    SourceTitleInstructions,
}

impl ContextVariant {
    pub const ALL: [ContextVariant; 5] = [
        ContextVariant::SourceOnly,
        ContextVariant::SourceTitle,
        ContextVariant::SourceIngredients,
        ContextVariant::SourceTitleIngredients,
        ContextVariant::SourceTitleInstructions,
    ];

    pub fn needs_title(self) -> bool {
        matches!(
            self,
            ContextVariant::SourceTitle
                | ContextVariant::SourceTitleIngredients
                | ContextVariant::SourceTitleInstructions
        )
    }

    pub fn needs_ingredients(self) -> bool {
        matches!(
            self,
            ContextVariant::SourceIngredients | ContextVariant::SourceTitleIngredients
        )
    }

    pub fn needs_instructions(self) -> bool {
        self == ContextVariant::SourceTitleInstructions
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContextVariant::SourceOnly => "source-only",
            ContextVariant::SourceTitle => "source-title",
            ContextVariant::SourceIngredients => "source-ingredients",
            ContextVariant::SourceTitleIngredients => "source-title-ingredients",
            ContextVariant::SourceTitleInstructions => "source-title-instructions",
        }
    }
}

impl fmt::Display for ContextVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextVariant {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ContextVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| PromptError::UnknownName(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TemplateStyle {
    #[default]
    InstSys,
    Plain,
}

/// Marker strings baked into prompt text. No tokenizer-level templating.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatTemplate {
    pub style: TemplateStyle,
    pub inst_open: String,
    pub inst_close: String,
    pub sys_open: String,
    pub sys_close: String,
    /// Appended after a completed answer in multi-turn text.
    pub answer_end: String,
    pub turn_separator: String,
}

impl Default for ChatTemplate {
    fn default() -> Self {
        ChatTemplate::inst_sys()
    }
}

impl ChatTemplate {
    pub fn inst_sys() -> Self {
        ChatTemplate {
            style: TemplateStyle::InstSys,
            inst_open: "[INST]".into(),
            inst_close: "[/INST]".into(),
            sys_open: "<<SYS>>".into(),
            sys_close: "<</SYS>>".into(),
            answer_end: "</s>".into(),
            turn_separator: "\n".into(),
        }
    }

    pub fn plain() -> Self {
        ChatTemplate {
            style: TemplateStyle::Plain,
            turn_separator: "\n\n".into(),
            answer_end: String::new(),
            ..ChatTemplate::inst_sys()
        }
    }

    /// Wraps a bare instruction (no system block) in the turn markers.
    pub fn wrap_instruction(&self, text: &str) -> String {
        match self.style {
            TemplateStyle::InstSys => format!("{} {} {}", self.inst_open, text, self.inst_close),
            TemplateStyle::Plain => text.to_string(),
        }
    }
}

/// Prompt wording family. `Figure` is the best-performing prompt and the
/// default everywhere; `Extended` is the longer wording seen in the
/// preference-data sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Wording {
    #[default]
    Figure,
    Extended,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PromptConfig {
    pub variant: ContextVariant,
    pub patterns: PatternSet,
    pub template: ChatTemplate,
    pub wording: Wording,
}

// Context-manager sentence exactly as printed in the best-performing prompt,
// including the missing space after "unparalleled.".
const FIGURE_CONTEXT_MANAGER: &str = "Your ability to flawlessly cook any dish is unparalleled.Even when faced with a missing ingredient, you effortlessly identify the perfect substitute.";
const FIGURE_INSTRUCTIONS: [&str; 5] = [
    "Do not provide the same ingredient as above as the substitutes.",
    "Give only one ingredient.",
    "Avoid giving explanations.",
    "Only provide the name of the ingredient.",
    "Give the output as a numbered point.",
];

const EXTENDED_CONTEXT_MANAGER: &str = "Your ability to flawlessly cook any dish is unparalleled. Even when faced with a missing ingredient, you effortlessly identify the perfect substitute, maintaining the dish's flavor integrity.";
const EXTENDED_TEMPLATE: &str = "Follow the instructions below and suggest the best substitute for the given ingredient according to the given dish.";
const EXTENDED_INSTRUCTIONS: [&str; 5] = [
    "Do not provide the same ingredient as above as a substitute.",
    "Provide only one substitute.",
    "Avoid giving explanations.",
    "Give the output as a bulletpoint.",
    "Substitutes should not change the flavour or texture of the dish.",
];

fn bullet_block(items: &[&str]) -> String {
    let mut out = String::from("Instructions:\n");
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str("- ");
        out.push_str(item);
    }
    out
}

/// First alias of every group, comma-joined.
pub fn ingredient_list(groups: &[Vec<String>]) -> String {
    groups
        .iter()
        .filter_map(|g| g.first())
        .map(|s| s.trim())
        .collect::<Vec<_>>()
        .join(", ")
}

fn context_lines(sample: &SubstitutionSample, variant: ContextVariant) -> Result<String, PromptError> {
    let missing = |field: &'static str| PromptError::MissingField {
        sample: sample.key(),
        field,
    };
    let mut lines = Vec::new();
    if variant.needs_title() {
        let title = sample
            .title
            .as_deref()
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| missing("title"))?;
        lines.push(format!("Dish: {title}"));
    }
    if variant.needs_ingredients() {
        let groups = sample
            .ingredients
            .as_deref()
            .filter(|g| !g.is_empty())
            .ok_or_else(|| missing("ingredients"))?;
        lines.push(format!("Recipe Ingredients: {}", ingredient_list(groups)));
    }
    if variant.needs_instructions() {
        let steps = sample
            .instructions
            .as_deref()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| missing("instructions"))?;
        let joined = steps.iter().map(|s| s.trim()).collect::<Vec<_>>().join(" ");
        lines.push(format!("Cooking Instructions: {joined}"));
    }
    lines.push(format!("Ingredient: {}", sample.source));
    Ok(lines.join("\n"))
}

pub fn render_prompt(sample: &SubstitutionSample, config: &PromptConfig) -> Result<String, PromptError> {
    let context = context_lines(sample, config.variant)?;
    Ok(match config.wording {
        Wording::Figure => render_figure(&context, config),
        Wording::Extended => render_extended(&context, config),
    })
}

fn render_figure(context: &str, config: &PromptConfig) -> String {
    let tpl = &config.template;
    let patterns = &config.patterns;
    let mut system = Vec::new();
    if patterns.contains(PromptPattern::Persona) {
        system.push(PromptPattern::Persona.text());
    }
    if patterns.contains(PromptPattern::ContextManager) {
        system.push(FIGURE_CONTEXT_MANAGER);
    }

    let mut sections = Vec::new();
    if patterns.contains(PromptPattern::Template) {
        sections.push(PromptPattern::Template.text().to_string());
        sections.push(bullet_block(&FIGURE_INSTRUCTIONS));
    }
    sections.push(context.to_string());
    let body = sections.join("\n\n");

    match tpl.style {
        TemplateStyle::InstSys => {
            let mut out = format!("{} ", tpl.inst_open);
            if !system.is_empty() {
                out.push_str(&format!("{}{} {}\n\n", tpl.sys_open, system.join(" "), tpl.sys_close));
            }
            out.push_str(&body);
            out.push_str("\n\n");
            out.push_str(&tpl.inst_close);
            out
        }
        TemplateStyle::Plain => {
            if system.is_empty() {
                body
            } else {
                format!("{}\n\n{}", system.join(" "), body)
            }
        }
    }
}

fn render_extended(context: &str, config: &PromptConfig) -> String {
    let patterns = &config.patterns;
    let mut lead = Vec::new();
    if patterns.contains(PromptPattern::Persona) {
        lead.push(PromptPattern::Persona.text());
    }
    if patterns.contains(PromptPattern::ContextManager) {
        lead.push(EXTENDED_CONTEXT_MANAGER);
    }
    if patterns.contains(PromptPattern::Template) {
        lead.push(EXTENDED_TEMPLATE);
    }
    let mut body = String::new();
    if !lead.is_empty() {
        body.push_str(&lead.join(" "));
        body.push('\n');
    }
    if patterns.contains(PromptPattern::Template) {
        body.push_str(&bullet_block(&EXTENDED_INSTRUCTIONS));
        body.push_str("\n\n");
    }
    body.push_str(context);

    let tpl = &config.template;
    match tpl.style {
        TemplateStyle::InstSys => format!("{} {}\n{}", tpl.inst_open, body, tpl.inst_close),
        TemplateStyle::Plain => body,
    }
}

/// Answer text in the numbered-point format the instructions ask for.
pub fn numbered_answer(ingredient: &str) -> String {
    format!("1. {ingredient}")
}

/// Prepends completed exemplar exchanges to the query prompt. With no
/// exemplars this is exactly [`render_prompt`].
pub fn render_few_shot(
    sample: &SubstitutionSample,
    exemplars: &[SubstitutionSample],
    config: &PromptConfig,
) -> Result<String, PromptError> {
    let tpl = &config.template;
    let mut out = String::new();
    for exemplar in exemplars {
        if exemplar.key() == sample.key() {
            return Err(PromptError::ExemplarIsQuery(sample.key()));
        }
        if exemplar.target.trim().is_empty() {
            return Err(PromptError::EmptyCompletion(exemplar.key()));
        }
        out.push_str(&render_prompt(exemplar, config)?);
        match tpl.style {
            TemplateStyle::InstSys => out.push(' '),
            TemplateStyle::Plain => out.push('\n'),
        }
        out.push_str(&numbered_answer(exemplar.target.trim()));
        out.push_str(&tpl.answer_end);
        out.push_str(&tpl.turn_separator);
    }
    out.push_str(&render_prompt(sample, config)?);
    Ok(out)
}

pub fn render_one_shot(
    sample: &SubstitutionSample,
    exemplar: &SubstitutionSample,
    config: &PromptConfig,
) -> Result<String, PromptError> {
    render_few_shot(sample, std::slice::from_ref(exemplar), config)
}

/// Prompt asking the model to pick a substitute from retrieved candidates.
pub fn render_selection_prompt(
    source: &str,
    title: Option<&str>,
    candidates: &[String],
    template: &ChatTemplate,
) -> String {
    let mut body = String::from(
        "Choose the best substitute for the given ingredient from the candidate list below.\n\nCandidates:\n",
    );
    for (i, c) in candidates.iter().enumerate() {
        body.push_str(&format!("{}. {}\n", i + 1, c));
    }
    body.push_str(
        "\nInstructions:\n- Choose only one ingredient from the candidates.\n- Avoid giving explanations.\n- Give the output as a numbered point.\n\n",
    );
    if let Some(title) = title.map(str::trim).filter(|t| !t.is_empty()) {
        body.push_str(&format!("Dish: {title}\n"));
    }
    body.push_str(&format!("Ingredient: {source}"));
    let system = format!("{} {}", PromptPattern::Persona.text(), FIGURE_CONTEXT_MANAGER);
    match template.style {
        TemplateStyle::InstSys => format!(
            "{} {}{} {}\n\n{}\n\n{}",
            template.inst_open, template.sys_open, system, template.sys_close, body, template.inst_close
        ),
        TemplateStyle::Plain => format!("{system}\n\n{body}"),
    }
}
