//! Prompt rendering and the four training-dataset flavours: substitution
//! SFT, recipe QA, multi-task mixtures and preference triplets.

mod dataset;
mod template;

pub use dataset::{
    build_dpo, build_dpo_dataset, build_multitask, build_multitask_dataset, build_recipe_qa,
    build_recipe_qa_dataset, build_sft, build_sft_dataset, recipe_qa_pair, DpoBuild, MixRatio,
    PreferenceMeta, PreferenceTriplet, PromptRecord, QaBuild, RecordMeta, TaskTag,
};
pub use template::{
    ingredient_list, numbered_answer, render_few_shot, render_one_shot, render_prompt,
    render_selection_prompt, ChatTemplate, ContextVariant, PatternSet, PromptConfig,
    PromptPattern, TemplateStyle, Wording,
};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("sample {sample} has no {field} for the chosen context variant")]
    MissingField { sample: String, field: &'static str },
    #[error("one-shot exemplar {0} is the query sample itself")]
    ExemplarIsQuery(String),
    #[error("record {0} has an empty completion")]
    EmptyCompletion(String),
    #[error("unknown name {0:?}")]
    UnknownName(String),
    #[error("mixing ratio {subst}:{qa} has a zero component")]
    ZeroRatio { subst: u32, qa: u32 },
    #[error("multi-task mixing needs both substitution and QA records")]
    EmptyMixInput,
    #[error("prediction record {0} carries no prompt")]
    MissingPrompt(String),
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}
