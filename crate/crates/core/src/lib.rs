//! Ingredient-substitution benchmarking toolkit: corpus loading, vocabulary
//! normalization, prompt and dataset forging, an OpenAI-compatible client,
//! answer parsing, retrieval baselines and Hit@k scoring.

pub mod answerparse;
pub mod corpus;
pub mod evald;
pub mod jsonl;
pub mod llmclient;
pub mod promptforge;
pub mod retrieval;
pub mod vocab;
