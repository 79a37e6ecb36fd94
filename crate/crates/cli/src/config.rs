//! Layered experiment configuration: defaults < file < `SUBSBENCH_*` env < flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use subsbench::corpus::{RecipeFormat, Split};
use subsbench::llmclient::{ClientConfig, GenerationParams};
use subsbench::promptforge::{MixRatio, PromptConfig};
use subsbench::retrieval::{RerankMode, DEFAULT_EMBEDDING_MODEL};
use subsbench::vocab::MergeRules;

pub const ENV_PREFIX: &str = "SUBSBENCH_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusPaths {
    pub recipes: Option<PathBuf>,
    pub recipe_format: RecipeFormat,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for CorpusPaths {
    fn default() -> Self {
        CorpusPaths {
            recipes: None,
            recipe_format: RecipeFormat::Jsonl,
            train: None,
            valid: None,
            test: None,
        }
    }
}

impl CorpusPaths {
    pub fn split(&self, split: Split) -> Option<&PathBuf> {
        match split {
            Split::Train => self.train.as_ref(),
            Split::Valid => self.valid.as_ref(),
            Split::Test => self.test.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabOptions {
    /// A saved vocabulary; built from the corpus when absent.
    pub path: Option<PathBuf>,
    pub merge: MergeRules,
    pub exceptions: Option<PathBuf>,
    pub spelling: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientSection {
    pub backend: Backend,
    /// `{prompt | contains, response}` JSONL for the mock backend.
    pub mock_responses: Option<PathBuf>,
    pub mock_fallback: Option<String>,
    #[serde(flatten)]
    pub http: ClientConfig,
}

impl Default for ClientSection {
    fn default() -> Self {
        ClientSection {
            backend: Backend::Http,
            mock_responses: None,
            mock_fallback: None,
            http: ClientConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeOptions {
    pub split: Split,
    /// Seeded subset size; the whole split when absent.
    pub n: Option<usize>,
    pub seed: u64,
    pub ratio: String,
    pub dpo_cap: usize,
}

impl Default for ForgeOptions {
    fn default() -> Self {
        ForgeOptions {
            split: Split::Train,
            n: None,
            seed: 42,
            ratio: MixRatio::default().to_string(),
            dpo_cap: 7500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub split: Split,
    pub ks: Vec<usize>,
    /// 0 for zero-shot, 1 for one-shot.
    pub shots: usize,
    /// Sample key of the one-shot exemplar; the first training sample otherwise.
    pub exemplar: Option<String>,
    pub limit: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            split: Split::Test,
            ks: vec![1],
            shots: 0,
            exemplar: None,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalOptions {
    /// Precomputed `{ingredient, vector}` JSONL.
    pub vectors: Option<PathBuf>,
    /// Embeddings endpoint used when no vector file is given.
    pub embedding_url: Option<String>,
    pub embedding_model: String,
    pub categories: Option<PathBuf>,
    pub metric: String,
    pub k: usize,
    pub rerank: RerankMode,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        RetrievalOptions {
            vectors: None,
            embedding_url: None,
            embedding_model: DEFAULT_EMBEDDING_MODEL.into(),
            categories: None,
            metric: "cosine".into(),
            k: 10,
            rerank: RerankMode::None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusPaths,
    pub vocab: VocabOptions,
    pub prompt: PromptConfig,
    pub client: ClientSection,
    pub params: GenerationParams,
    pub forge: ForgeOptions,
    pub eval: EvalOptions,
    pub retrieval: RetrievalOptions,
}

impl ExperimentConfig {
    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn mix_ratio(&self) -> Result<MixRatio> {
        self.forge
            .ratio
            .parse()
            .map_err(|_| anyhow::anyhow!("invalid mixing ratio {:?}; expected a:b", self.forge.ratio))
    }
}

pub fn read_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let value = match ext {
        "json" => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        "toml" => toml_value(&text, path)?,
        _ => match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(_) => toml_value(&text, path)?,
        },
    };
    if !value.is_object() {
        bail!("{}: config must be a table/object", path.display());
    }
    Ok(value)
}

fn toml_value(text: &str, path: &Path) -> Result<Value> {
    let table: toml::Table = toml::from_str(text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(serde_json::to_value(table)?)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `SUBSBENCH_EVAL__KS=[1,3]` sets `eval.ks`. Values parse as JSON when
/// they can, otherwise they are taken as strings.
pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Result<Value> {
    let mut out = Value::Object(Default::default());
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        if rest == "CONFIG" || rest == "LOG" {
            continue;
        }
        let path: Vec<String> = rest.split("__").map(|p| p.to_ascii_lowercase()).collect();
        if path.iter().any(String::is_empty) {
            bail!("malformed override variable {name}");
        }
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        let mut leaf = value;
        for key in path.iter().rev() {
            let mut obj = serde_json::Map::new();
            obj.insert(key.clone(), leaf);
            leaf = Value::Object(obj);
        }
        merge(&mut out, leaf);
    }
    Ok(out)
}

pub fn layered<I>(file: Option<&Path>, env: I) -> Result<ExperimentConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut value = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(path) = file {
        merge(&mut value, read_file(path)?);
    }
    merge(&mut value, env_overrides(env)?);
    let mut config: ExperimentConfig =
        serde_json::from_value(value).context("invalid configuration")?;
    if let Some(dir) = file.and_then(Path::parent) {
        config.resolve_relative(dir);
    }
    Ok(config)
}

impl ExperimentConfig {
    /// Paths in a config file are relative to that file.
    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.corpus.recipes);
        fix(&mut self.corpus.train);
        fix(&mut self.corpus.valid);
        fix(&mut self.corpus.test);
        fix(&mut self.vocab.path);
        fix(&mut self.vocab.exceptions);
        fix(&mut self.vocab.spelling);
        fix(&mut self.client.mock_responses);
        fix(&mut self.client.http.cache_dir);
        fix(&mut self.retrieval.vectors);
        fix(&mut self.retrieval.categories);
    }
}
