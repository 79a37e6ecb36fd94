//! Vocabulary retrieval baseline: exhaustive similarity search over
//! ingredient embeddings, optional category re-ranking and an LLM pass that
//! picks one of the retrieved candidates.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::answerparse::parse_predictions;
use crate::corpus::SubstitutionSample;
use crate::jsonl::{self, JsonlError};
use crate::llmclient::{ClientError, EmbeddingClient, GenerationParams, LlmClient};
use crate::promptforge::{render_selection_prompt, ChatTemplate};
use crate::vocab::IngredientVocab;

/// Tolerance on the unit norm of ingested vectors.
pub const NORM_TOLERANCE: f64 = 1e-6;
pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_EMBEDDING_MODEL: &str = "multi-qa-mpnet-base-cos-v1";

/// Margin denominators smaller than this fall back to the raw cosine.
const MARGIN_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("vector for {ingredient:?} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        ingredient: String,
        expected: usize,
        found: usize,
    },
    #[error("no vector for vocabulary ingredient {0:?}")]
    MissingIngredient(String),
    #[error("vector for {0:?} has zero norm")]
    ZeroVector(String),
    #[error("{0:?} is not in the vector store")]
    UnknownSource(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("vector store is empty")]
    EmptyStore,
    #[error("margin neighbourhood size must be at least 1")]
    InvalidNeighbourhood,
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn raw(values: Vec<f64>) -> Self {
        EmbeddingVector {
            values,
            normalized: false,
        }
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn into_normalized(self) -> Option<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        Some(EmbeddingVector {
            values: self.values.into_iter().map(|v| v / n).collect(),
            normalized: true,
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimilarityMetric {
    Cosine,
    Bm25,
    /// Cosine divided by the mean top-`k` neighbour similarity of both ends.
    MarginCosine { k: usize },
}

impl std::str::FromStr for SimilarityMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(SimilarityMetric::Cosine),
            "bm25" => Ok(SimilarityMetric::Bm25),
            other => match other.strip_prefix("margin") {
                Some(rest) => {
                    let k = rest.trim_start_matches([':', '-', '=']);
                    let k = if k.is_empty() { Ok(4) } else { k.parse() };
                    k.map(|k| SimilarityMetric::MarginCosine { k })
                        .map_err(|_| format!("bad margin neighbourhood in {s:?}"))
                }
                None => Err(format!("unknown metric {s:?} (cosine, bm25, margin[:k])")),
            },
        }
    }
}

/// Canonical ingredient names with unit-norm vectors, sorted by name.
#[derive(Debug, Clone)]
pub struct VectorStore {
    names: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    positions: HashMap<String, usize>,
    dim: usize,
}

impl VectorStore {
    /// Normalizes every vector on ingest; all must share one dimension.
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self, RetrievalError> {
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        entries.dedup_by(|a, b| a.0 == b.0);
        let dim = entries.first().map(|(_, v)| v.len()).unwrap_or(0);
        let mut names = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        for (name, values) in entries {
            if values.len() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    ingredient: name,
                    expected: dim,
                    found: values.len(),
                });
            }
            let v = EmbeddingVector::raw(values)
                .into_normalized()
                .ok_or_else(|| RetrievalError::ZeroVector(name.clone()))?;
            names.push(name);
            vectors.push(v);
        }
        let positions = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        Ok(VectorStore {
            names,
            vectors,
            positions,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vector(&self, name: &str) -> Option<&EmbeddingVector> {
        self.positions.get(name).map(|&i| &self.vectors[i])
    }
}

#[derive(Debug, Deserialize, Serialize)]
pub struct VectorRow {
    pub ingredient: String,
    pub vector: Vec<f64>,
}

/// Builds a store from a precomputed `{ingredient, vector}` JSONL file.
/// Rows are matched to vocabulary canonicals through the alias index; rows
/// for names outside the vocabulary are ignored.
pub fn embed_vocab_from_file(
    vocab: &IngredientVocab,
    path: &Path,
) -> Result<VectorStore, RetrievalError> {
    let rows: Vec<VectorRow> = jsonl::read_jsonl(path)?;
    let mut by_canonical: HashMap<String, Vec<f64>> = HashMap::new();
    let mut ignored = 0usize;
    for row in rows {
        match vocab.resolve(&row.ingredient) {
            Some(c) if vocab.get(&c).is_some() => {
                by_canonical.entry(c).or_insert(row.vector);
            }
            _ => ignored += 1,
        }
    }
    if ignored > 0 {
        log::warn!("{ignored} vector rows do not name a vocabulary ingredient");
    }
    let mut entries = Vec::with_capacity(vocab.len());
    for entry in vocab.entries() {
        let v = by_canonical
            .remove(&entry.canonical)
            .ok_or_else(|| RetrievalError::MissingIngredient(entry.canonical.clone()))?;
        entries.push((entry.canonical.clone(), v));
    }
    VectorStore::new(entries)
}

/// Embeds every canonical through an embeddings endpoint, `batch` names per request.
pub fn embed_vocab_with(
    vocab: &IngredientVocab,
    client: &EmbeddingClient,
    batch: usize,
) -> Result<VectorStore, RetrievalError> {
    let names: Vec<String> = vocab.entries().iter().map(|e| e.canonical.clone()).collect();
    let mut entries = Vec::with_capacity(names.len());
    for chunk in names.chunks(batch.max(1)) {
        let vectors = client.embed(chunk)?;
        entries.extend(chunk.iter().cloned().zip(vectors));
    }
    VectorStore::new(entries)
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Okapi BM25 over the word tokens of ingredient names; each name is a document.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    terms: Vec<HashMap<String, usize>>,
    lengths: Vec<usize>,
    df: HashMap<String, usize>,
    avgdl: f64,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub fn new<S: AsRef<str>>(docs: &[S]) -> Self {
        let mut terms = Vec::with_capacity(docs.len());
        let mut lengths = Vec::with_capacity(docs.len());
        let mut df: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            let tokens = tokenize(doc.as_ref());
            lengths.push(tokens.len());
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for t in tf.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            terms.push(tf);
        }
        let total: usize = lengths.iter().sum();
        let avgdl = if docs.is_empty() {
            0.0
        } else {
            total as f64 / docs.len() as f64
        };
        Bm25Index {
            terms,
            lengths,
            df,
            avgdl,
            k1: BM25_K1,
            b: BM25_B,
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.terms.len() as f64;
        let df = *self.df.get(term).unwrap_or(&0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn score(&self, query: &[String], doc: usize) -> f64 {
        let tf_map = &self.terms[doc];
        let norm = if self.avgdl > 0.0 {
            1.0 - self.b + self.b * self.lengths[doc] as f64 / self.avgdl
        } else {
            1.0
        };
        query
            .iter()
            .map(|t| {
                let tf = *tf_map.get(t).unwrap_or(&0) as f64;
                if tf == 0.0 {
                    0.0
                } else {
                    self.idf(t) * tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Ranked<'a> {
    score: f64,
    name: &'a str,
}

impl Ord for Ranked<'_> {
    /// Greater is better: higher score, then lexicographically smaller name.
    fn cmp(&self, other: &Self) -> Ordering {
        let by_score = if self.score == other.score {
            Ordering::Equal
        } else {
            self.score.total_cmp(&other.score)
        };
        by_score.then_with(|| other.name.cmp(self.name))
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

fn select_top<'a>(scored: impl Iterator<Item = Ranked<'a>>, k: usize) -> Vec<(String, f64)> {
    let mut heap: BinaryHeap<Reverse<Ranked<'a>>> = BinaryHeap::with_capacity(k + 1);
    for r in scored {
        heap.push(Reverse(r));
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut best: Vec<Ranked<'a>> = heap.into_iter().map(|Reverse(r)| r).collect();
    best.sort_by(|a, b| b.cmp(a));
    best.into_iter().map(|r| (r.name.to_string(), r.score)).collect()
}

pub struct Retriever {
    store: VectorStore,
    bm25: Bm25Index,
    margins: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
}

impl Retriever {
    pub fn new(store: VectorStore) -> Self {
        let bm25 = Bm25Index::new(store.names());
        Retriever {
            store,
            bm25,
            margins: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &VectorStore {
        &self.store
    }

    /// Mean similarity of every stored vector to its `k` nearest neighbours
    /// (itself excluded; fewer when the store is smaller).
    pub fn neighbourhood_means(&self, k: usize) -> Arc<Vec<f64>> {
        if let Some(m) = self.margins.lock().expect("margin cache").get(&k) {
            return m.clone();
        }
        let vs = &self.store.vectors;
        let means: Vec<f64> = (0..vs.len())
            .map(|i| {
                let mut sims: Vec<f64> = (0..vs.len())
                    .filter(|&j| j != i)
                    .map(|j| dot(&vs[i].values, &vs[j].values))
                    .collect();
                sims.sort_by(|a, b| b.total_cmp(a));
                let take = k.min(sims.len());
                if take == 0 {
                    0.0
                } else {
                    sims[..take].iter().sum::<f64>() / take as f64
                }
            })
            .collect();
        let means = Arc::new(means);
        self.margins
            .lock()
            .expect("margin cache")
            .insert(k, means.clone());
        means
    }

    /// Top-`k` neighbours of a canonical `source`, never including `source`.
    /// Ties are broken by ascending name.
    pub fn topk(
        &self,
        source: &str,
        k: usize,
        metric: SimilarityMetric,
    ) -> Result<Vec<(String, f64)>, RetrievalError> {
        if k < 1 {
            return Err(RetrievalError::InvalidK);
        }
        if self.store.is_empty() {
            return Err(RetrievalError::EmptyStore);
        }
        let names = &self.store.names;
        let others = || (0..names.len()).filter(move |&j| names[j] != source);
        let ranked = match metric {
            SimilarityMetric::Bm25 => {
                let query = tokenize(source);
                select_top(
                    others().map(|j| Ranked {
                        score: self.bm25.score(&query, j),
                        name: &names[j],
                    }),
                    k,
                )
            }
            SimilarityMetric::Cosine => {
                let q = self
                    .store
                    .vector(source)
                    .ok_or_else(|| RetrievalError::UnknownSource(source.into()))?;
                select_top(
                    others().map(|j| Ranked {
                        score: dot(&q.values, &self.store.vectors[j].values),
                        name: &names[j],
                    }),
                    k,
                )
            }
            SimilarityMetric::MarginCosine { k: hood } => {
                if hood < 1 {
                    return Err(RetrievalError::InvalidNeighbourhood);
                }
                let &qi = self
                    .store
                    .positions
                    .get(source)
                    .ok_or_else(|| RetrievalError::UnknownSource(source.into()))?;
                let means = self.neighbourhood_means(hood);
                let q = &self.store.vectors[qi].values;
                select_top(
                    others().map(|j| {
                        let cos = dot(q, &self.store.vectors[j].values);
                        let denom = (means[qi] + means[j]) / 2.0;
                        let score = if denom.abs() < MARGIN_EPS { cos } else { cos / denom };
                        Ranked {
                            score,
                            name: &names[j],
                        }
                    }),
                    k,
                )
            }
        };
        Ok(ranked)
    }

    /// Cosine neighbours of an arbitrary (already embedded) query vector.
    pub fn topk_vector(
        &self,
        query: &[f64],
        k: usize,
        exclude: Option<&str>,
    ) -> Result<Vec<(String, f64)>, RetrievalError> {
        if k < 1 {
            return Err(RetrievalError::InvalidK);
        }
        if self.store.is_empty() {
            return Err(RetrievalError::EmptyStore);
        }
        if query.len() != self.store.dim {
            return Err(RetrievalError::DimensionMismatch {
                ingredient: exclude.unwrap_or("<query>").into(),
                expected: self.store.dim,
                found: query.len(),
            });
        }
        let q = EmbeddingVector::raw(query.to_vec())
            .into_normalized()
            .ok_or_else(|| RetrievalError::ZeroVector(exclude.unwrap_or("<query>").into()))?;
        let names = &self.store.names;
        Ok(select_top(
            (0..names.len())
                .filter(|&j| Some(names[j].as_str()) != exclude)
                .map(|j| Ranked {
                    score: dot(&q.values, &self.store.vectors[j].values),
                    name: &names[j],
                }),
            k,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    #[default]
    None,
    Category,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryRow {
    pub ingredient: String,
    pub category: String,
}

/// Ingredient → category, keyed by canonical name.
#[derive(Debug, Clone, Default)]
pub struct CategoryMap(HashMap<String, String>);

impl CategoryMap {
    pub fn from_rows(rows: Vec<CategoryRow>, vocab: &IngredientVocab) -> Self {
        CategoryMap(
            rows.into_iter()
                .filter_map(|r| vocab.resolve(&r.ingredient).map(|c| (c, r.category)))
                .collect(),
        )
    }

    pub fn load(path: &Path, vocab: &IngredientVocab) -> Result<Self, RetrievalError> {
        Ok(CategoryMap::from_rows(jsonl::read_jsonl(path)?, vocab))
    }

    pub fn get(&self, canonical: &str) -> Option<&str> {
        self.0.get(canonical).map(String::as_str)
    }
}

impl FromIterator<(String, String)> for CategoryMap {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        CategoryMap(iter.into_iter().collect())
    }
}

/// Category mode moves candidates sharing the source's category to the
/// front, keeping relative order inside both groups.
pub fn rerank(
    candidates: Vec<(String, f64)>,
    source: &str,
    categories: &CategoryMap,
    mode: RerankMode,
) -> Vec<(String, f64)> {
    let RerankMode::Category = mode else {
        return candidates;
    };
    let Some(wanted) = categories.get(source) else {
        return candidates;
    };
    let (mut same, other): (Vec<_>, Vec<_>) = candidates
        .into_iter()
        .partition(|(name, _)| categories.get(name) == Some(wanted));
    same.extend(other);
    same
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline2Prediction {
    pub ranked: Vec<String>,
    pub candidates: Vec<String>,
    pub prompt: String,
    pub raw: String,
    pub latency_ms: u64,
}

/// Retrieval + LLM selection. The LLM's picks that are candidates come
/// first, then the other candidates in similarity order, then any
/// off-list answers.
pub struct Baseline2<'a> {
    pub retriever: &'a Retriever,
    pub vocab: &'a IngredientVocab,
    pub metric: SimilarityMetric,
    pub k: usize,
    pub rerank: RerankMode,
    pub categories: &'a CategoryMap,
    pub template: &'a ChatTemplate,
    pub params: GenerationParams,
}

impl Baseline2<'_> {
    pub fn candidates(&self, sample: &SubstitutionSample) -> Result<Vec<String>, RetrievalError> {
        let source = self
            .vocab
            .resolve(&sample.source)
            .ok_or_else(|| RetrievalError::UnknownSource(sample.source.clone()))?;
        let hits = self.retriever.topk(&source, self.k, self.metric)?;
        Ok(rerank(hits, &source, self.categories, self.rerank)
            .into_iter()
            .map(|(n, _)| n)
            .collect())
    }

    pub fn prompt(&self, sample: &SubstitutionSample, candidates: &[String]) -> String {
        render_selection_prompt(&sample.source, sample.title.as_deref(), candidates, self.template)
    }

    /// Orders candidates given the raw LLM answer.
    pub fn constrain(&self, candidates: &[String], answer: &str) -> Vec<String> {
        let parsed = parse_predictions(answer, self.vocab.normalizer());
        let mut picked: Vec<String> = Vec::new();
        let mut off_list: Vec<String> = Vec::new();
        for item in &parsed.ranked {
            match candidates.iter().find(|c| self.vocab.matches(c, item)) {
                Some(c) if !picked.contains(c) => picked.push(c.clone()),
                Some(_) => {}
                None if !off_list.contains(item) => off_list.push(item.clone()),
                None => {}
            }
        }
        let mut ranked = picked;
        for c in candidates {
            if !ranked.contains(c) {
                ranked.push(c.clone());
            }
        }
        ranked.extend(off_list);
        ranked
    }

    pub fn predict(
        &self,
        sample: &SubstitutionSample,
        client: &LlmClient,
    ) -> Result<Baseline2Prediction, RetrievalError> {
        let candidates = self.candidates(sample)?;
        let prompt = self.prompt(sample, &candidates);
        let completion = client.complete(&prompt, &self.params)?;
        Ok(Baseline2Prediction {
            ranked: self.constrain(&candidates, &completion.text),
            candidates,
            prompt,
            raw: completion.text,
            latency_ms: completion.latency_ms,
        })
    }
}
