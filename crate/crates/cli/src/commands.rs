use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context as _, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use subsbench::corpus::{
    join_titles, load_recipes, load_substitutions, sample_subset, RecipeSet, Split, SubstitutionSample,
};
use subsbench::evald::{
    compare_reports, literature_values, run_experiment, score, EvalReport, ExperimentSpec, PredictionRecord,
};
use subsbench::jsonl::{read_jsonl, write_atomic, write_jsonl};
use subsbench::llmclient::{EmbeddingClient, LlmClient, MockTransport};
use subsbench::promptforge::{
    build_dpo_dataset, build_multitask_dataset, build_recipe_qa, build_recipe_qa_dataset, build_sft,
    build_sft_dataset,
};
use subsbench::retrieval::{
    embed_vocab_from_file, embed_vocab_with, rerank, Baseline2, CategoryMap, RerankMode, Retriever,
    SimilarityMetric, VectorStore,
};
use subsbench::vocab::{build_vocab_from_mentions, corpus_mentions, IngredientVocab, Normalizer, VocabBuild};

use crate::config::{Backend, ExperimentConfig};
use crate::Overrides;

/// Invalid configuration or usage; exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn wrap(err: anyhow::Error) -> anyhow::Error {
        anyhow::Error::new(ConfigError(format!("{err:#}")))
    }
}

fn config_err(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(message.into()))
}

fn parse_named<T: DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| config_err(format!("invalid {what} {s:?}")))
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(|e: subsbench::corpus::CorpusError| config_err(e.to_string()))
}

pub fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<()> {
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    set(&mut cfg.corpus.recipes, &o.recipes);
    set(&mut cfg.corpus.train, &o.train);
    set(&mut cfg.corpus.valid, &o.valid);
    set(&mut cfg.corpus.test, &o.test);
    set(&mut cfg.vocab.path, &o.vocab);
    set(&mut cfg.client.mock_responses, &o.mock_responses);
    set(&mut cfg.client.http.cache_dir, &o.cache_dir);
    if let Some(f) = &o.recipe_format {
        cfg.corpus.recipe_format = f.parse().map_err(|e: subsbench::corpus::CorpusError| config_err(e.to_string()))?;
    }
    if let Some(v) = &o.variant {
        cfg.prompt.variant = parse_named("context variant", v)?;
    }
    if let Some(w) = &o.wording {
        cfg.prompt.wording = parse_named("wording", w)?;
    }
    if let Some(b) = &o.backend {
        cfg.client.backend = parse_named("backend", b)?;
    }
    if let Some(u) = &o.base_url {
        cfg.client.http.base_url.clone_from(u);
    }
    if let Some(m) = &o.model {
        cfg.client.http.model.clone_from(m);
    }
    if let Some(p) = o.parallelism {
        cfg.client.http.parallelism = p;
    }
    if let Some(s) = o.seed {
        cfg.forge.seed = s;
    }
    Ok(())
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub dry_run: bool,
}

/// What a command reads and writes; checked before any work and printed
/// on `--dry-run`.
struct Plan {
    command: &'static str,
    inputs: Vec<(&'static str, PathBuf)>,
    outputs: Vec<PathBuf>,
    settings: Vec<(&'static str, String)>,
}

impl Plan {
    fn new(command: &'static str) -> Self {
        Plan {
            command,
            inputs: Vec::new(),
            outputs: Vec::new(),
            settings: Vec::new(),
        }
    }

    fn input(mut self, label: &'static str, path: &Path) -> Self {
        if !self.inputs.iter().any(|(_, p)| p == path) {
            self.inputs.push((label, path.to_path_buf()));
        }
        self
    }

    fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    fn setting(mut self, key: &'static str, value: impl ToString) -> Self {
        self.settings.push((key, value.to_string()));
        self
    }

    fn render(&self) -> String {
        let mut out = format!("plan: {}\n", self.command);
        for (label, path) in &self.inputs {
            out.push_str(&format!("  read   {label:<12} {}\n", path.display()));
        }
        for path in &self.outputs {
            out.push_str(&format!("  write  {}\n", path.display()));
        }
        for (k, v) in &self.settings {
            out.push_str(&format!("  set    {k:<12} {v}\n"));
        }
        out
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    path.as_ref()
        .ok_or_else(|| config_err(format!("no {what} configured")))
}

impl Context {
    pub fn new(cfg: ExperimentConfig, dry_run: bool) -> Self {
        Context { cfg, dry_run }
    }

    pub fn with_forge(
        mut self,
        split: Option<String>,
        n: Option<usize>,
        ratio: Option<String>,
        cap: Option<usize>,
    ) -> Result<Self> {
        if let Some(s) = split {
            self.cfg.forge.split = parse_split(&s)?;
        }
        if n.is_some() {
            self.cfg.forge.n = n;
        }
        if let Some(r) = ratio {
            self.cfg.forge.ratio = r;
        }
        if let Some(c) = cap {
            self.cfg.forge.dpo_cap = c;
        }
        self.cfg.mix_ratio().map_err(ConfigError::wrap)?;
        Ok(self)
    }

    pub fn with_eval(
        mut self,
        split: Option<String>,
        ks: Vec<usize>,
        shots: Option<usize>,
        limit: Option<usize>,
    ) -> Result<Self> {
        if let Some(s) = split {
            self.cfg.eval.split = parse_split(&s)?;
        }
        if !ks.is_empty() {
            self.cfg.eval.ks = ks;
        }
        if let Some(s) = shots {
            self.cfg.eval.shots = s;
        }
        if limit.is_some() {
            self.cfg.eval.limit = limit;
        }
        if self.cfg.eval.ks.is_empty() || self.cfg.eval.ks.contains(&0) {
            return Err(config_err("k values must be at least 1"));
        }
        Ok(self)
    }

    pub fn with_retrieval(mut self, k: Option<usize>, metric: Option<String>, rerank: Option<String>) -> Result<Self> {
        if let Some(k) = k {
            self.cfg.retrieval.k = k;
        }
        if let Some(m) = metric {
            self.cfg.retrieval.metric = m;
        }
        if let Some(r) = rerank {
            self.cfg.retrieval.rerank = parse_named("rerank mode", &r)?;
        }
        self.metric()?;
        if self.cfg.retrieval.k < 1 {
            return Err(config_err("retrieval k must be at least 1"));
        }
        Ok(self)
    }

    fn metric(&self) -> Result<SimilarityMetric> {
        self.cfg.retrieval.metric.parse().map_err(config_err)
    }

    /// Validates inputs; false when this is a dry run and work must stop.
    fn begin(&self, plan: Plan) -> Result<bool> {
        let plan = plan
            .setting("config_hash", self.cfg.hash())
            .setting("seed", self.cfg.forge.seed);
        for (label, path) in &plan.inputs {
            if !path.exists() {
                return Err(config_err(format!("{label} {} does not exist", path.display())));
            }
        }
        self.cfg.params.validate().map_err(|e| config_err(e.to_string()))?;
        if self.dry_run {
            print!("{}", plan.render());
            return Ok(false);
        }
        log::debug!("{}", plan.render());
        Ok(true)
    }

    fn normalizer(&self) -> Result<Normalizer> {
        match (&self.cfg.vocab.exceptions, &self.cfg.vocab.spelling) {
            (None, None) => Ok(Normalizer::default()),
            (Some(e), Some(s)) => Normalizer::from_files(e, s).map_err(|e| config_err(e.to_string())),
            _ => Err(config_err("vocab.exceptions and vocab.spelling must be given together")),
        }
    }

    fn vocab_inputs(&self, mut plan: Plan) -> Plan {
        if let Some(p) = &self.cfg.vocab.path {
            plan = plan.input("vocab", p);
        } else if let Some(p) = &self.cfg.corpus.recipes {
            plan = plan.input("recipes", p);
        }
        plan
    }

    fn recipes(&self) -> Result<RecipeSet> {
        let path = require(&self.cfg.corpus.recipes, "recipe corpus (corpus.recipes)")?;
        Ok(load_recipes(path, self.cfg.corpus.recipe_format)?)
    }

    /// Raw samples of one split plus the identical-pair skip count.
    fn raw_samples(&self, split: Split, normalizer: &Normalizer) -> Result<(Vec<SubstitutionSample>, usize)> {
        let path = require_split(&self.cfg, split)?;
        let load = load_substitutions(path, split, normalizer)?;
        Ok((load.samples, load.skipped_identical))
    }

    /// Title-joined samples. Returns (samples, skipped identical, orphans).
    fn samples(&self, split: Split, normalizer: &Normalizer) -> Result<(Vec<SubstitutionSample>, usize, usize)> {
        let (raw, skipped) = self.raw_samples(split, normalizer)?;
        if self.cfg.corpus.recipes.is_none() {
            return Ok((raw, skipped, 0));
        }
        let recipes = self.recipes()?;
        let joined = join_titles(raw, &recipes);
        if !joined.orphans.is_empty() {
            log::warn!("{} {split} samples reference unknown recipes; dropped", joined.orphans.len());
        }
        Ok((joined.joined, skipped, joined.orphans.len()))
    }

    fn build_vocab(&self, normalizer: Normalizer) -> Result<VocabBuild> {
        let recipes = self.recipes()?;
        let mut samples = Vec::new();
        for split in [Split::Train, Split::Valid, Split::Test] {
            if self.cfg.corpus.split(split).is_some() {
                samples.extend(self.raw_samples(split, &normalizer)?.0);
            }
        }
        Ok(build_vocab_from_mentions(
            corpus_mentions(&recipes, &samples),
            &self.cfg.vocab.merge,
            normalizer,
        ))
    }

    fn vocab(&self) -> Result<IngredientVocab> {
        let normalizer = self.normalizer()?;
        if let Some(path) = &self.cfg.vocab.path {
            return Ok(IngredientVocab::load(path, normalizer)?);
        }
        if self.cfg.corpus.recipes.is_some() {
            let build = self.build_vocab(normalizer)?;
            log::info!("built vocabulary of {} ingredients", build.vocab.len());
            return Ok(build.vocab);
        }
        log::info!("no vocabulary configured; matching on normalized names only");
        Ok(IngredientVocab::empty(normalizer))
    }

    fn client(&self) -> Result<LlmClient> {
        let http = self.cfg.client.http.clone();
        let client = match self.cfg.client.backend {
            Backend::Http => LlmClient::http(http),
            Backend::Mock => {
                let path = require(&self.cfg.client.mock_responses, "mock responses (client.mock_responses)")?;
                let mut mock = MockTransport::from_file(path)?;
                if let Some(f) = &self.cfg.client.mock_fallback {
                    mock = mock.with_fallback(f.clone());
                }
                LlmClient::new(Arc::new(mock), http)
            }
        };
        client.map_err(|e| config_err(e.to_string()))
    }

    fn client_inputs(&self, plan: Plan) -> Plan {
        let plan = plan
            .setting("backend", format!("{:?}", self.cfg.client.backend).to_lowercase())
            .setting("model", &self.cfg.client.http.model);
        match (&self.cfg.client.backend, &self.cfg.client.mock_responses) {
            (Backend::Mock, Some(p)) => plan.input("mock", p),
            _ => plan,
        }
    }

    fn needs_recipes_for_prompt(&self) -> bool {
        self.cfg.prompt.variant.needs_title() || self.cfg.prompt.variant.needs_instructions()
    }

    fn write_manifest(&self, out: &Path, command: &str, records: usize, extra: Value) -> Result<()> {
        let mut manifest = json!({
            "tool": "subsbench",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.forge.seed,
            "output": out.file_name().map(|n| n.to_string_lossy().to_string()),
            "records": records,
        });
        if let (Some(m), Value::Object(extra)) = (manifest.as_object_mut(), extra) {
            m.extend(extra);
        }
        let path = manifest_path(out);
        write_atomic(&path, pretty(&manifest)?.as_bytes())?;
        Ok(())
    }
}

fn require_split(cfg: &ExperimentConfig, split: Split) -> Result<&PathBuf> {
    cfg.corpus
        .split(split)
        .ok_or_else(|| config_err(format!("no {split} split configured (corpus.{split})")))
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn default_report_path(out: &Path) -> PathBuf {
    out.with_extension("report.json")
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn ingest(ctx: &Context, out_dir: Option<&Path>) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut plan = Plan::new("ingest").input("recipes", require(&cfg.corpus.recipes, "recipe corpus")?);
    let splits: Vec<Split> = [Split::Train, Split::Valid, Split::Test]
        .into_iter()
        .filter(|s| cfg.corpus.split(*s).is_some())
        .collect();
    for &s in &splits {
        plan = plan.input("split", require_split(cfg, s)?);
        if let Some(dir) = out_dir {
            plan = plan.output(&dir.join(format!("samples.{s}.jsonl")));
        }
    }
    if !ctx.begin(plan)? {
        return Ok(());
    }
    let normalizer = ctx.normalizer()?;
    let recipes = ctx.recipes()?;
    println!("recipes: {}", recipes.len());
    for s in splits {
        let (raw, skipped) = ctx.raw_samples(s, &normalizer)?;
        let joined = join_titles(raw, &recipes);
        println!(
            "{s}: {} samples, {} orphans, {} identical pairs skipped",
            joined.joined.len(),
            joined.orphans.len(),
            skipped
        );
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let out = dir.join(format!("samples.{s}.jsonl"));
            let n = write_jsonl(&out, &joined.joined)?;
            ctx.write_manifest(&out, "ingest", n, json!({"orphans": joined.orphans.len(), "skipped": skipped}))?;
        }
    }
    Ok(())
}

pub fn vocab_build(ctx: &Context, out: &Path, merge_log: Option<&Path>) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut plan = Plan::new("vocab build")
        .input("recipes", require(&cfg.corpus.recipes, "recipe corpus")?)
        .output(out)
        .setting("merge", serde_json::to_string(&cfg.vocab.merge)?);
    if let Some(m) = merge_log {
        plan = plan.output(m);
    }
    if !ctx.begin(plan)? {
        return Ok(());
    }
    let build = ctx.build_vocab(ctx.normalizer()?)?;
    let n = build.vocab.save(out)?;
    if let Some(m) = merge_log {
        write_jsonl(m, &build.merge_log)?;
    }
    ctx.write_manifest(out, "vocab build", n, json!({"stats": build.stats}))?;
    println!(
        "vocabulary: {n} ingredients from {} mentions ({} merged, {} unnormalizable)",
        build.stats.mentions, build.stats.merged, build.stats.unnormalizable
    );
    Ok(())
}

fn subst_samples(ctx: &Context) -> Result<Vec<SubstitutionSample>> {
    let normalizer = ctx.normalizer()?;
    let (samples, _, _) = ctx.samples(ctx.cfg.forge.split, &normalizer)?;
    Ok(match ctx.cfg.forge.n {
        Some(n) => sample_subset(&samples, n, ctx.cfg.forge.seed)?,
        None => samples,
    })
}

fn forge_plan(ctx: &Context, command: &'static str, out: &Path) -> Result<Plan> {
    let cfg = &ctx.cfg;
    let mut plan = Plan::new(command)
        .input("split", require_split(cfg, cfg.forge.split)?)
        .output(out)
        .setting("split", cfg.forge.split)
        .setting("variant", cfg.prompt.variant)
        .setting("n", cfg.forge.n.map(|n| n.to_string()).unwrap_or_else(|| "all".into()));
    if let Some(r) = &cfg.corpus.recipes {
        plan = plan.input("recipes", r);
    } else if ctx.needs_recipes_for_prompt() {
        return Err(config_err(format!(
            "context variant {} needs recipe titles; configure corpus.recipes",
            cfg.prompt.variant
        )));
    }
    Ok(plan.output(&manifest_path(out)))
}

pub fn forge_sft(ctx: Context, out: &Path) -> Result<()> {
    if !ctx.begin(forge_plan(&ctx, "forge sft", out)?)? {
        return Ok(());
    }
    let samples = subst_samples(&ctx)?;
    let n = build_sft_dataset(&samples, &ctx.cfg.prompt, out)?;
    ctx.write_manifest(out, "forge sft", n, json!({"split": ctx.cfg.forge.split}))?;
    println!("wrote {n} SFT records to {}", out.display());
    Ok(())
}

pub fn forge_qa(ctx: &Context, out: &Path) -> Result<()> {
    let plan = Plan::new("forge qa")
        .input("recipes", require(&ctx.cfg.corpus.recipes, "recipe corpus")?)
        .output(out)
        .output(&manifest_path(out));
    if !ctx.begin(plan)? {
        return Ok(());
    }
    let recipes = ctx.recipes()?;
    let (n, build) = build_recipe_qa_dataset(recipes.as_slice(), &ctx.cfg.prompt, out)?;
    ctx.write_manifest(out, "forge qa", n, json!({"skipped_untitled": build.skipped_untitled}))?;
    println!("wrote {n} recipe-QA records to {} ({} untitled skipped)", out.display(), build.skipped_untitled);
    Ok(())
}

pub fn forge_multitask(ctx: Context, out: &Path) -> Result<()> {
    let plan = forge_plan(&ctx, "forge multitask", out)?.setting("ratio", &ctx.cfg.forge.ratio);
    if ctx.cfg.corpus.recipes.is_none() {
        return Err(config_err("multi-task mixing needs corpus.recipes for the QA side"));
    }
    if !ctx.begin(plan)? {
        return Ok(());
    }
    let ratio = ctx.cfg.mix_ratio()?;
    let subst = build_sft(&subst_samples(&ctx)?, &ctx.cfg.prompt)?;
    let qa = build_recipe_qa(ctx.recipes()?.as_slice(), &ctx.cfg.prompt).records;
    let n = build_multitask_dataset(&subst, &qa, ratio, ctx.cfg.forge.seed, out)?;
    ctx.write_manifest(out, "forge multitask", n, json!({"ratio": ratio.to_string()}))?;
    println!("wrote {n} multi-task records to {}", out.display());
    Ok(())
}

pub fn forge_dpo(ctx: Context, predictions: &Path, out: &Path) -> Result<()> {
    let plan = ctx
        .vocab_inputs(Plan::new("forge dpo").input("predictions", predictions))
        .output(out)
        .output(&manifest_path(out))
        .setting("cap", ctx.cfg.forge.dpo_cap);
    if !ctx.begin(plan)? {
        return Ok(());
    }
    let records: Vec<PredictionRecord> = read_jsonl(predictions)?;
    let vocab = ctx.vocab()?;
    let (n, build) = build_dpo_dataset(&records, &vocab, ctx.cfg.forge.dpo_cap, out)?;
    ctx.write_manifest(
        out,
        "forge dpo",
        n,
        json!({
            "excluded_correct": build.excluded_correct,
            "skipped_no_prediction": build.skipped_no_prediction,
            "truncated": build.truncated,
        }),
    )?;
    println!(
        "wrote {n} preference triplets to {} ({} correct excluded, {} without prediction, {} over cap)",
        out.display(),
        build.excluded_correct,
        build.skipped_no_prediction,
        build.truncated
    );
    Ok(())
}

fn eval_plan(ctx: &Context, command: &'static str, out: &Path, report: &Path) -> Result<Plan> {
    let cfg = &ctx.cfg;
    let mut plan = Plan::new(command)
        .input("split", require_split(cfg, cfg.eval.split)?)
        .output(out)
        .output(report)
        .output(&manifest_path(out))
        .setting("split", cfg.eval.split)
        .setting("k", format!("{:?}", cfg.eval.ks))
        .setting("variant", cfg.prompt.variant);
    plan = ctx.client_inputs(ctx.vocab_inputs(plan));
    if let Some(r) = &cfg.corpus.recipes {
        plan = plan.input("recipes", r);
    } else if ctx.needs_recipes_for_prompt() {
        return Err(config_err(format!(
            "context variant {} needs recipe titles; configure corpus.recipes",
            cfg.prompt.variant
        )));
    }
    if let Some(dir) = &cfg.client.http.cache_dir {
        plan = plan.setting("cache", dir.display());
    }
    Ok(plan)
}

fn limited(mut samples: Vec<SubstitutionSample>, limit: Option<usize>) -> Vec<SubstitutionSample> {
    if let Some(l) = limit {
        samples.truncate(l);
    }
    samples
}

fn exemplars(ctx: &Context, normalizer: &Normalizer) -> Result<Vec<SubstitutionSample>> {
    let shots = ctx.cfg.eval.shots;
    if shots == 0 {
        return Ok(Vec::new());
    }
    let (train, _, _) = ctx.samples(Split::Train, normalizer)?;
    match &ctx.cfg.eval.exemplar {
        Some(key) => {
            let found = train
                .into_iter()
                .find(|s| &s.key() == key || &s.recipe_id == key)
                .ok_or_else(|| config_err(format!("exemplar {key:?} not found in the train split")))?;
            Ok(vec![found])
        }
        None => Ok(train.into_iter().take(shots).collect()),
    }
}

fn finish_eval(
    ctx: &Context,
    command: &str,
    out: &Path,
    report_path: &Path,
    predictions: &[PredictionRecord],
    report: &EvalReport,
) -> Result<()> {
    let n = write_jsonl(out, predictions)?;
    write_atomic(report_path, pretty(report)?.as_bytes())?;
    ctx.write_manifest(out, command, n, json!({"report": report_path.file_name().map(|f| f.to_string_lossy().to_string())}))?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn eval_run(ctx: Context, out: &Path, report: Option<&Path>) -> Result<()> {
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| default_report_path(out));
    let mut plan = eval_plan(&ctx, "eval run", out, &report_path)?.setting("shots", ctx.cfg.eval.shots);
    if ctx.cfg.eval.shots > 0 {
        plan = plan.input("train", require_split(&ctx.cfg, Split::Train)?);
    }
    if !ctx.begin(plan)? {
        return Ok(());
    }
    let normalizer = ctx.normalizer()?;
    let (samples, skipped, orphans) = ctx.samples(ctx.cfg.eval.split, &normalizer)?;
    let samples = limited(samples, ctx.cfg.eval.limit);
    let vocab = ctx.vocab()?;
    let client = ctx.client()?;
    let spec = ExperimentSpec {
        prompt: ctx.cfg.prompt.clone(),
        params: ctx.cfg.params,
        ks: ctx.cfg.eval.ks.clone(),
        exemplars: exemplars(&ctx, &normalizer)?,
    };
    let mut run = run_experiment(&samples, &spec, &client, &vocab)?;
    run.report.skipped = skipped;
    run.report.orphans = orphans;
    finish_eval(&ctx, "eval run", out, &report_path, &run.predictions, &run.report)
}

pub fn eval_score(ctx: Context, predictions: &Path, out: Option<&Path>, as_json: bool) -> Result<()> {
    let mut plan = ctx
        .vocab_inputs(Plan::new("eval score").input("predictions", predictions))
        .setting("k", format!("{:?}", ctx.cfg.eval.ks));
    if let Some(o) = out {
        plan = plan.output(o);
    }
    if !ctx.begin(plan)? {
        return Ok(());
    }
    let records: Vec<PredictionRecord> = read_jsonl(predictions)?;
    let vocab = ctx.vocab()?;
    let report = score(&records, &ctx.cfg.eval.ks, &vocab)?;
    if let Some(o) = out {
        write_atomic(o, pretty(&report)?.as_bytes())?;
    }
    if as_json {
        print!("{}", pretty(&report)?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn labelled(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| arg.to_string());
            (label, path)
        }
    }
}

fn resolve_reference(labels: &[String], wanted: &str) -> Result<String> {
    if let Some(exact) = labels.iter().find(|l| l.as_str() == wanted) {
        return Ok(exact.clone());
    }
    let needle = wanted.to_lowercase();
    let hits: Vec<&String> = labels.iter().filter(|l| l.to_lowercase().contains(&needle)).collect();
    match hits.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(config_err(format!("reference {wanted:?} matches no row"))),
        _ => Err(config_err(format!("reference {wanted:?} is ambiguous"))),
    }
}

pub fn eval_compare(
    ctx: &Context,
    reports: &[String],
    predictions: &[String],
    reference: &str,
    literature: bool,
    as_json: bool,
) -> Result<()> {
    let reports: Vec<(String, PathBuf)> = reports.iter().map(|r| labelled(r)).collect();
    let predictions: Vec<(String, PathBuf)> = predictions.iter().map(|p| labelled(p)).collect();
    let mut plan = Plan::new("eval compare").setting("reference", reference);
    for (_, p) in &reports {
        plan = plan.input("report", p);
    }
    for (_, p) in &predictions {
        plan = plan.input("predictions", p);
    }
    if !predictions.is_empty() {
        plan = ctx.vocab_inputs(plan);
    }
    if !ctx.begin(plan)? {
        return Ok(());
    }
    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    for (label, path) in reports {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let report: EvalReport =
            serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))?;
        rows.push((label, report));
    }
    if !predictions.is_empty() {
        let vocab = ctx.vocab()?;
        for (label, path) in predictions {
            let records: Vec<PredictionRecord> = read_jsonl(&path)?;
            rows.push((label, score(&records, &ctx.cfg.eval.ks, &vocab)?));
        }
    }
    let lit = if literature { literature_values() } else { Vec::new() };
    let labels: Vec<String> = rows
        .iter()
        .map(|(l, _)| l.clone())
        .chain(lit.iter().map(|l| l.label.clone()))
        .collect();
    let reference = resolve_reference(&labels, reference)?;
    let table = compare_reports(&rows, &lit, &reference).map_err(|e| config_err(e.to_string()))?;
    if as_json {
        print!("{}", pretty(&table)?);
    } else {
        print!("{}", table.to_text());
    }
    Ok(())
}

fn retrieval_plan(ctx: &Context, plan: Plan) -> Result<Plan> {
    let r = &ctx.cfg.retrieval;
    let mut plan = ctx.vocab_inputs(plan).setting("metric", &r.metric).setting("k", r.k);
    if ctx.cfg.vocab.path.is_none() && ctx.cfg.corpus.recipes.is_none() {
        return Err(config_err("retrieval needs a vocabulary (vocab.path or corpus.recipes)"));
    }
    plan = match (&r.vectors, &r.embedding_url) {
        (Some(v), _) => plan.input("vectors", v),
        (None, Some(url)) => plan.setting("embeddings", url),
        (None, None) => return Err(config_err("retrieval needs retrieval.vectors or retrieval.embedding_url")),
    };
    if r.rerank == RerankMode::Category {
        plan = plan.input("categories", require(&r.categories, "category map (retrieval.categories)")?);
    }
    Ok(plan)
}

fn store(ctx: &Context, vocab: &IngredientVocab) -> Result<VectorStore> {
    let r = &ctx.cfg.retrieval;
    Ok(match (&r.vectors, &r.embedding_url) {
        (Some(v), _) => embed_vocab_from_file(vocab, v)?,
        (None, Some(url)) => {
            let client = EmbeddingClient::new(url, &r.embedding_model, &ctx.cfg.client.http)?;
            embed_vocab_with(vocab, &client, 64)?
        }
        (None, None) => unreachable!("checked by the plan"),
    })
}

fn categories(ctx: &Context, vocab: &IngredientVocab) -> Result<CategoryMap> {
    Ok(match &ctx.cfg.retrieval.categories {
        Some(p) => CategoryMap::load(p, vocab)?,
        None => CategoryMap::default(),
    })
}

pub fn retrieve_topk(ctx: Context, source: &str) -> Result<()> {
    let plan = retrieval_plan(&ctx, Plan::new("retrieve topk").setting("source", source))?;
    if !ctx.begin(plan)? {
        return Ok(());
    }
    let vocab = ctx.vocab()?;
    let canonical = vocab
        .resolve(source)
        .ok_or_else(|| anyhow!("{source:?} does not normalize to an ingredient name"))?;
    let retriever = Retriever::new(store(&ctx, &vocab)?);
    let hits = retriever.topk(&canonical, ctx.cfg.retrieval.k, ctx.metric()?)?;
    let cats = categories(&ctx, &vocab)?;
    for (i, (name, score)) in rerank(hits, &canonical, &cats, ctx.cfg.retrieval.rerank).iter().enumerate() {
        println!("{}\t{name}\t{score:.6}", i + 1);
    }
    Ok(())
}

pub fn retrieve_baseline2(ctx: Context, out: &Path, report: Option<&Path>) -> Result<()> {
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| default_report_path(out));
    let plan = retrieval_plan(&ctx, eval_plan(&ctx, "retrieve baseline2", out, &report_path)?)?
        .setting("rerank", format!("{:?}", ctx.cfg.retrieval.rerank).to_lowercase());
    if !ctx.begin(plan)? {
        return Ok(());
    }
    let normalizer = ctx.normalizer()?;
    let (samples, skipped, orphans) = ctx.samples(ctx.cfg.eval.split, &normalizer)?;
    let samples = limited(samples, ctx.cfg.eval.limit);
    let vocab = ctx.vocab()?;
    let retriever = Retriever::new(store(&ctx, &vocab)?);
    let cats = categories(&ctx, &vocab)?;
    let client = ctx.client()?;
    let b2 = Baseline2 {
        retriever: &retriever,
        vocab: &vocab,
        metric: ctx.metric()?,
        k: ctx.cfg.retrieval.k,
        rerank: ctx.cfg.retrieval.rerank,
        categories: &cats,
        template: &ctx.cfg.prompt.template,
        params: ctx.cfg.params,
    };
    let fingerprint = hex::encode(Sha256::digest(
        json!({
            "model": ctx.cfg.client.http.model,
            "params": ctx.cfg.params,
            "retrieval": ctx.cfg.retrieval,
            "template": ctx.cfg.prompt.template,
        })
        .to_string()
        .as_bytes(),
    ));

    let staged: Vec<Result<(Vec<String>, String), String>> = samples
        .iter()
        .map(|s| {
            let candidates = b2.candidates(s).map_err(|e| e.to_string())?;
            let prompt = b2.prompt(s, &candidates);
            Ok((candidates, prompt))
        })
        .collect();
    let prompts: Vec<&str> = staged.iter().filter_map(|s| s.as_ref().ok().map(|(_, p)| p.as_str())).collect();
    let mut answers = client.complete_batch(&prompts, &ctx.cfg.params).results.into_iter();

    let mut predictions = Vec::with_capacity(samples.len());
    for (sample, stage) in samples.iter().zip(&staged) {
        let mut record = PredictionRecord {
            sample_key: sample.key(),
            gold: sample.target.clone(),
            ranked: Vec::new(),
            raw: String::new(),
            latency_ms: 0,
            fingerprint: fingerprint.clone(),
            prompt: None,
            error: None,
        };
        match stage {
            Err(e) => record.error = Some(e.clone()),
            Ok((candidates, prompt)) => {
                record.prompt = Some(prompt.clone());
                match answers.next().expect("one answer per prompt") {
                    Ok(c) => {
                        record.ranked = b2.constrain(candidates, &c.text);
                        record.raw = c.text;
                        record.latency_ms = c.latency_ms;
                    }
                    Err(e) => {
                        // similarity order stands in when the LLM call fails
                        record.ranked = candidates.clone();
                        record.error = Some(e.to_string());
                    }
                }
            }
        }
        predictions.push(record);
    }
    let mut report = score(&predictions, &ctx.cfg.eval.ks, &vocab)?;
    report.skipped = skipped;
    report.orphans = orphans;
    report.config = json!({
        "model": ctx.cfg.client.http.model,
        "retrieval": ctx.cfg.retrieval,
        "params": ctx.cfg.params,
        "fingerprint": fingerprint,
    });
    finish_eval(&ctx, "retrieve baseline2", out, &report_path, &predictions, &report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use subsbench::promptforge::ContextVariant;

    #[test]
    fn labels_from_args() {
        assert_eq!(labelled("ours=a/b.json"), ("ours".into(), PathBuf::from("a/b.json")));
        assert_eq!(labelled("a/run1.json"), ("run1".into(), PathBuf::from("a/run1.json")));
    }

    #[test]
    fn reference_lookup() {
        let labels = vec!["run".to_string(), "GISMO (baseline 1)".to_string(), "Mistral 7B SFT+DPO+SFT".to_string()];
        assert_eq!(resolve_reference(&labels, "run").unwrap(), "run");
        assert_eq!(resolve_reference(&labels, "gismo").unwrap(), "GISMO (baseline 1)");
        assert!(resolve_reference(&labels, "nothing").is_err());
        assert!(resolve_reference(&labels, "i").is_err());
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(manifest_path(Path::new("out/sft.jsonl")), PathBuf::from("out/sft.jsonl.manifest.json"));
        assert_eq!(default_report_path(Path::new("out/p.jsonl")), PathBuf::from("out/p.report.json"));
    }

    #[test]
    fn variant_names_parse() {
        let v: ContextVariant = parse_named("variant", "source-title-ingredients").unwrap();
        assert_eq!(v, ContextVariant::SourceTitleIngredients);
        assert!(parse_named::<ContextVariant>("variant", "nope").is_err());
    }
}
