mod oracle;

use std::sync::Arc;

use proptest::prelude::*;
use subsbench::corpus::{Split, SubstitutionSample};
use subsbench::evald::{hit_at_k, hits_at_k, run_experiment, ExperimentSpec, PredictionRecord};
use subsbench::llmclient::{ClientConfig, LlmClient, MockTransport};
use subsbench::promptforge::{render_prompt, PromptConfig};
use subsbench::vocab::{IngredientVocab, Normalizer};

const POOL: [&str; 6] = ["lime", "lemon", "Lemons", "orange", "strawberry", "cool whip"];

fn record(gold: &str, ranked: Vec<String>) -> PredictionRecord {
    PredictionRecord {
        sample_key: String::new(),
        gold: gold.into(),
        ranked,
        raw: String::new(),
        latency_ms: 0,
        fingerprint: String::new(),
        prompt: None,
        error: None,
    }
}

fn records_strategy() -> impl Strategy<Value = Vec<PredictionRecord>> {
    let word = (0..POOL.len()).prop_map(|i| POOL[i].to_string());
    proptest::collection::vec((word.clone(), proptest::collection::vec(word, 0..7)), 1..200)
        .prop_map(|rows| rows.into_iter().map(|(g, r)| record(&g, r)).collect())
}

fn vocab() -> IngredientVocab {
    IngredientVocab::empty(Normalizer::default())
}

proptest! {
    #[test]
    fn matches_brute_force(records in records_strategy(), k in 1usize..8) {
        let v = vocab();
        let pairs: Vec<(String, Vec<String>)> = records.iter().map(|r| (r.gold.clone(), r.ranked.clone())).collect();
        let expected = oracle::hit_count(&pairs, k, |p, g| v.matches(p, g));
        prop_assert_eq!(hits_at_k(&records, k, &v).unwrap(), expected);
    }

    #[test]
    fn monotone_in_k(records in records_strategy(), k in 1usize..8) {
        let v = vocab();
        prop_assert!(hit_at_k(&records, k, &v).unwrap() <= hit_at_k(&records, k + 1, &v).unwrap());
        let h = hit_at_k(&records, k, &v).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn permutation_invariant(records in records_strategy(), seed in any::<u64>(), k in 1usize..5) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let v = vocab();
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(hit_at_k(&records, k, &v).unwrap(), hit_at_k(&shuffled, k, &v).unwrap());
    }
}

fn samples(n: usize) -> Vec<SubstitutionSample> {
    (0..n)
        .map(|i| {
            SubstitutionSample::new(&format!("r{i:03}"), &format!("source{i}"), &format!("gold{i}"), Split::Test)
                .with_title(&format!("Dish {i}"))
        })
        .collect()
}

fn scripted(samples: &[SubstitutionSample], correct: usize) -> MockTransport {
    let cfg = PromptConfig::default();
    MockTransport::new(samples.iter().enumerate().map(|(i, s)| {
        let answer = if i < correct { format!("1. {}", s.target) } else { "1. wrong".to_string() };
        (render_prompt(s, &cfg).unwrap(), answer)
    }))
}

#[test]
fn mock_run_scores_exactly() {
    let s = samples(100);
    let mock = Arc::new(scripted(&s, 60));
    let client = LlmClient::new(mock.clone(), ClientConfig::default()).unwrap();
    let run = run_experiment(&s, &ExperimentSpec::default(), &client, &vocab()).unwrap();
    assert_eq!(run.report.hits[&1], 60);
    assert_eq!(run.report.hit_rate[&1], 0.6);
    assert!(run.report.to_text().contains("[0.6000]"));
    assert_eq!(run.predictions.len(), 100);
    assert_eq!(mock.calls(), 100);
    assert!(run.predictions.iter().all(|p| p.prompt.is_some() && p.error.is_none()));
    let fp = &run.predictions[0].fingerprint;
    assert!(run.predictions.iter().all(|p| &p.fingerprint == fp));
}

#[test]
fn cache_replay_is_identical_and_offline() {
    let dir = tempfile::tempdir().unwrap();
    let config = ClientConfig {
        cache_dir: Some(dir.path().to_path_buf()),
        ..ClientConfig::default()
    };
    let s = samples(20);
    let first = LlmClient::new(Arc::new(scripted(&s, 7)), config.clone()).unwrap();
    let a = run_experiment(&s, &ExperimentSpec::default(), &first, &vocab()).unwrap();

    let silent = Arc::new(MockTransport::new(Vec::<(String, String)>::new()));
    let replay = LlmClient::new(silent.clone(), config).unwrap();
    let b = run_experiment(&s, &ExperimentSpec::default(), &replay, &vocab()).unwrap();
    assert_eq!(silent.calls(), 0);
    assert_eq!(a.report, b.report);
    let strip = |ps: &[PredictionRecord]| ps.iter().map(|p| (p.sample_key.clone(), p.ranked.clone(), p.raw.clone())).collect::<Vec<_>>();
    assert_eq!(strip(&a.predictions), strip(&b.predictions));
}

#[test]
fn failures_become_empty_predictions() {
    let s = samples(10);
    let cfg = PromptConfig::default();
    let poisoned = render_prompt(&s[3], &cfg).unwrap();
    let mock = scripted(&s, 10).with_poisoned([poisoned]);
    let client = LlmClient::new(Arc::new(mock), ClientConfig::default()).unwrap();
    let mut untitled = s.clone();
    untitled[5].title = None;
    let run = run_experiment(&untitled, &ExperimentSpec::default(), &client, &vocab()).unwrap();
    assert_eq!(run.report.failed, 2);
    assert_eq!(run.report.hits[&1], 8);
    assert!(run.predictions[3].ranked.is_empty() && run.predictions[3].error.is_some());
    assert!(run.predictions[5].prompt.is_none() && run.predictions[5].error.is_some());
}

#[test]
fn one_shot_run_skips_self_exemplar() {
    let s = samples(5);
    let spec = ExperimentSpec {
        exemplars: vec![s[0].clone()],
        ..ExperimentSpec::default()
    };
    let client = LlmClient::new(
        Arc::new(MockTransport::new(Vec::<(String, String)>::new()).with_fallback("1. gold0")),
        ClientConfig::default(),
    )
    .unwrap();
    let run = run_experiment(&s, &spec, &client, &vocab()).unwrap();
    assert!(run.predictions.iter().all(|p| p.error.is_none()));
    assert!(run.predictions[1].prompt.as_ref().unwrap().contains("1. gold0"));
    assert_eq!(run.report.hits[&1], 1);
}
