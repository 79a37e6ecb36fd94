//! Consistency of the bundled mini-corpus with the loaders and builders.

use std::path::PathBuf;

use subsbench::corpus::{join_titles, load_recipes, load_substitutions, RecipeFormat, Split};
use subsbench::promptforge::{build_sft, PromptConfig};
use subsbench::retrieval::{embed_vocab_from_file, CategoryMap, Retriever, SimilarityMetric};
use subsbench::vocab::{build_vocab, MergeRules, Normalizer};

fn mini(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mini").join(name)
}

#[test]
fn loads_and_joins() {
    let norm = Normalizer::default();
    let recipes = load_recipes(&mini("recipes.jsonl"), RecipeFormat::Jsonl).unwrap();
    assert_eq!(recipes.len(), 100);
    let layer1 = load_recipes(&mini("layer1.json"), RecipeFormat::Recipe1mJson).unwrap();
    assert_eq!(layer1.len(), 100);
    for r in recipes.iter() {
        let l = layer1.get(&r.id).unwrap();
        let firsts: Vec<&String> = r.ingredient_groups.iter().map(|g| &g[0]).collect();
        let l_firsts: Vec<&String> = l.ingredient_groups.iter().map(|g| &g[0]).collect();
        assert_eq!(firsts, l_firsts);
    }
    let seed = recipes.get("0006c5e4eb").unwrap();
    assert_eq!(seed.ingredient_groups.len(), 3);

    let mut all = Vec::new();
    for (file, split, n) in [("train.jsonl", Split::Train, 150), ("val.jsonl", Split::Valid, 50), ("test.jsonl", Split::Test, 100)] {
        let load = load_substitutions(&mini(file), split, &norm).unwrap();
        assert_eq!(load.samples.len(), n, "{file}");
        let joined = join_titles(load.samples, &recipes);
        assert!(joined.orphans.is_empty());
        all.extend(joined.joined);
    }

    let build = build_vocab(&recipes, &all, &MergeRules::default(), norm);
    let vocab = build.vocab;
    assert!(vocab.len() > 50);
    assert_eq!(vocab.resolve("Lemons").as_deref(), Some("lemon"));

    let store = embed_vocab_from_file(&vocab, &mini("vectors.jsonl")).unwrap();
    assert_eq!(store.len(), vocab.len());
    let cats = CategoryMap::load(&mini("categories.jsonl"), &vocab).unwrap();
    assert_eq!(cats.get("lemon"), Some("citrus"));

    let r = Retriever::new(store);
    let top = r.topk("lemon", 5, SimilarityMetric::Cosine).unwrap();
    assert_eq!(top.len(), 5);

    let sft = build_sft(&all, &PromptConfig::default()).unwrap();
    assert_eq!(sft.len(), 300);
}
