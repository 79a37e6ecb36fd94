//! Brute-force reference implementations used by the integration and
//! acceptance tests. Written from the metric definitions, not from the
//! library code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

fn unit(v: &[f64]) -> Vec<f64> {
    let mut sq = 0.0;
    for x in v {
        sq += x * x;
    }
    let n = sq.sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Distinct names, sorted, with unit vectors.
fn prepared(entries: &[(String, Vec<f64>)]) -> Vec<(String, Vec<f64>)> {
    let mut seen = BTreeMap::new();
    for (n, v) in entries {
        seen.entry(n.clone()).or_insert_with(|| unit(v));
    }
    seen.into_iter().collect()
}

/// Every candidate scored, sorted by score descending then name ascending.
fn rank_all(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored
}

pub fn cosine_topk(entries: &[(String, Vec<f64>)], source: &str, k: usize) -> Vec<(String, f64)> {
    let items = prepared(entries);
    let q = &items.iter().find(|(n, _)| n == source).unwrap().1;
    let scored = items
        .iter()
        .filter(|(n, _)| n != source)
        .map(|(n, v)| (n.clone(), dot(q, v)))
        .collect();
    rank_all(scored, k)
}

pub fn euclid_order(entries: &[(String, Vec<f64>)], source: &str) -> Vec<String> {
    let items = prepared(entries);
    let q = items.iter().find(|(n, _)| n == source).unwrap().1.clone();
    let mut scored: Vec<(String, f64)> = items
        .iter()
        .filter(|(n, _)| n != source)
        .map(|(n, v)| {
            let d: f64 = q.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            (n.clone(), d.sqrt())
        })
        .collect();
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().map(|(n, _)| n).collect()
}

pub fn margin_topk(
    entries: &[(String, Vec<f64>)],
    source: &str,
    k: usize,
    hood: usize,
) -> Vec<(String, f64)> {
    let items = prepared(entries);
    let mean_of = |i: usize| -> f64 {
        let mut sims: Vec<f64> = Vec::new();
        for j in 0..items.len() {
            if j != i {
                sims.push(dot(&items[i].1, &items[j].1));
            }
        }
        sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let take = hood.min(sims.len());
        if take == 0 {
            return 0.0;
        }
        let mut s = 0.0;
        for x in &sims[..take] {
            s += x;
        }
        s / take as f64
    };
    let qi = items.iter().position(|(n, _)| n == source).unwrap();
    let mq = mean_of(qi);
    let mut scored = Vec::new();
    for j in 0..items.len() {
        if j == qi {
            continue;
        }
        let cos = dot(&items[qi].1, &items[j].1);
        let denom = (mq + mean_of(j)) / 2.0;
        let score = if denom.abs() < 1e-12 { cos } else { cos / denom };
        scored.push((items[j].0.clone(), score));
    }
    rank_all(scored, k)
}

fn words(s: &str) -> Vec<String> {
    let lower = s.to_lowercase();
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in lower.chars() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Okapi BM25, k1 = 1.2, b = 0.75, idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
pub fn bm25_topk(names: &[String], query: &str, k: usize) -> Vec<(String, f64)> {
    let docs: Vec<String> = names.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let toks: Vec<Vec<String>> = docs.iter().map(|d| words(d)).collect();
    let n = docs.len() as f64;
    let avgdl = toks.iter().map(|t| t.len()).sum::<usize>() as f64 / n;
    let q = words(query);
    let mut scored = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        if doc == query {
            continue;
        }
        let norm = if avgdl > 0.0 {
            1.0 - 0.75 + 0.75 * toks[i].len() as f64 / avgdl
        } else {
            1.0
        };
        let mut s = 0.0;
        for term in &q {
            let tf = toks[i].iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = toks.iter().filter(|t| t.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            s += idf * tf * (1.2 + 1.0) / (tf + 1.2 * norm);
        }
        scored.push((doc.clone(), s));
    }
    rank_all(scored, k)
}

/// Double loop: a record is a hit if any of its first `k` predictions matches.
pub fn hit_count<F: Fn(&str, &str) -> bool>(
    records: &[(String, Vec<String>)],
    k: usize,
    matches: F,
) -> usize {
    let mut hits = 0;
    for (gold, ranked) in records {
        let mut hit = false;
        for (i, p) in ranked.iter().enumerate() {
            if i >= k {
                break;
            }
            if matches(p, gold) {
                hit = true;
            }
        }
        if hit {
            hits += 1;
        }
    }
    hits
}
