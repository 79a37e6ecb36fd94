//! Free-text model responses to ranked ingredient predictions.
//!
//! Items come from numbered (`1. x`, `2) x`) or bulleted (`- x`, `• x`,
//! `* x`) lines; without any list marker the first non-blank line is the
//! answer. Each item is cut at an explanation delimiter, stripped of
//! surrounding punctuation and normalized. Multi-word names stay whole.

use serde::{Deserialize, Serialize};

use crate::vocab::Normalizer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub ranked: Vec<String>,
    pub raw: String,
}

const DELIMITERS: [&str; 6] = [":", " because ", " - ", " – ", " (", " as "];

fn strip_marker(line: &str) -> Option<&str> {
    let line = line.trim_start();
    for bullet in ['-', '•', '*', '+', '·'] {
        if let Some(rest) = line.strip_prefix(bullet) {
            if rest.starts_with(char::is_whitespace) || rest.is_empty() {
                return Some(rest);
            }
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && digits <= 3 {
        let rest = &line[digits..];
        if let Some(after) = rest.strip_prefix(['.', ')']) {
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                return Some(after);
            }
        }
    }
    None
}

fn clean_item(item: &str) -> &str {
    let mut cut = item;
    let lower = cut.to_lowercase();
    // lowercasing can change byte offsets for some scripts; only cut when the
    // lowered text has the same length
    if lower.len() == cut.len() {
        if let Some(pos) = DELIMITERS.iter().filter_map(|d| lower.find(d)).min() {
            cut = &cut[..pos];
        }
    } else if let Some(pos) = DELIMITERS.iter().filter_map(|d| cut.find(d)).min() {
        cut = &cut[..pos];
    }
    cut.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Never fails: unextractable text yields an empty ranking.
pub fn parse_predictions(text: &str, normalizer: &Normalizer) -> ParsedPrediction {
    let lines: Vec<&str> = text.lines().collect();
    let mut items: Vec<&str> = lines.iter().filter_map(|l| strip_marker(l)).collect();
    if items.is_empty() {
        if let Some(first) = lines.iter().find(|l| !l.trim().is_empty()) {
            items.push(first);
        }
    }

    let mut ranked: Vec<String> = Vec::new();
    for item in items {
        let Ok(name) = normalizer.normalize(clean_item(item)) else {
            continue;
        };
        if !ranked.contains(&name) {
            ranked.push(name);
        }
    }
    ParsedPrediction {
        ranked,
        raw: text.to_string(),
    }
}

/// Renders a list the way the prompt asks for it: `1. a\n2. b`.
pub fn format_numbered<S: AsRef<str>>(items: &[S]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::default_normalizer;
    use proptest::prelude::*;

    fn parse(text: &str) -> Vec<String> {
        parse_predictions(text, default_normalizer()).ranked
    }

    #[test]
    fn numbered_answer() {
        assert_eq!(parse("1. lime"), vec!["lime"]);
    }

    #[test]
    fn bare_answer() {
        assert_eq!(parse("lime"), vec!["lime"]);
        assert_eq!(parse("\n  Lime.\nIt adds acidity."), vec!["lime"]);
    }

    #[test]
    fn dedups_after_normalization() {
        assert_eq!(
            parse("1. Lime\n2. Strawberry\n1. lime"),
            vec!["lime", "strawberry"]
        );
    }

    #[test]
    fn strips_bullets_and_explanations() {
        assert_eq!(parse("- Greek Yoghurt: tangy and thick"), vec!["greek yogurt"]);
        assert_eq!(parse("• honey because it is sweet"), vec!["honey"]);
        assert_eq!(parse("* **Seedless Watermelon**"), vec!["seedless watermelon"]);
        assert_eq!(parse("2) cream cheese (softened)"), vec!["cream cheese"]);
        assert_eq!(parse("Sure!\n1. butter\n2. margarine"), vec!["butter", "margarine"]);
    }

    #[test]
    fn unextractable_is_empty() {
        assert!(parse("").is_empty());
        assert!(parse("1. \n- ...").is_empty());
        assert!(parse("   \n\t").is_empty());
    }

    #[test]
    fn leading_quantity_is_not_a_marker() {
        assert_eq!(parse("7 up"), vec!["7 up"]);
    }

    fn canonical_list() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec("[a-z]{3,9}( [a-z]{3,9}){0,2}", 1..8).prop_map(|xs| {
            let mut out: Vec<String> = Vec::new();
            for x in xs {
                let c = default_normalizer().normalize(&x).unwrap();
                if !out.contains(&c) {
                    out.push(c);
                }
            }
            out
        })
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(xs in canonical_list()) {
            prop_assert_eq!(parse(&format_numbered(&xs)), xs);
        }

        #[test]
        fn total_on_arbitrary_text(text in any::<String>()) {
            let lines = text.lines().count().max(1);
            let p = parse_predictions(&text, default_normalizer());
            prop_assert!(p.ranked.len() <= lines);
            prop_assert!(p.ranked.iter().all(|r| !r.is_empty()));
        }
    }
}
