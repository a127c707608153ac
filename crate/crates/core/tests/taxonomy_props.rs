//! Keyword files and query expansion.

mod common;

use proptest::prelude::*;
use wildlabel::taxonomy::{
    expand_query_templates, group_keywords, load_keywords, parse_keyword_rows, ExpressionLabel, DEFAULT_LANGUAGES,
};

/// 208 concepts in all six languages plus two English-only ones.
fn fixture_1250() -> String {
    let mut out = String::from("# emotion,language,query_text,english_translation,gender,age\n");
    for c in 0..208 {
        let emotion = ExpressionLabel::QUERIED[c % 6].name();
        let english = format!("{emotion} face {c}");
        for lang in DEFAULT_LANGUAGES {
            let text = if lang == "en" { english.clone() } else { format!("{lang}-{emotion}-{c}") };
            let gender = ["", "woman", "man"][c % 3];
            out.push_str(&format!("{emotion},{lang},{text},{english},{gender}\n"));
        }
    }
    for c in 0..2 {
        out.push_str(&format!("fear,en,fearful person {c},fearful person {c}\n"));
    }
    out
}

#[test]
fn twelve_hundred_fifty_entries_give_as_many_queries() {
    let rows = parse_keyword_rows(&fixture_1250()).unwrap();
    assert_eq!(rows.len(), 1250);
    let expansion = expand_query_templates(&group_keywords(&rows), &DEFAULT_LANGUAGES).unwrap();
    assert_eq!(expansion.queries.len(), 1250);
    assert_eq!(expansion.skipped.len(), 10);
    for q in &expansion.queries {
        q.validate(&DEFAULT_LANGUAGES).unwrap();
    }
    let keys: std::collections::HashSet<String> = expansion.queries.iter().map(|q| q.key()).collect();
    assert_eq!(keys.len(), 1250);
}

#[test]
fn bundled_keyword_file_covers_six_languages() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/keywords.csv");
    let keywords = load_keywords(&path).unwrap();
    let full = keywords.iter().filter(|k| DEFAULT_LANGUAGES.iter().all(|l| k.translations.contains_key(*l))).count();
    assert!(full >= 5, "{full} keywords with all six languages");
    let expansion = expand_query_templates(&keywords, &DEFAULT_LANGUAGES).unwrap();
    for e in ExpressionLabel::QUERIED {
        assert!(expansion.queries.iter().any(|q| q.intended_emotion == Some(e)), "{e}");
    }
}

#[test]
fn rejects_malformed_rows() {
    assert!(parse_keyword_rows("joy,en,joy,joy").is_err());
    assert!(parse_keyword_rows("happy,en,a").is_err());
    assert!(parse_keyword_rows("happy,en,smile,grin").is_err());
    assert!(parse_keyword_rows("happy,de,,smile").is_err());
    assert!(expand_query_templates(&[], &[]).is_err());
}

proptest! {
    /// Output depends on the set of rows, not on their order.
    #[test]
    fn expansion_is_order_independent(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let text = fixture_1250();
        let mut lines: Vec<&str> = text.lines().skip(1).take(300).collect();
        let base = expand_query_templates(&group_keywords(&parse_keyword_rows(&lines.join("\n")).unwrap()), &["en", "de", "fa"]).unwrap();
        lines.shuffle(&mut common::rng(seed));
        let shuffled = expand_query_templates(&group_keywords(&parse_keyword_rows(&lines.join("\n")).unwrap()), &["fa", "en", "de"]).unwrap();
        prop_assert_eq!(base, shuffled);
    }
}
