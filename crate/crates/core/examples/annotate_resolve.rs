//! Double-annotation adjudication and the statistics computed over it.
//!
//! Builds an in-memory set of records whose two annotators follow the query
//! label some of the time, resolves them, and prints the agreement summary
//! and the query-by-annotation confusion table.
//!
//! `cargo run --example annotate_resolve`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wildlabel::annotate::{agreement_stats, query_confusion, resolve, resolve_pair, AnnotationResponse};
use wildlabel::catalog::ImageRecord;
use wildlabel::taxonomy::{AnnotationCategory, ExpressionLabel, QuerySpec};

const SEED: u64 = 42;

fn main() -> wildlabel::Result<()> {
    println!("single pairs:");
    for (a, b, q) in [
        (AnnotationCategory::Happy, AnnotationCategory::Happy, ExpressionLabel::Sad),
        (AnnotationCategory::Fear, AnnotationCategory::Surprise, ExpressionLabel::Fear),
        (AnnotationCategory::Anger, AnnotationCategory::Disgust, ExpressionLabel::Happy),
        (AnnotationCategory::NoFace, AnnotationCategory::Uncertain, ExpressionLabel::Sad),
    ] {
        let r = resolve_pair(a, b, q, 7);
        println!("  {:>9} + {:<9} queried {:<8} -> {:<9} ({:?})", a.name(), b.name(), q.name(), r.category.name(), r.method);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut records = Vec::new();
    for i in 0..600 {
        let q = ExpressionLabel::QUERIED[i % 6];
        let mut r = ImageRecord::new(format!("img{i:04}"), format!("http://example.invalid/{i}.jpg"));
        r.provenance.push(QuerySpec {
            query_text: format!("{} face", q.name()),
            language: "en".into(),
            english_translation: format!("{} face", q.name()),
            intended_emotion: Some(q),
            gender: None,
            age: None,
        });
        for annotator in ["ann-a", "ann-b"] {
            let category = if rng.random_bool(0.55) {
                q.to_category()
            } else {
                AnnotationCategory::ALL[rng.random_range(0..AnnotationCategory::ALL.len())]
            };
            r.annotations.push(AnnotationResponse {
                category,
                annotator_id: annotator.into(),
                submitted_at: chrono::Utc::now(),
            });
        }
        r.resolved = Some(resolve(&r, SEED)?);
        records.push(r);
    }

    let stats = agreement_stats(&records);
    println!(
        "\n{} doubly annotated, agreement {:.1}%, disagreements settled by the query {:.1}%",
        stats.double_annotated,
        stats.agreement_percent.unwrap_or(0.0),
        stats.query_favored_percent.unwrap_or(0.0)
    );
    println!("\n{}", query_confusion(&records).render());
    Ok(())
}
