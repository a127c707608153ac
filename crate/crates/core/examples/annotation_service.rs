//! Runs the annotation HTTP service over a small generated batch and drives
//! it with two scripted annotators, then prints the resulting statistics.
//!
//! Pass `--hold` to leave the service up for manual browsing.
//!
//! `cargo run --example annotation_service -- [--hold]`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wildlabel::annotate::service::{BackgroundService, ServiceOptions};
use wildlabel::annotate::{resolve_catalog, sample_batch, Desk};
use wildlabel::catalog::{Catalog, DownloadStatus, GateDecision};
use wildlabel::facegate::{encode_png, parse_sidecar, LANDMARK_COUNT};
use wildlabel::taxonomy::{ExpressionLabel, QuerySpec};

fn seeded_catalog(root: &std::path::Path) -> wildlabel::Result<Catalog> {
    let mut catalog = Catalog::open(root)?;
    let points: Vec<[f64; 2]> = (0..LANDMARK_COUNT).map(|i| [16.0 + i as f64 * 0.5, 30.0 + (i % 7) as f64]).collect();
    let faces = parse_sidecar(json!([{ "box": [8, 8, 48, 48], "landmarks": points }]).to_string().as_bytes(), "fixture")?;
    for (n, emotion) in ExpressionLabel::QUERIED.iter().cycle().take(18).enumerate() {
        let query = QuerySpec {
            query_text: format!("{} person", emotion.name()),
            language: "en".into(),
            english_translation: format!("{} person", emotion.name()),
            intended_emotion: Some(*emotion),
            gender: None,
            age: None,
        };
        let id = catalog.upsert_url(&format!("http://example.invalid/{n}.png"), &query)?.image_id;
        let img = image::RgbImage::from_fn(64, 64, |x, y| image::Rgb([(x * 4) as u8, (y * 4) as u8, (n * 13) as u8]));
        let (hash, rel) = catalog.store_blob(&encode_png(&image::DynamicImage::ImageRgb8(img))?)?;
        catalog.update(&id, |r| {
            r.download_status = DownloadStatus::Downloaded;
            r.content_hash = Some(hash);
            r.blob_path = Some(rel);
            r.faces = faces.clone();
            r.gate = Some(GateDecision { kept: true, reason: None });
            Ok(())
        })?;
    }
    Ok(catalog)
}

fn get_json(agent: &ureq::Agent, url: &str) -> Option<Value> {
    let mut resp = agent.get(url).call().ok()?;
    if resp.status() == 204 {
        return None;
    }
    serde_json::from_str(&resp.body_mut().read_to_string().ok()?).ok()
}

fn main() -> wildlabel::Result<()> {
    let hold = std::env::args().any(|a| a == "--hold");
    let dir = tempfile::tempdir().map_err(|e| wildlabel::Error::io(std::env::temp_dir(), e))?;
    let catalog = seeded_catalog(dir.path())?;
    let batch = sample_batch(catalog.records(), 3, 42);
    let desk = Desk::new(catalog, batch)?;
    let service = BackgroundService::start("127.0.0.1:0".parse().unwrap(), desk, ServiceOptions::default())
        .map_err(|e| wildlabel::Error::io(dir.path(), e))?;
    println!("service on {}", service.url("/"));

    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for annotator in ["ann-a", "ann-b"] {
        let mut done = 0;
        while let Some(task) = get_json(&agent, &service.url(&format!("/api/next?annotator={annotator}"))) {
            let image_id = task["image_id"].as_str().unwrap().to_string();
            let crop = agent.get(&service.url(task["crop_url"].as_str().unwrap())).call();
            let crop_len = crop.ok().and_then(|mut r| r.body_mut().read_to_vec().ok()).map_or(0, |b| b.len());
            let code = rng.random_range(0..7);
            let body = json!({ "image_id": image_id, "annotator": annotator, "category": code }).to_string();
            agent.post(&service.url("/api/annotations")).header("content-type", "application/json").send(body).ok();
            if done == 0 {
                println!("{annotator} first task {image_id}, crop {crop_len} bytes, {} options", task["categories"].as_array().unwrap().len());
            }
            done += 1;
        }
        println!("{annotator} answered {done}");
    }
    if let Some(stats) = get_json(&agent, &service.url("/api/stats")) {
        println!("stats: {}", serde_json::to_string_pretty(&stats["agreement"]).unwrap());
    }
    if hold {
        println!("serving until interrupted");
        loop {
            std::thread::park();
        }
    }

    let desk = service.stop().map_err(|e| wildlabel::Error::io(dir.path(), e))?;
    let mut catalog = desk.into_catalog();
    let report = resolve_catalog(&mut catalog, 42)?;
    println!("resolved {} images", report.resolved);
    Ok(())
}
