//! Face gating and registered crops on a handful of drawn images.
//!
//! A fixture detector reads face boxes and landmarks from JSON sidecars
//! named after each image's content hash. Kept faces are cropped to a
//! grayscale tensor and written out as PNGs.
//!
//! `cargo run --example face_gate_crop -- [out_dir]`

use image::{DynamicImage, Rgb, RgbImage};
use wildlabel::catalog::{Catalog, DownloadStatus};
use wildlabel::digest::sha256_hex;
use wildlabel::facegate::{decode, encode_png, gate_catalog, register_crop, CropOptions, FixtureDetector, LANDMARK_COUNT};
use wildlabel::taxonomy::{ExpressionLabel, QuerySpec};

/// A light disc on a dark background, standing in for a face.
fn disc(seed: u32) -> DynamicImage {
    let img = RgbImage::from_fn(96, 80, |x, y| {
        let (dx, dy) = (x as f64 - 48.0, y as f64 - 40.0);
        if dx * dx + dy * dy < 900.0 {
            Rgb([200, 170 + (seed * 20) as u8, 150])
        } else {
            Rgb([20, 20, (seed * 40) as u8])
        }
    });
    DynamicImage::ImageRgb8(img)
}

fn landmarks(x: f64, y: f64, size: f64) -> Vec<[f64; 2]> {
    (0..LANDMARK_COUNT)
        .map(|i| {
            let t = i as f64 / (LANDMARK_COUNT - 1) as f64;
            [x + size * (0.2 + 0.6 * t), y + size * (0.35 + 0.3 * (t * 9.0).cos().abs())]
        })
        .collect()
}

fn main() -> wildlabel::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "face_gate_crops".into()));
    let work = tempfile::tempdir().map_err(|e| wildlabel::Error::io(std::env::temp_dir(), e))?;
    let sidecars = work.path().join("faces");
    std::fs::create_dir_all(&sidecars).map_err(|e| wildlabel::Error::io(&sidecars, e))?;
    std::fs::create_dir_all(&out).map_err(|e| wildlabel::Error::io(&out, e))?;

    let mut catalog = Catalog::open(work.path().join("catalog"))?;
    let query = QuerySpec {
        query_text: "surprised face".into(),
        language: "en".into(),
        english_translation: "surprised face".into(),
        intended_emotion: Some(ExpressionLabel::Surprise),
        gender: None,
        age: None,
    };
    // 0: landmarked face, 1: box without landmarks, 2: nothing detected, 3: corrupt bytes.
    for i in 0..4u32 {
        let bytes = if i == 3 { b"\x89PNG truncated".to_vec() } else { encode_png(&disc(i))? };
        let sidecar = match i {
            0 => serde_json::json!([{ "box": [18, 10, 60, 60], "landmarks": landmarks(18.0, 10.0, 60.0) }]),
            1 => serde_json::json!([{ "box": [18, 10, 60, 60] }]),
            _ => serde_json::json!([]),
        };
        let path = FixtureDetector::sidecar_path(&sidecars, &sha256_hex(&bytes));
        std::fs::write(&path, sidecar.to_string()).map_err(|e| wildlabel::Error::io(&path, e))?;
        let id = catalog.upsert_url(&format!("http://example.invalid/{i}.png"), &query)?.image_id;
        let (hash, rel) = catalog.store_blob(&bytes)?;
        catalog.update(&id, |r| {
            r.download_status = DownloadStatus::Downloaded;
            r.content_hash = Some(hash);
            r.blob_path = Some(rel);
            Ok(())
        })?;
    }

    let report = gate_catalog(&mut catalog, &FixtureDetector::new(&sidecars), 2)?;
    println!("gated {}: kept {}, dropped {}", report.examined, report.kept, report.dropped);

    let opts = CropOptions { out_size: 48, margin: 0.1, grayscale: true, align_eyes: true };
    for r in catalog.records() {
        let gate = r.gate.as_ref().unwrap();
        println!("{} kept={} reason={:?} faces={}", r.urls[0], gate.kept, gate.reason, r.faces.len());
        if !gate.kept {
            continue;
        }
        let img = decode(&catalog.read_blob(r)?)?;
        for (k, face) in r.faces.iter().enumerate().filter(|(_, f)| f.has_landmarks()) {
            let crop = register_crop(&img, face, &opts)?;
            let path = out.join(format!("{}-{k}.png", r.image_id));
            std::fs::write(&path, encode_png(&crop.to_image())?).map_err(|e| wildlabel::Error::io(&path, e))?;
            println!("  crop {:?}, center value {:.3} -> {}", crop.shape(), crop.at(24, 24, 0), path.display());
        }
    }
    Ok(())
}
