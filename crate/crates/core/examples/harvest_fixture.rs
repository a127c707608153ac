//! Harvest and download against local stand-ins: engine result lists come
//! from fixture files and images from a throwaway HTTP server on loopback.
//!
//! `cargo run --example harvest_fixture`

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;

use wildlabel::catalog::Catalog;
use wildlabel::harvest::{download_pending, run_harvest, EngineAdapter, FetchPolicy, FixtureAdapter};
use wildlabel::taxonomy::{expand_query_templates, load_keywords};

/// Answers `/ok/*` with a tiny PNG and everything else with 404.
fn serve_images(listener: TcpListener) {
    let png: &[u8] = &[
        0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 0, 0, 0, 0x0d, b'I', b'H', b'D', b'R', 0, 0, 0, 1, 0, 0, 0,
        1, 8, 2, 0, 0, 0, 0x90, 0x77, 0x53, 0xde,
    ];
    for stream in listener.incoming().flatten() {
        let mut line = String::new();
        let mut reader = BufReader::new(&stream);
        if reader.read_line(&mut line).is_err() {
            continue;
        }
        while let Ok(n) = reader.read_line(&mut String::new()) {
            if n <= 2 {
                break;
            }
        }
        let path = line.split_whitespace().nth(1).unwrap_or("/");
        // Make each body distinct so blobs are not shared.
        let (status, body) = if path.starts_with("/ok/") { (200, [png, path.as_bytes()].concat()) } else { (404, b"gone".to_vec()) };
        let mut out = &stream;
        let _ = write!(out, "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len());
        let _ = out.write_all(&body);
    }
}

fn main() -> wildlabel::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| wildlabel::Error::io(std::env::temp_dir(), e))?;
    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| wildlabel::Error::io(dir.path(), e))?;
    let base = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || serve_images(listener));

    let keywords = load_keywords(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/keywords.csv"))?;
    let expansion = expand_query_templates(&keywords, &["en"])?;
    let queries = &expansion.queries[..3];

    let engines = [FixtureAdapter::new("alpha", dir.path().join("fixtures")), FixtureAdapter::new("beta", dir.path().join("fixtures"))];
    for (e, engine) in engines.iter().enumerate() {
        for (i, q) in queries.iter().enumerate() {
            let path = engine.fixture_path(q);
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            // Both engines return item 0 of each query; one link per engine is dead.
            let lines = [format!("{base}/ok/{i}-0.png"), format!("{base}/ok/{i}-{e}1.png"), format!("{base}/missing/{i}-{e}")];
            std::fs::write(path, lines.join("\n")).unwrap();
        }
    }
    let adapters: Vec<&dyn EngineAdapter> = engines.iter().map(|a| a as &dyn EngineAdapter).collect();

    let mut catalog = Catalog::open(dir.path().join("catalog"))?;
    let harvest = run_harvest(queries, &adapters, 50, &mut catalog)?;
    for (engine, counts) in &harvest.per_engine {
        println!("harvest {engine}: {} returned, {} new, {} already known", counts.returned, counts.new_urls, counts.duplicates);
    }

    let policy = FetchPolicy { per_host_rate: 10.0, retries: 1, backoff_base_secs: 0.05, ..FetchPolicy::default() };
    let download = download_pending(&mut catalog, &policy)?;
    println!(
        "download: {} ok, {} failed {:?}, {} requests in {:.2}s",
        download.downloaded, download.failed, download.failure_reasons, download.requests, download.elapsed_secs
    );
    for entry in download.request_log.iter().take(5) {
        println!("  {:>6.3}s {}", entry.at_secs, entry.url);
    }

    let again = download_pending(&mut catalog, &policy)?;
    println!("second download pass: {} requests, {} writes", again.requests, again.writes);
    println!("funnel: {:?}", catalog.funnel_stats());
    Ok(())
}
