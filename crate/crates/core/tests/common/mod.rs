//! Oracles and fixtures shared by the integration tests and the acceptance
//! suite. Everything here is written independently of the library code it
//! checks.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wildlabel::annotate::{
    resolve_pair, resolve_catalog, sample_batch, AnnotationBatch, AnnotationResponse, Desk, ResolutionMethod, ResolveReport, ResolvedLabel,
};
use wildlabel::dataset::{assign_splits, SplitReport};
use wildlabel::catalog::{Catalog, ImageRecord};
use wildlabel::facegate::{encode_png, gate_catalog, FixtureDetector, GateReport};
use wildlabel::harvest::{self, FetchPolicy, FixtureAdapter};
use wildlabel::noisemodel::NoiseMatrix;
use wildlabel::taxonomy::{AnnotationCategory, ExpressionLabel, QuerySpec};
use wildlabel::trainer::{Classifier, ModelSpec, Target};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Local HTTP server

#[derive(Clone, Debug)]
pub struct Route {
    pub status: u16,
    pub body: Vec<u8>,
    /// Number of initial requests answered with 503 before `status`.
    pub fail_first: usize,
}

impl Route {
    pub fn ok(body: Vec<u8>) -> Self {
        Route { status: 200, body, fail_first: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Hit {
    pub path: String,
    pub at: Instant,
    pub user_agent: Option<String>,
}

/// Minimal HTTP/1.1 server: one thread per connection, `Connection: close`.
pub struct TestServer {
    pub addr: SocketAddr,
    routes: Arc<Mutex<HashMap<String, Route>>>,
    hits: Arc<Mutex<Vec<Hit>>>,
    served: Arc<Mutex<HashMap<String, usize>>>,
}

impl TestServer {
    pub fn start(routes: HashMap<String, Route>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let routes = Arc::new(Mutex::new(routes));
        let hits = Arc::new(Mutex::new(Vec::new()));
        let served = Arc::new(Mutex::new(HashMap::new()));
        let (r, h, s) = (routes.clone(), hits.clone(), served.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (r, h, s) = (r.clone(), h.clone(), s.clone());
                std::thread::spawn(move || {
                    let _ = handle(stream, &r, &h, &s);
                });
            }
        });
        TestServer { addr, routes, hits, served }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn hits(&self) -> Vec<Hit> {
        self.hits.lock().unwrap().clone()
    }

    pub fn hit_count(&self, path: &str) -> usize {
        self.hits.lock().unwrap().iter().filter(|h| h.path == path).count()
    }

    pub fn clear_hits(&self) {
        self.hits.lock().unwrap().clear();
    }

    pub fn set_route(&self, path: &str, route: Route) {
        self.routes.lock().unwrap().insert(path.to_string(), route);
    }
}

fn handle(
    stream: TcpStream,
    routes: &Mutex<HashMap<String, Route>>,
    hits: &Mutex<Vec<Hit>>,
    served: &Mutex<HashMap<String, usize>>,
) -> std::io::Result<()> {
    let at = Instant::now();
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut user_agent = None;
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header)? == 0 || header == "\r\n" {
            break;
        }
        if let Some((k, v)) = header.split_once(':') {
            if k.eq_ignore_ascii_case("user-agent") {
                user_agent = Some(v.trim().to_string());
            }
        }
    }
    hits.lock().unwrap().push(Hit { path: path.clone(), at, user_agent });
    let route = routes.lock().unwrap().get(&path).cloned();
    let n = {
        let mut s = served.lock().unwrap();
        let n = s.entry(path.clone()).or_insert(0);
        *n += 1;
        *n
    };
    let (status, body) = match route {
        Some(r) if n <= r.fail_first => (503, b"busy".to_vec()),
        Some(r) => (r.status, r.body),
        None => (404, b"missing".to_vec()),
    };
    let mut out = stream;
    write!(out, "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len())?;
    out.write_all(&body)?;
    out.flush()
}

/// Token bucket with capacity 1 refilled at `rate`: every run of `k + 1`
/// consecutive requests to one host spans at least `k / rate` seconds.
/// Checked over all pairs, not just neighbours. Returns the worst shortfall
/// in seconds (0 when the bound holds).
pub fn token_bucket_shortfall(times: &[f64], rate: f64) -> f64 {
    let mut t = times.to_vec();
    t.sort_by(f64::total_cmp);
    let mut worst: f64 = 0.0;
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            let needed = (j - i) as f64 / rate;
            worst = worst.max(needed - (t[j] - t[i]));
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Pipeline workspace

pub const ENGINES: [&str; 2] = ["alpha", "beta"];

pub fn solid_png(seed: u32, w: u32, h: u32) -> Vec<u8> {
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        image::Rgb([
            (seed.wrapping_mul(37) % 256) as u8,
            ((x * 5 + seed) % 256) as u8,
            ((y * 3 + seed * 7) % 256) as u8,
        ])
    });
    encode_png(&image::DynamicImage::ImageRgb8(img)).unwrap()
}

pub fn landmarks_json(x: f64, y: f64, w: f64, h: f64) -> serde_json::Value {
    let pts: Vec<[f64; 2]> = (0..66)
        .map(|i| {
            let t = i as f64 / 65.0;
            [x + w * (0.2 + 0.6 * t), y + h * (0.3 + 0.4 * (t * 6.0).sin().abs())]
        })
        .collect();
    serde_json::json!(pts)
}

/// How the fixture detector describes an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceKind {
    Landmarked,
    BoxOnly,
    NoFace,
}

#[derive(Clone, Debug)]
pub struct ImageFixture {
    pub path: String,
    pub bytes: Vec<u8>,
    pub faces: FaceKind,
}

/// Everything the hermetic pipeline reads: keywords, engine listings,
/// served images and face sidecars.
pub struct PipelineFixture {
    pub server: TestServer,
    pub keywords: std::path::PathBuf,
    pub fixtures: std::path::PathBuf,
    pub faces: std::path::PathBuf,
    pub queries: Vec<QuerySpec>,
    pub images: Vec<ImageFixture>,
    /// URL paths per (engine, query key).
    pub listings: HashMap<(String, String), Vec<String>>,
    pub bad_paths: Vec<String>,
}

const KEYWORDS: &str = "\
# emotion,language,query_text,english_translation
happy,en,happy face,happy face
happy,de,fröhliches gesicht,happy face
sad,en,sad face,sad face
sad,de,trauriges gesicht,sad face
surprise,en,surprised face,surprised face
fear,en,scared face,scared face
fear,de,ängstliches gesicht,scared face
disgust,en,disgusted face,disgusted face
anger,en,angry face,angry face
anger,de,wütendes gesicht,angry face
";

impl PipelineFixture {
    /// `per_query` distinct images per query and engine, with overlap
    /// between engines, one byte-identical pair under different URLs, one
    /// 404 and one non-image URL.
    pub fn build(root: &Path, per_query: usize, seed: u64) -> Self {
        let mut rng = rng(seed);
        let keywords = root.join("keywords.csv");
        std::fs::write(&keywords, KEYWORDS).unwrap();
        let kw = wildlabel::taxonomy::load_keywords(&keywords).unwrap();
        let queries = wildlabel::taxonomy::expand_query_templates(&kw, &["en", "de"]).unwrap().queries;
        let fixtures = root.join("fixtures");
        let faces = root.join("faces");
        std::fs::create_dir_all(&faces).unwrap();

        let mut routes = HashMap::new();
        let mut images = Vec::new();
        let mut listings = HashMap::new();
        let mut next = 0u32;
        for q in &queries {
            let mut own = Vec::new();
            for _ in 0..per_query {
                let path = format!("/img/{next}.png");
                let bytes = solid_png(next, 32, 32);
                let faces = match rng.random_range(0..10) {
                    0 => FaceKind::NoFace,
                    1 => FaceKind::BoxOnly,
                    _ => FaceKind::Landmarked,
                };
                next += 1;
                routes.insert(path.clone(), Route::ok(bytes.clone()));
                images.push(ImageFixture { path: path.clone(), bytes, faces });
                own.push(path);
            }
            // Engine beta returns the second half of alpha's list plus a few
            // of its own.
            let extra: Vec<String> = (0..2)
                .map(|_| {
                    let path = format!("/img/{next}.png");
                    let bytes = solid_png(next, 32, 32);
                    next += 1;
                    routes.insert(path.clone(), Route::ok(bytes.clone()));
                    images.push(ImageFixture { path: path.clone(), bytes, faces: FaceKind::Landmarked });
                    path
                })
                .collect();
            let beta: Vec<String> = own[per_query / 2..].iter().cloned().chain(extra).collect();
            listings.insert(("alpha".to_string(), q.key()), own);
            listings.insert(("beta".to_string(), q.key()), beta);
        }
        // Same bytes as image 0 under another URL.
        let dup = "/dup/copy-of-0.png".to_string();
        routes.insert(dup.clone(), Route::ok(images[0].bytes.clone()));
        images.push(ImageFixture { path: dup.clone(), bytes: images[0].bytes.clone(), faces: images[0].faces });
        let html = "/page.html".to_string();
        routes.insert(html.clone(), Route::ok(b"<html>not an image</html>".to_vec()));
        let missing = "/gone.png".to_string();
        listings.get_mut(&("alpha".to_string(), queries[0].key())).unwrap().extend([dup, html.clone(), missing.clone()]);

        let server = TestServer::start(routes);
        for ((engine, key), paths) in &listings {
            let dir = fixtures.join(engine);
            std::fs::create_dir_all(&dir).unwrap();
            let body: String = paths.iter().map(|p| format!("{}\n", server.url(p))).collect();
            std::fs::write(dir.join(format!("{key}.txt")), body).unwrap();
        }
        let mut written = std::collections::HashSet::new();
        for img in &images {
            let hash = wildlabel::digest::sha256_hex(&img.bytes);
            if !written.insert(hash.clone()) {
                continue;
            }
            let sidecar = match img.faces {
                FaceKind::NoFace => continue,
                FaceKind::BoxOnly => serde_json::json!([{ "box": [4, 4, 20, 20] }]),
                FaceKind::Landmarked => serde_json::json!([
                    { "box": [4, 4, 20, 20], "landmarks": landmarks_json(4.0, 4.0, 20.0, 20.0) },
                    { "box": [1, 1, 8, 8] },
                ]),
            };
            std::fs::write(faces.join(format!("{hash}.faces.json")), sidecar.to_string()).unwrap();
        }
        PipelineFixture { server, keywords, fixtures, faces, queries, images, listings, bad_paths: vec![html, missing] }
    }

    pub fn adapters(&self) -> Vec<FixtureAdapter> {
        ENGINES.iter().map(|e| FixtureAdapter::new(*e, &self.fixtures)).collect()
    }

    pub fn policy(&self, rate: f64) -> FetchPolicy {
        FetchPolicy {
            per_host_rate: rate,
            max_parallel: 4,
            timeout_secs: 5.0,
            retries: 1,
            backoff_base_secs: 0.05,
            backoff_factor: 2.0,
            user_agent: "wildlabel-test/1".into(),
        }
    }

    /// Image ids whose sidecar declares a landmarked face, computed straight
    /// from the fixture description.
    pub fn expected_kept(&self, catalog: &Catalog) -> std::collections::BTreeSet<String> {
        self.images
            .iter()
            .filter(|i| i.faces == FaceKind::Landmarked)
            .filter_map(|i| catalog.find_url(&self.server.url(&i.path)).map(|r| r.image_id.clone()))
            .collect()
    }
}

/// An annotator who names the intended emotion with probability `hit`,
/// otherwise a uniformly random category. Drives `desk` until exhausted.
pub fn annotate_all(desk: &mut Desk, annotator: &str, hit: f64, seed: u64) -> usize {
    let mut rng = rng(seed);
    let mut n = 0;
    while let Some(task) = desk.assign_next(annotator).unwrap() {
        let intended = desk.catalog().get(&task.image_id).unwrap().intended_emotion().unwrap();
        let category = if rng.random_bool(hit) {
            intended.to_category()
        } else {
            AnnotationCategory::ALL[rng.random_range(0..10)]
        };
        desk.submit(&task.image_id, annotator, category).unwrap();
        n += 1;
    }
    n
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct StageWrites {
    pub harvest: usize,
    pub download: usize,
    pub gate: usize,
    pub annotate: usize,
    pub resolve: usize,
    pub splits: usize,
}

impl StageWrites {
    pub fn total(&self) -> usize {
        self.harvest + self.download + self.gate + self.annotate + self.resolve + self.splits
    }
}

pub struct PipelineRun {
    pub catalog: Catalog,
    pub writes: StageWrites,
    pub harvest: harvest::HarvestReport,
    pub download: harvest::DownloadReport,
    pub gate: GateReport,
    pub batch: AnnotationBatch,
    pub responses: usize,
    pub resolve: ResolveReport,
    pub splits: SplitReport,
}

pub const PIPELINE_SEED: u64 = 42;
pub const PER_EMOTION: usize = 4;

/// harvest, download, gate, sample, double annotation, resolve, splits.
pub fn run_pipeline(workspace: &Path, fx: &PipelineFixture, rate: f64) -> PipelineRun {
    let mut catalog = Catalog::open(workspace).unwrap();
    let mut writes = StageWrites::default();
    let adapters = fx.adapters();
    let refs: Vec<&dyn harvest::EngineAdapter> = adapters.iter().map(|a| a as _).collect();
    let harvest = harvest::run_harvest(&fx.queries, &refs, 200, &mut catalog).unwrap();
    writes.harvest = harvest.writes;
    let download = harvest::download_pending(&mut catalog, &fx.policy(rate)).unwrap();
    writes.download = download.writes;
    let gate = gate_catalog(&mut catalog, &FixtureDetector::new(&fx.faces), 3).unwrap();
    writes.gate = gate.writes;
    let batch = sample_batch(catalog.records(), PER_EMOTION, PIPELINE_SEED);
    let before = catalog.writes();
    let mut desk = Desk::new(catalog, batch.clone()).unwrap();
    let responses = annotate_all(&mut desk, "ann-1", 0.6, 1) + annotate_all(&mut desk, "ann-2", 0.6, 2);
    let mut catalog = desk.into_catalog();
    writes.annotate = catalog.writes() - before;
    let resolve = resolve_catalog(&mut catalog, PIPELINE_SEED).unwrap();
    writes.resolve = resolve.writes;
    let splits = assign_splits(&mut catalog, 0.25, PIPELINE_SEED).unwrap();
    writes.splits = splits.writes;
    PipelineRun { catalog, writes, harvest, download, gate, batch, responses, resolve, splits }
}

// ---------------------------------------------------------------------------
// Resolution reference

/// The adjudication rule written as a direct case analysis over the two
/// responses. For a random pick only the candidate set is determined.
pub fn reference_resolution(
    a: AnnotationCategory,
    b: AnnotationCategory,
    intended: ExpressionLabel,
) -> (ResolutionMethod, Vec<AnnotationCategory>) {
    let wanted = AnnotationCategory::ALL[intended as usize];
    let matches = [a, b].iter().filter(|&&c| c == wanted).count();
    if a == b {
        (ResolutionMethod::Agreement, vec![a])
    } else if matches == 1 {
        (ResolutionMethod::QueryFavored, vec![wanted])
    } else {
        (ResolutionMethod::RandomPick, vec![a, b])
    }
}

/// Checks one label against the reference; `Err` describes the mismatch.
pub fn check_against_reference(
    label: &ResolvedLabel,
    a: AnnotationCategory,
    b: AnnotationCategory,
    intended: ExpressionLabel,
) -> Result<(), String> {
    let (method, candidates) = reference_resolution(a, b, intended);
    if label.method != method {
        return Err(format!("({a},{b},{intended}): method {:?}, expected {method:?}", label.method));
    }
    if !candidates.contains(&label.category) {
        return Err(format!("({a},{b},{intended}): category {} not in {candidates:?}", label.category));
    }
    if (method == ResolutionMethod::RandomPick) != label.rng_seed_used.is_some() {
        return Err(format!("({a},{b},{intended}): seed recording wrong"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gradient oracle

pub fn random_stochastic(rng: &mut impl Rng) -> NoiseMatrix {
    let mut rows = [[0.0; 7]; 7];
    for row in &mut rows {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = rng.random_range(0.01..1.0);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        let drift: f64 = 1.0 - row.iter().sum::<f64>();
        row[0] += drift;
    }
    NoiseMatrix::from_rows(rows).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    Plain,
    Forward,
}

/// Relative error `||g - g_fd|| / (||g|| + ||g_fd||)` (Euclidean norms)
/// between the analytic gradient of the mean batch loss and its central
/// finite difference with step 1e-5. Parameters and inputs are drawn from
/// `rng`.
pub fn gradient_rel_error(spec: ModelSpec, mode: LossMode, rng: &mut impl Rng) -> f64 {
    let mut model = spec.build();
    for p in model.params_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    let dim = spec.input_dim();
    let batch_size = rng.random_range(1..=6);
    let xs: Vec<Vec<f64>> = (0..batch_size).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let q = random_stochastic(rng);
    let labels: Vec<ExpressionLabel> = (0..batch_size).map(|_| ExpressionLabel::ALL[rng.random_range(0..7)]).collect();
    let targets: Vec<Target> = labels
        .iter()
        .map(|&l| match mode {
            LossMode::Plain => Target::Label(l),
            LossMode::Forward => Target::Forward { noisy: l, matrix: &q },
        })
        .collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let (_, analytic) = model.loss_and_gradient(&refs, &targets).unwrap();
    let h = 1e-5;
    let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    for k in 0..analytic.len() {
        let orig = model.params()[k];
        model.params_mut()[k] = orig + h;
        let (up, _) = model.loss_and_gradient(&refs, &targets).unwrap();
        model.params_mut()[k] = orig - h;
        let (down, _) = model.loss_and_gradient(&refs, &targets).unwrap();
        model.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        diff += (analytic[k] - numeric).powi(2);
        norm_a += analytic[k].powi(2);
        norm_n += numeric.powi(2);
    }
    let denom = norm_a.sqrt() + norm_n.sqrt();
    if denom == 0.0 { 0.0 } else { diff.sqrt() / denom }
}

/// Worst relative error over `batches` random batches for one model family.
pub fn gradient_oracle(hidden: Option<usize>, mode: LossMode, batches: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    (0..batches)
        .map(|_| {
            let input_dim = rng.random_range(2..=5);
            let spec = match hidden {
                None => ModelSpec::Affine { input_dim },
                Some(h) => ModelSpec::Mlp { input_dim, hidden: h },
            };
            gradient_rel_error(spec, mode, &mut rng)
        })
        .fold(0.0, f64::max)
}

pub fn elapsed_secs(start: Instant, t: Instant) -> f64 {
    t.duration_since(start).as_secs_f64()
}

pub fn sleep_ms(ms: u64) {
    std::thread::sleep(Duration::from_millis(ms));
}

// ---------------------------------------------------------------------------
// Record fixtures

pub fn query_for(e: Option<ExpressionLabel>) -> QuerySpec {
    let word = e.map_or("person", |e| e.name());
    QuerySpec {
        query_text: word.into(),
        language: "en".into(),
        english_translation: word.into(),
        intended_emotion: e,
        gender: None,
        age: None,
    }
}

/// A record carrying the given responses (annotators `a0`, `a1`, ...).
pub fn annotated_record(
    id: &str,
    intended: Option<ExpressionLabel>,
    responses: &[AnnotationCategory],
    resolved: Option<ResolvedLabel>,
) -> ImageRecord {
    let mut r = ImageRecord::new(id.into(), format!("http://fixture.invalid/{id}.png"));
    r.provenance.push(query_for(intended));
    r.annotations = responses
        .iter()
        .enumerate()
        .map(|(i, &category)| AnnotationResponse {
            category,
            annotator_id: format!("a{i}"),
            submitted_at: chrono::DateTime::UNIX_EPOCH,
        })
        .collect();
    r.resolved = resolved;
    r
}

pub fn random_category(rng: &mut impl Rng) -> AnnotationCategory {
    AnnotationCategory::ALL[rng.random_range(0..10)]
}

/// Inverse-CDF draw from unnormalized weights.
pub fn draw_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Appears in every query text of [`desk_fixture`].
pub const QUERY_MARKER: &str = "zqmarker";

/// A catalog of kept, landmarked images with `per_emotion[i]` records for
/// the i-th queried emotion, and a desk over all of them.
pub fn desk_fixture(dir: &Path, per_emotion: [usize; 6]) -> Desk {
    let mut cat = Catalog::open(dir).unwrap();
    let sidecar = serde_json::json!([{ "box": [4, 4, 20, 20], "landmarks": landmarks_json(4.0, 4.0, 20.0, 20.0) }]);
    let faces = wildlabel::facegate::parse_sidecar(sidecar.to_string().as_bytes(), "fixture").unwrap();
    let mut n = 0u32;
    for (e, &count) in ExpressionLabel::QUERIED.iter().zip(&per_emotion) {
        for _ in 0..count {
            let mut q = query_for(Some(*e));
            q.query_text = format!("{QUERY_MARKER} {} person", e.name());
            let id = cat.upsert_url(&format!("http://fixture.invalid/{n}.png"), &q).unwrap().image_id;
            let (hash, rel) = cat.store_blob(&solid_png(n, 32, 32)).unwrap();
            cat.update(&id, |r| {
                r.download_status = wildlabel::catalog::DownloadStatus::Downloaded;
                r.content_hash = Some(hash);
                r.blob_path = Some(rel);
                r.faces = faces.clone();
                r.gate = Some(wildlabel::catalog::GateDecision { kept: true, reason: None });
                Ok(())
            })
            .unwrap();
            n += 1;
        }
    }
    let max = per_emotion.iter().copied().max().unwrap_or(0);
    let batch = sample_batch(cat.records(), max, 7);
    Desk::new(cat, batch).unwrap()
}

// ---------------------------------------------------------------------------
// Statistics recount

/// Records with 0 to 3 responses, some without an intended query, resolved
/// when at least two responses exist.
pub fn random_records(seed: u64, n: usize) -> Vec<ImageRecord> {
    let mut rng = rng(seed);
    (0..n)
        .map(|i| {
            let intended = rng.random_bool(0.9).then(|| ExpressionLabel::ALL[rng.random_range(0..7)]);
            let k = rng.random_range(0..4);
            let responses: Vec<_> = (0..k).map(|_| random_category(&mut rng)).collect();
            let resolved = match (intended, responses.as_slice()) {
                (Some(e), [a, b, ..]) => Some(resolve_pair(*a, *b, e, i as u64)),
                _ => None,
            };
            annotated_record(&format!("r{i}"), intended, &responses, resolved)
        })
        .collect()
}

pub struct Recount {
    pub pairs: usize,
    pub agreed: usize,
    pub favored: usize,
    pub responses: [usize; 10],
    pub resolved: [usize; 10],
    pub kappa: Option<f64>,
}

pub fn recount(records: &[ImageRecord]) -> Recount {
    let mut table = [[0usize; 10]; 10];
    let mut out = Recount { pairs: 0, agreed: 0, favored: 0, responses: [0; 10], resolved: [0; 10], kappa: None };
    for r in records {
        for c in AnnotationCategory::ALL {
            out.responses[c.code()] += r.annotations.iter().filter(|a| a.category == c).count();
            out.resolved[c.code()] += r.resolved.as_ref().is_some_and(|l| l.category == c) as usize;
        }
        if r.annotations.len() >= 2 {
            let (a, b) = (r.annotations[0].category, r.annotations[1].category);
            table[a.code()][b.code()] += 1;
            out.pairs += 1;
            if a == b {
                out.agreed += 1;
            } else if let Some(e) = r.intended_emotion() {
                let wanted = AnnotationCategory::ALL[e as usize];
                if a == wanted || b == wanted {
                    out.favored += 1;
                }
            }
        }
    }
    if out.pairs > 0 {
        let n = out.pairs as f64;
        let po = (0..10).map(|i| table[i][i]).sum::<usize>() as f64 / n;
        let pe: f64 = (0..10)
            .map(|i| {
                let row: usize = table[i].iter().sum();
                let col: usize = (0..10).map(|j| table[j][i]).sum();
                row as f64 * col as f64 / (n * n)
            })
            .sum();
        out.kappa = (pe < 1.0).then(|| (po - pe) / (1.0 - pe));
    }
    out
}
