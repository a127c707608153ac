//! Search-engine harvesting and image download.
//!
//! Engines sit behind [`EngineAdapter`]. The bundled [`FixtureAdapter`]
//! reads `<root>/<engine>/<query-key>.txt`, one URL per line, where the key
//! is [`QuerySpec::key`]. The result cap applies per (query, engine) pair.
//!
//! [`download_pending`] fetches every pending record under a [`FetchPolicy`]:
//! requests to one host are spaced at least `1 / per_host_rate` seconds
//! apart, at most `max_parallel` are in flight, and transport failures,
//! 429 and 5xx responses are retried with jittered exponential backoff.
//! Workers only fetch; the calling thread does every catalog write.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::{mpsc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, DownloadStatus};
use crate::error::{Error, Result};
use crate::taxonomy::QuerySpec;

pub const DEFAULT_LIMIT: usize = 200;
pub const MAX_RETRIES: u32 = 5;
pub const USER_AGENT_ENV: &str = "WILDLABEL_UA";
pub const DEFAULT_USER_AGENT: &str = concat!("wildlabel/", env!("CARGO_PKG_VERSION"));
const MAX_BODY_BYTES: u64 = 64 * 1024 * 1024;

pub trait EngineAdapter: Send + Sync {
    fn name(&self) -> &str;

    /// At most `limit` URLs, in the engine's order.
    fn search(&self, query: &QuerySpec, limit: usize) -> Result<Vec<String>>;
}

#[derive(Debug, Clone)]
pub struct FixtureAdapter {
    engine: String,
    root: PathBuf,
}

impl FixtureAdapter {
    pub fn new(engine: impl Into<String>, root: impl Into<PathBuf>) -> Self {
        FixtureAdapter { engine: engine.into(), root: root.into() }
    }

    pub fn fixture_path(&self, query: &QuerySpec) -> PathBuf {
        self.root.join(&self.engine).join(format!("{}.txt", query.key()))
    }
}

impl EngineAdapter for FixtureAdapter {
    fn name(&self) -> &str {
        &self.engine
    }

    /// A missing fixture file means the engine returned nothing.
    fn search(&self, query: &QuerySpec, limit: usize) -> Result<Vec<String>> {
        let path = self.fixture_path(query);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .take(limit)
            .map(String::from)
            .collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineCounts {
    pub queries: usize,
    pub returned: usize,
    pub new_urls: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub failed_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestFailure {
    pub engine: String,
    pub query: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestReport {
    pub per_engine: BTreeMap<String, EngineCounts>,
    pub failures: Vec<HarvestFailure>,
    /// Some (query, engine) pair failed.
    pub partial: bool,
    pub writes: usize,
}

pub fn run_harvest(
    queries: &[QuerySpec],
    adapters: &[&dyn EngineAdapter],
    limit: usize,
    catalog: &mut Catalog,
) -> Result<HarvestReport> {
    if limit == 0 {
        return Err(Error::Invalid("limit must be at least 1".into()));
    }
    if !catalog.is_writable() {
        return Err(Error::Invalid("catalog opened read-only".into()));
    }
    let start_writes = catalog.writes();
    let mut report = HarvestReport::default();
    for query in queries {
        for adapter in adapters {
            let counts = report.per_engine.entry(adapter.name().to_string()).or_default();
            counts.queries += 1;
            let urls = match adapter.search(query, limit) {
                Ok(urls) => urls,
                Err(e) => {
                    log::warn!("{} failed on `{}`: {e}", adapter.name(), query.query_text);
                    counts.failed_queries += 1;
                    report.partial = true;
                    report.failures.push(HarvestFailure {
                        engine: adapter.name().to_string(),
                        query: query.query_text.clone(),
                        detail: e.to_string(),
                    });
                    continue;
                }
            };
            for url in urls.iter().take(limit) {
                counts.returned += 1;
                match catalog.upsert_url(url, query) {
                    Ok(o) if o.created => counts.new_urls += 1,
                    Ok(_) => counts.duplicates += 1,
                    Err(Error::MalformedUrl { url, reason }) => {
                        log::debug!("rejected {url}: {reason}");
                        counts.rejected += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    report.writes = catalog.writes() - start_writes;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchPolicy {
    /// Requests per second to any one host.
    pub per_host_rate: f64,
    pub max_parallel: usize,
    pub timeout_secs: f64,
    /// Extra attempts per URL after the first.
    pub retries: u32,
    pub backoff_base_secs: f64,
    pub backoff_factor: f64,
    pub user_agent: String,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        FetchPolicy {
            per_host_rate: 2.0,
            max_parallel: 8,
            timeout_secs: 15.0,
            retries: 3,
            backoff_base_secs: 0.5,
            backoff_factor: 2.0,
            user_agent: std::env::var(USER_AGENT_ENV).unwrap_or_else(|_| DEFAULT_USER_AGENT.to_string()),
        }
    }
}

impl FetchPolicy {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let bad = |m: &str| Err(Error::InvalidPolicy(m.to_string()));
        if !positive(self.per_host_rate) {
            return bad("per_host_rate must be positive");
        }
        if self.max_parallel == 0 {
            return bad("max_parallel must be positive");
        }
        if !positive(self.timeout_secs) {
            return bad("timeout must be positive");
        }
        if self.retries > MAX_RETRIES {
            return Err(Error::InvalidPolicy(format!("retries must be at most {MAX_RETRIES}")));
        }
        if !(self.backoff_base_secs.is_finite() && self.backoff_base_secs >= 0.0) || !positive(self.backoff_factor) {
            return bad("backoff base must be >= 0 and factor positive");
        }
        if self.user_agent.trim().is_empty() {
            return bad("user agent must be nonempty");
        }
        Ok(())
    }

    pub fn min_spacing(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.per_host_rate)
    }

    /// Delay before retry number `retry` (1-based), with ±20% jitter.
    pub fn backoff(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let nominal = self.backoff_base_secs * self.backoff_factor.powi(retry as i32 - 1);
        Duration::from_secs_f64(nominal * rng.random_range(0.8..=1.2))
    }
}

/// Image file signatures accepted as downloads.
pub fn looks_like_image(bytes: &[u8]) -> bool {
    bytes.starts_with(&[0xFF, 0xD8, 0xFF])
        || bytes.starts_with(b"\x89PNG\r\n\x1a\n")
        || bytes.starts_with(b"GIF87a")
        || bytes.starts_with(b"GIF89a")
        || (bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WEBP")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub host: String,
    pub url: String,
    /// Seconds since the start of the run.
    pub at_secs: f64,
    pub attempt: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DownloadReport {
    pub attempted: usize,
    pub downloaded: usize,
    pub failed: usize,
    pub failure_reasons: BTreeMap<String, usize>,
    pub requests: usize,
    pub writes: usize,
    pub elapsed_secs: f64,
    pub request_log: Vec<RequestLogEntry>,
}

/// Per-host spacing. A request claims its host only once the previous claim
/// is `spacing` old, so an oversleeping thread delays the ones behind it
/// instead of letting them bunch up.
struct HostSpacing {
    spacing: Duration,
    next_free: Mutex<HashMap<String, Instant>>,
}

impl HostSpacing {
    fn wait_turn(&self, host: &str) -> Instant {
        loop {
            let wait = {
                let mut map = self.next_free.lock().unwrap();
                let now = Instant::now();
                match map.get(host) {
                    Some(free) if *free > now => *free - now,
                    _ => {
                        map.insert(host.to_string(), now + self.spacing);
                        return now;
                    }
                }
            };
            std::thread::sleep(wait);
        }
    }
}

enum Attempt {
    Ok(Vec<u8>),
    Retryable(String),
    Final(String),
}

fn host_key(url: &str) -> String {
    match url::Url::parse(url) {
        Ok(u) => match (u.host_str(), u.port_or_known_default()) {
            (Some(h), Some(p)) => format!("{h}:{p}"),
            (Some(h), None) => h.to_string(),
            _ => url.to_string(),
        },
        Err(_) => url.to_string(),
    }
}

fn fetch_once(agent: &ureq::Agent, url: &str) -> Attempt {
    let mut response = match agent.get(url).call() {
        Ok(r) => r,
        Err(ureq::Error::Timeout(_)) => return Attempt::Retryable("timeout".into()),
        Err(e @ (ureq::Error::BadUri(_) | ureq::Error::HostNotFound)) => return Attempt::Final(e.to_string()),
        Err(e) => return Attempt::Retryable(format!("transport: {e}")),
    };
    let status = response.status().as_u16();
    if status == 429 || (500..600).contains(&status) {
        return Attempt::Retryable(format!("http {status}"));
    }
    if !(200..300).contains(&status) {
        return Attempt::Final(format!("http {status}"));
    }
    match response.body_mut().with_config().limit(MAX_BODY_BYTES).read_to_vec() {
        Ok(bytes) if looks_like_image(&bytes) => Attempt::Ok(bytes),
        Ok(_) => Attempt::Final("not an image".into()),
        Err(ureq::Error::Timeout(_)) => Attempt::Retryable("timeout".into()),
        Err(e) => Attempt::Retryable(format!("body: {e}")),
    }
}

struct Job {
    image_id: String,
    urls: Vec<String>,
}

type JobResult = (String, std::result::Result<Vec<u8>, String>, Vec<RequestLogEntry>);

fn run_job(job: &Job, agent: &ureq::Agent, policy: &FetchPolicy, spacing: &HostSpacing, start: Instant) -> JobResult {
    let mut log = Vec::new();
    let mut last_reason = String::from("no urls");
    let mut rng = rand::rng();
    for url in &job.urls {
        let host = host_key(url);
        for attempt in 0..=policy.retries {
            if attempt > 0 {
                std::thread::sleep(policy.backoff(attempt, &mut rng));
            }
            let issued = spacing.wait_turn(&host);
            log.push(RequestLogEntry {
                host: host.clone(),
                url: url.clone(),
                at_secs: issued.max(start).duration_since(start).as_secs_f64(),
                attempt,
            });
            match fetch_once(agent, url) {
                Attempt::Ok(bytes) => return (job.image_id.clone(), Ok(bytes), log),
                Attempt::Final(reason) => {
                    last_reason = reason;
                    break;
                }
                Attempt::Retryable(reason) => last_reason = reason,
            }
        }
    }
    (job.image_id.clone(), Err(last_reason), log)
}

/// Attempts every pending record; per-URL failures never abort the run.
pub fn download_pending(catalog: &mut Catalog, policy: &FetchPolicy) -> Result<DownloadReport> {
    policy.validate()?;
    if !catalog.is_writable() {
        return Err(Error::Invalid("catalog opened read-only".into()));
    }
    let jobs: VecDeque<Job> = catalog
        .records()
        .iter()
        .filter(|r| r.download_status == DownloadStatus::Pending)
        .map(|r| Job { image_id: r.image_id.clone(), urls: r.urls.clone() })
        .collect();
    let mut report = DownloadReport { attempted: jobs.len(), ..Default::default() };
    let start_writes = catalog.writes();
    let start = Instant::now();

    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(policy.timeout_secs)))
        .http_status_as_error(false)
        .user_agent(policy.user_agent.as_str())
        .build()
        .into();
    let spacing = HostSpacing { spacing: policy.min_spacing(), next_free: Mutex::new(HashMap::new()) };
    let queue = Mutex::new(jobs);
    let (tx, rx) = mpsc::channel::<JobResult>();

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..policy.max_parallel.min(report.attempted.max(1)) {
            let tx = tx.clone();
            let (queue, agent, spacing) = (&queue, &agent, &spacing);
            scope.spawn(move || loop {
                let Some(job) = queue.lock().unwrap().pop_front() else { break };
                if tx.send(run_job(&job, agent, policy, spacing, start)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (image_id, outcome, log) in rx {
            report.requests += log.len();
            report.request_log.extend(log);
            let status = match outcome {
                Ok(bytes) => {
                    let (hash, rel) = catalog.store_blob(&bytes)?;
                    report.downloaded += 1;
                    catalog.update(&image_id, |r| {
                        r.download_status = DownloadStatus::Downloaded;
                        r.content_hash = Some(hash);
                        r.blob_path = Some(rel);
                        Ok(())
                    })?;
                    continue;
                }
                Err(reason) => reason,
            };
            report.failed += 1;
            *report.failure_reasons.entry(status.clone()).or_default() += 1;
            catalog.update(&image_id, |r| {
                r.download_status = DownloadStatus::Failed(status);
                Ok(())
            })?;
        }
        Ok(())
    })?;
    report.request_log.sort_by(|a, b| a.at_secs.total_cmp(&b.at_secs));
    report.elapsed_secs = start.elapsed().as_secs_f64();
    report.writes = catalog.writes() - start_writes;
    Ok(report)
}

/// Checks that consecutive requests to each host are at least
/// `1 / rate` seconds apart, less `slack` seconds. Returns offending pairs.
pub fn spacing_violations(log: &[RequestLogEntry], rate: f64, slack: f64) -> Vec<(RequestLogEntry, RequestLogEntry)> {
    let mut by_host: BTreeMap<&str, Vec<&RequestLogEntry>> = BTreeMap::new();
    for e in log {
        by_host.entry(&e.host).or_default().push(e);
    }
    let gap = 1.0 / rate - slack;
    let mut out = Vec::new();
    for entries in by_host.values_mut() {
        entries.sort_by(|a, b| a.at_secs.total_cmp(&b.at_secs));
        for w in entries.windows(2) {
            if w[1].at_secs - w[0].at_secs < gap {
                out.push((w[0].clone(), w[1].clone()));
            }
        }
    }
    out
}
