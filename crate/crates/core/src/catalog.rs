//! On-disk store of harvested images and everything derived from them.
//!
//! Layout under a workspace root:
//!
//! ```text
//! manifest.jsonl          one ImageRecord per line, later lines supersede earlier ones
//! blobs/<h[0..2]>/<h>     image bytes named by their SHA-256 hex digest
//! catalog.lock            advisory lock held by the single writer
//! ```
//!
//! Every mutation appends the full updated record. [`Catalog::compact`]
//! rewrites the manifest with one line per record. A record whose content is
//! unchanged is never re-appended, so replaying an idempotent pipeline step
//! performs zero writes.
//!
//! URLs are normalized before deduplication: scheme and host lowercased,
//! default ports dropped, fragment removed, query string kept. A record's id
//! is the first 16 hex digits of the SHA-256 of its normalized URL; it is
//! assigned when the URL is first seen and never changes. Byte-identical
//! downloads from different URLs share one blob file and one `content_hash`.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotationResponse, ResolutionMethod, ResolvedLabel};
use crate::digest::{sha256_hex, short_hex};
use crate::error::{Error, Result};
use crate::facegate::FaceInstance;
use crate::taxonomy::{to_expression, ExpressionLabel, QuerySpec};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const BLOB_DIR: &str = "blobs";
pub const LOCK_FILE: &str = "catalog.lock";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "snake_case")]
pub enum DownloadStatus {
    Pending,
    Downloaded,
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Unassigned,
    Train,
    Test,
}

/// Outcome of face gating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub urls: Vec<String>,
    pub provenance: Vec<QuerySpec>,
    pub download_status: DownloadStatus,
    #[serde(default)]
    pub content_hash: Option<String>,
    #[serde(default)]
    pub blob_path: Option<String>,
    #[serde(default)]
    pub faces: Vec<FaceInstance>,
    #[serde(default)]
    pub gate: Option<GateDecision>,
    #[serde(default)]
    pub annotations: Vec<AnnotationResponse>,
    #[serde(default)]
    pub resolved: Option<ResolvedLabel>,
    #[serde(default)]
    pub split: Split,
}

impl ImageRecord {
    pub fn new(image_id: String, url: String) -> Self {
        ImageRecord {
            image_id,
            urls: vec![url],
            provenance: Vec::new(),
            download_status: DownloadStatus::Pending,
            content_hash: None,
            blob_path: None,
            faces: Vec::new(),
            gate: None,
            annotations: Vec::new(),
            resolved: None,
            split: Split::Unassigned,
        }
    }

    /// Intended emotion of the first query that returned this image.
    pub fn intended_emotion(&self) -> Option<ExpressionLabel> {
        self.provenance.iter().find_map(|q| q.intended_emotion)
    }

    pub fn is_kept(&self) -> bool {
        self.gate.as_ref().is_some_and(|g| g.kept)
    }

    pub fn is_downloaded(&self) -> bool {
        self.download_status == DownloadStatus::Downloaded
    }

    pub fn response_of(&self, annotator: &str) -> Option<&AnnotationResponse> {
        self.annotations.iter().find(|a| a.annotator_id == annotator)
    }

    /// Resolved label mapped into the training space.
    pub fn resolved_expression(&self) -> Option<ExpressionLabel> {
        self.resolved.as_ref().and_then(|r| to_expression(r.category))
    }
}

/// Dedup key of a URL (see module docs).
pub fn normalize_url(raw: &str) -> Result<String> {
    let malformed = |reason: &str| Error::MalformedUrl { url: raw.to_string(), reason: reason.to_string() };
    let mut url = url::Url::parse(raw.trim()).map_err(|e| malformed(&e.to_string()))?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(malformed("scheme must be http or https"));
    }
    if url.host_str().is_none_or(str::is_empty) {
        return Err(malformed("missing host"));
    }
    url.set_fragment(None);
    Ok(url.to_string())
}

pub fn url_image_id(normalized: &str) -> String {
    short_hex(normalized.as_bytes())
}

pub fn blob_rel_path(hash: &str) -> String {
    format!("{BLOB_DIR}/{}/{hash}", &hash[..2])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpsertOutcome {
    pub image_id: String,
    pub created: bool,
    /// Whether anything was written (new record or new provenance/URL).
    pub changed: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelStats {
    pub distinct_urls: usize,
    pub pending: usize,
    pub downloaded: usize,
    pub failed: usize,
    pub distinct_blobs: usize,
    pub gated: usize,
    pub kept: usize,
    pub annotated: usize,
    pub double_annotated: usize,
    pub resolved: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub image_id: Option<String>,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Urls,
    MissingBlob,
    HashMismatch,
    BlobPath,
    Io,
    Annotations,
    Resolution,
    Split,
    Face,
    Manifest,
}

/// An open workspace. Opening for writing takes the advisory lock; snapshots
/// skip it.
#[derive(Debug)]
pub struct Catalog {
    root: PathBuf,
    records: Vec<ImageRecord>,
    by_id: HashMap<String, usize>,
    by_url: HashMap<String, usize>,
    manifest: Option<File>,
    _lock: Option<File>,
    writes: usize,
}

impl Catalog {
    /// Opens (creating if needed) the workspace for writing.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join(BLOB_DIR)).map_err(|e| Error::io(&root, e))?;
        let lock_path = root.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| Error::io(&lock_path, e))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(Error::Locked(lock_path)),
            Err(fs::TryLockError::Error(e)) => return Err(Error::io(&lock_path, e)),
        }
        let mut catalog = Self::load(root)?;
        let path = catalog.manifest_path();
        catalog.manifest = Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?,
        );
        catalog._lock = Some(lock);
        Ok(catalog)
    }

    /// Read-only view of the manifest as it is on disk now.
    pub fn snapshot(root: impl AsRef<Path>) -> Result<Self> {
        Self::load(root.as_ref().to_path_buf())
    }

    fn load(root: PathBuf) -> Result<Self> {
        let mut catalog = Catalog {
            root,
            records: Vec::new(),
            by_id: HashMap::new(),
            by_url: HashMap::new(),
            manifest: None,
            _lock: None,
            writes: 0,
        };
        let path = catalog.manifest_path();
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(catalog),
            Err(e) => return Err(Error::io(&path, e)),
        };
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ImageRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse { line: lineno + 1, detail: format!("{MANIFEST_FILE}: {e}") })?;
            catalog.insert_in_memory(record);
        }
        Ok(catalog)
    }

    fn insert_in_memory(&mut self, record: ImageRecord) {
        let urls: Vec<String> = record.urls.iter().filter_map(|u| normalize_url(u).ok()).collect();
        let idx = match self.by_id.get(&record.image_id) {
            Some(&idx) => {
                self.records[idx] = record;
                idx
            }
            None => {
                self.by_id.insert(record.image_id.clone(), self.records.len());
                self.records.push(record);
                self.records.len() - 1
            }
        };
        for u in urls {
            self.by_url.insert(u, idx);
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn blob_abs_path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn is_writable(&self) -> bool {
        self.manifest.is_some()
    }

    /// Manifest lines appended since opening.
    pub fn writes(&self) -> usize {
        self.writes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in first-seen order.
    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.by_id.get(image_id).map(|&i| &self.records[i])
    }

    pub fn find_url(&self, url: &str) -> Option<&ImageRecord> {
        let key = normalize_url(url).ok()?;
        self.by_url.get(&key).map(|&i| &self.records[i])
    }

    fn append(&mut self, record: &ImageRecord) -> Result<()> {
        let path = self.manifest_path();
        let file = self
            .manifest
            .as_mut()
            .ok_or_else(|| Error::Invalid("catalog opened read-only".into()))?;
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        file.write_all(&line).map_err(|e| Error::io(&path, e))?;
        self.writes += 1;
        Ok(())
    }

    /// Records `url` as returned by `query`. Idempotent per (url, query).
    pub fn upsert_url(&mut self, url: &str, query: &QuerySpec) -> Result<UpsertOutcome> {
        let key = normalize_url(url)?;
        let raw = url.trim().to_string();
        if let Some(&idx) = self.by_url.get(&key) {
            let mut record = self.records[idx].clone();
            let mut changed = false;
            if !record.urls.contains(&raw) {
                record.urls.push(raw);
                changed = true;
            }
            if !record.provenance.contains(query) {
                record.provenance.push(query.clone());
                changed = true;
            }
            let image_id = record.image_id.clone();
            if changed {
                self.put(record)?;
            }
            return Ok(UpsertOutcome { image_id, created: false, changed });
        }
        let image_id = url_image_id(&key);
        let mut record = ImageRecord::new(image_id.clone(), raw);
        record.provenance.push(query.clone());
        self.put(record)?;
        Ok(UpsertOutcome { image_id, created: true, changed: true })
    }

    /// Stores a record, appending to the manifest only if it changed.
    /// Returns whether a write happened.
    pub fn put(&mut self, record: ImageRecord) -> Result<bool> {
        if self.get(&record.image_id) == Some(&record) {
            return Ok(false);
        }
        self.append(&record)?;
        self.insert_in_memory(record);
        Ok(true)
    }

    /// Applies `f` to a copy of the record and stores the result.
    pub fn update<F>(&mut self, image_id: &str, f: F) -> Result<bool>
    where
        F: FnOnce(&mut ImageRecord) -> Result<()>,
    {
        let mut record = self
            .get(image_id)
            .cloned()
            .ok_or_else(|| Error::UnknownImage(image_id.to_string()))?;
        f(&mut record)?;
        self.put(record)
    }

    /// Writes bytes into the blob tree (no-op when the blob exists) and
    /// returns `(content_hash, relative_path)`.
    pub fn store_blob(&self, bytes: &[u8]) -> Result<(String, String)> {
        let hash = sha256_hex(bytes);
        let rel = blob_rel_path(&hash);
        let abs = self.root.join(&rel);
        if !abs.exists() {
            let dir = abs.parent().expect("blob has parent");
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let tmp = abs.with_extension("tmp");
            fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, &abs).map_err(|e| Error::io(&abs, e))?;
        }
        Ok((hash, rel))
    }

    pub fn read_blob(&self, record: &ImageRecord) -> Result<Vec<u8>> {
        let rel = record
            .blob_path
            .as_deref()
            .ok_or_else(|| Error::NotReady(format!("{} has no blob", record.image_id)))?;
        let abs = self.root.join(rel);
        fs::read(&abs).map_err(|e| Error::io(&abs, e))
    }

    /// Rewrites the manifest with exactly one line per record.
    pub fn compact(&mut self) -> Result<()> {
        if self.manifest.is_none() {
            return Err(Error::Invalid("catalog opened read-only".into()));
        }
        let path = self.manifest_path();
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = std::io::BufWriter::new(File::create(&tmp).map_err(|e| Error::io(&tmp, e))?);
            for record in &self.records {
                serde_json::to_writer(&mut out, record)?;
                out.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
            }
            out.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        self.manifest = Some(
            OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?,
        );
        Ok(())
    }

    pub fn funnel_stats(&self) -> FunnelStats {
        let mut stats = FunnelStats { distinct_urls: self.by_url.len(), ..Default::default() };
        let mut blobs = std::collections::HashSet::new();
        for r in &self.records {
            match r.download_status {
                DownloadStatus::Pending => stats.pending += 1,
                DownloadStatus::Downloaded => stats.downloaded += 1,
                DownloadStatus::Failed(_) => stats.failed += 1,
            }
            if let Some(h) = &r.content_hash {
                blobs.insert(h.as_str());
            }
            stats.gated += r.gate.is_some() as usize;
            stats.kept += r.is_kept() as usize;
            stats.annotated += !r.annotations.is_empty() as usize;
            stats.double_annotated += (r.annotations.len() >= 2) as usize;
            stats.resolved += r.resolved.is_some() as usize;
        }
        stats.distinct_blobs = blobs.len();
        stats
    }

    /// Re-hashes blobs and re-checks every record invariant.
    pub fn integrity_check(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |id: &str, kind, detail: String| {
            out.push(Violation { image_id: Some(id.to_string()), kind, detail })
        };
        let mut hash_cache: HashMap<String, std::result::Result<String, String>> = HashMap::new();
        for r in &self.records {
            let id = r.image_id.as_str();
            if r.urls.is_empty() {
                push(id, ViolationKind::Urls, "no urls".into());
            }
            let mut seen = std::collections::HashSet::new();
            for u in &r.urls {
                if !seen.insert(u) {
                    push(id, ViolationKind::Urls, format!("duplicate url {u}"));
                }
                if let Err(e) = normalize_url(u) {
                    push(id, ViolationKind::Urls, e.to_string());
                }
            }
            if r.is_downloaded() {
                match (&r.content_hash, &r.blob_path) {
                    (Some(hash), Some(rel)) => {
                        if hash.len() < 2 || *rel != blob_rel_path(hash) {
                            push(id, ViolationKind::BlobPath, format!("blob path {rel} does not match hash {hash}"));
                        }
                        let actual = hash_cache.entry(rel.clone()).or_insert_with(|| {
                            fs::read(self.root.join(rel)).map(|b| sha256_hex(&b)).map_err(|e| e.to_string())
                        });
                        match actual {
                            Ok(actual) if actual != hash => push(
                                id,
                                ViolationKind::HashMismatch,
                                format!("blob {rel} hashes to {actual}, expected {hash}"),
                            ),
                            Ok(_) => {}
                            Err(e) => push(id, ViolationKind::Io, format!("reading {rel}: {e}")),
                        }
                    }
                    _ => push(id, ViolationKind::MissingBlob, "downloaded without content hash and blob path".into()),
                }
            }
            let mut annotators = std::collections::HashSet::new();
            for a in &r.annotations {
                if !annotators.insert(a.annotator_id.as_str()) {
                    push(id, ViolationKind::Annotations, format!("two responses from {}", a.annotator_id));
                }
            }
            if let Some(res) = &r.resolved {
                if r.annotations.len() < 2 {
                    push(
                        id,
                        ViolationKind::Resolution,
                        format!("resolved with {} annotation(s)", r.annotations.len()),
                    );
                } else if let Err(detail) = check_resolution(res, r) {
                    push(id, ViolationKind::Resolution, detail);
                }
            }
            match r.split {
                Split::Unassigned => {}
                _ if r.resolved.is_some() => {
                    if r.resolved_expression().is_none() {
                        push(id, ViolationKind::Split, "split assigned to a non-expression label".into());
                    }
                }
                // Noisy pool: unannotated, labeled by its query.
                _ if r.annotations.is_empty() && r.intended_emotion().is_some() => {}
                _ => push(id, ViolationKind::Split, "split assigned without a usable label".into()),
            }
            for (i, face) in r.faces.iter().enumerate() {
                if let Err(e) = face.validate() {
                    push(id, ViolationKind::Face, format!("face {i}: {e}"));
                }
            }
        }
        out
    }
}

/// Checks a resolved label against the first two responses.
fn check_resolution(res: &ResolvedLabel, record: &ImageRecord) -> std::result::Result<(), String> {
    let (a, b) = (record.annotations[0].category, record.annotations[1].category);
    let intended = record.intended_emotion().map(|e| e.to_category());
    match res.method {
        ResolutionMethod::Agreement if a == b && res.category == a => Ok(()),
        ResolutionMethod::QueryFavored
            if a != b && Some(res.category) == intended && (a == res.category) != (b == res.category) =>
        {
            Ok(())
        }
        ResolutionMethod::RandomPick
            if a != b && (res.category == a || res.category == b) && res.rng_seed_used.is_some() =>
        {
            Ok(())
        }
        m => Err(format!("{m:?} resolution to {} inconsistent with responses ({a}, {b})", res.category)),
    }
}
