//! Face detection behind a pluggable interface, the keep rule, and
//! registered face crops.
//!
//! An image is kept iff the detector reports at least one face carrying a
//! full set of 66 landmarks. Landmark index semantics are opaque except for
//! the optional eye alignment, which assumes the common layout where points
//! 36..42 and 42..48 outline the two eyes.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::{DynamicImage, GenericImageView};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, GateDecision, ImageRecord};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

pub const LANDMARK_COUNT: usize = 66;
pub const MIN_CROP_SIZE: u32 = 8;
pub const DECODE_FAILURE: &str = "decode failure";

/// Pixel box, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        BoundingBox { x, y, width, height }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.width, self.height].iter().all(|v| v.is_finite());
        if !finite || self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::Invalid(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn validate_within(&self, width: u32, height: u32) -> Result<()> {
        self.validate()?;
        let overlaps = self.x < width as f64 && self.y < height as f64 && self.x + self.width > 0.0 && self.y + self.height > 0.0;
        if !overlaps {
            return Err(Error::Invalid(format!("box {self:?} lies outside the {width}x{height} image")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::Invalid(format!("expected {LANDMARK_COUNT} landmarks, found {}", points.len())));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite landmark coordinate".into()));
        }
        Ok(LandmarkSet { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    fn centroid(&self, range: std::ops::Range<usize>) -> [f64; 2] {
        let n = range.len() as f64;
        let (sx, sy) = self.points[range].iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
        [sx / n, sy / n]
    }

    /// Angle (radians) of the line between the two eye centroids.
    pub fn eye_angle(&self) -> f64 {
        let left = self.centroid(36..42);
        let right = self.centroid(42..48);
        (right[1] - left[1]).atan2(right[0] - left[0])
    }
}

impl TryFrom<Vec<[f64; 2]>> for LandmarkSet {
    type Error = Error;

    fn try_from(points: Vec<[f64; 2]>) -> Result<Self> {
        LandmarkSet::new(points)
    }
}

impl From<LandmarkSet> for Vec<[f64; 2]> {
    fn from(set: LandmarkSet) -> Self {
        set.points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceInstance {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default)]
    pub landmarks: Option<LandmarkSet>,
    pub detector_name: String,
}

impl FaceInstance {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()
    }

    pub fn has_landmarks(&self) -> bool {
        self.landmarks.is_some()
    }
}

/// One face entry of a sidecar file: `{"box": [x, y, w, h], "landmarks": [[x, y], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarFace {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<Vec<[f64; 2]>>,
}

pub fn parse_sidecar(json: &[u8], detector: &str) -> Result<Vec<FaceInstance>> {
    let faces: Vec<SidecarFace> = serde_json::from_slice(json)?;
    faces
        .into_iter()
        .map(|f| {
            let [x, y, w, h] = f.bbox;
            let bbox = BoundingBox::new(x, y, w, h);
            bbox.validate()?;
            Ok(FaceInstance {
                bbox,
                landmarks: f.landmarks.map(LandmarkSet::new).transpose()?,
                detector_name: detector.to_string(),
            })
        })
        .collect()
}

pub trait FaceDetector: Send + Sync {
    fn name(&self) -> &str;

    /// Must be deterministic for fixed input bytes.
    fn detect(&self, image: &[u8]) -> Result<Vec<FaceInstance>>;
}

/// Reads precomputed detections from `<dir>/<sha256>.faces.json` or
/// `<dir>/<sha256[0..2]>/<sha256>.faces.json`. Missing sidecar means no faces.
#[derive(Debug, Clone)]
pub struct FixtureDetector {
    dir: PathBuf,
}

impl FixtureDetector {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureDetector { dir: dir.into() }
    }

    pub fn sidecar_path(dir: &Path, hash: &str) -> PathBuf {
        dir.join(format!("{hash}.faces.json"))
    }
}

impl FaceDetector for FixtureDetector {
    fn name(&self) -> &str {
        "fixture"
    }

    fn detect(&self, image: &[u8]) -> Result<Vec<FaceInstance>> {
        let hash = sha256_hex(image);
        let candidates = [
            Self::sidecar_path(&self.dir, &hash),
            Self::sidecar_path(&self.dir.join(&hash[..2]), &hash),
        ];
        for path in candidates {
            match std::fs::read(&path) {
                Ok(bytes) => return parse_sidecar(&bytes, self.name()),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Ok(Vec::new())
    }
}

/// Runs a shell command per image: PNG bytes on stdin, sidecar JSON on stdout.
#[derive(Debug, Clone)]
pub struct ExternalDetector {
    command: String,
}

impl ExternalDetector {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalDetector { command: command.into() }
    }
}

impl FaceDetector for ExternalDetector {
    fn name(&self) -> &str {
        "external"
    }

    fn detect(&self, image: &[u8]) -> Result<Vec<FaceInstance>> {
        let img = decode(image)?;
        let png = encode_png(&img)?;
        let fail = |detail: String| Error::Detector { detector: self.command.clone(), detail };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&png));
        let output = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        // A detector may exit without reading all of stdin; only its status matters.
        let _ = writer.join();
        if !output.status.success() {
            return Err(fail(format!("{}: {}", output.status, String::from_utf8_lossy(&output.stderr).trim())));
        }
        parse_sidecar(&output.stdout, self.name())
    }
}

pub fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))
}

pub fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub decision: GateDecision,
    pub faces: Vec<FaceInstance>,
}

/// Keep iff at least one detected face carries landmarks.
pub fn gate(record: &ImageRecord, bytes: &[u8], detector: &dyn FaceDetector) -> Result<GateOutcome> {
    if !record.is_downloaded() {
        return Err(Error::NotReady(format!("{} is not downloaded", record.image_id)));
    }
    let img = match decode(bytes) {
        Ok(img) => img,
        Err(_) => {
            return Ok(GateOutcome {
                decision: GateDecision { kept: false, reason: Some(DECODE_FAILURE.into()) },
                faces: Vec::new(),
            })
        }
    };
    let (w, h) = img.dimensions();
    let faces: Vec<FaceInstance> = detector
        .detect(bytes)?
        .into_iter()
        .filter(|f| f.bbox.validate_within(w, h).is_ok())
        .collect();
    let decision = if faces.iter().any(FaceInstance::has_landmarks) {
        GateDecision { kept: true, reason: None }
    } else if faces.is_empty() {
        GateDecision { kept: false, reason: Some("no face".into()) }
    } else {
        GateDecision { kept: false, reason: Some("no landmarks".into()) }
    };
    Ok(GateOutcome { decision, faces })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GateReport {
    pub examined: usize,
    pub kept: usize,
    pub dropped: usize,
    pub writes: usize,
    pub errors: Vec<(String, String)>,
}

/// Gates every downloaded record. Detection runs on `threads` workers;
/// results are written through the catalog by the calling thread.
pub fn gate_catalog(catalog: &mut Catalog, detector: &dyn FaceDetector, threads: usize) -> Result<GateReport> {
    let todo: Vec<ImageRecord> = catalog.records().iter().filter(|r| r.is_downloaded()).cloned().collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<GateOutcome>)>> = Mutex::new(Vec::new());
    let cat: &Catalog = catalog;
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(record) = todo.get(i) else { break };
                let outcome = cat.read_blob(record).and_then(|bytes| gate(record, &bytes, detector));
                results.lock().unwrap().push((i, outcome));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);

    let mut report = GateReport { examined: todo.len(), ..Default::default() };
    for (i, outcome) in results {
        let id = &todo[i].image_id;
        match outcome {
            Ok(outcome) => {
                if outcome.decision.kept {
                    report.kept += 1;
                } else {
                    report.dropped += 1;
                }
                let wrote = catalog.update(id, |r| {
                    r.faces = outcome.faces;
                    r.gate = Some(outcome.decision);
                    Ok(())
                })?;
                report.writes += wrote as usize;
            }
            Err(e) => report.errors.push((id.clone(), e.to_string())),
        }
    }
    Ok(report)
}

/// Row-major `size x size x channels` tensor with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CropTensor {
    pub size: u32,
    pub channels: u32,
    pub data: Vec<f64>,
}

impl CropTensor {
    pub fn shape(&self) -> (u32, u32, u32) {
        (self.size, self.size, self.channels)
    }

    pub fn at(&self, row: u32, col: u32, channel: u32) -> f64 {
        self.data[((row * self.size + col) * self.channels + channel) as usize]
    }

    pub fn to_image(&self) -> DynamicImage {
        let bytes: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        if self.channels == 1 {
            DynamicImage::ImageLuma8(image::GrayImage::from_raw(self.size, self.size, bytes).expect("sized buffer"))
        } else {
            DynamicImage::ImageRgb8(image::RgbImage::from_raw(self.size, self.size, bytes).expect("sized buffer"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropOptions {
    pub out_size: u32,
    /// Fraction of the box width/height added on each side.
    pub margin: f64,
    pub grayscale: bool,
    /// Rotate so that the eye centroids lie on a horizontal line.
    pub align_eyes: bool,
}

impl Default for CropOptions {
    fn default() -> Self {
        CropOptions { out_size: 48, margin: 0.0, grayscale: true, align_eyes: false }
    }
}

/// Crops the face box (expanded by the margin, clamped to the image) and
/// resamples it bilinearly to `out_size x out_size`.
pub fn register_crop(img: &DynamicImage, face: &FaceInstance, opts: &CropOptions) -> Result<CropTensor> {
    if opts.out_size < MIN_CROP_SIZE {
        return Err(Error::Invalid(format!("output size must be at least {MIN_CROP_SIZE}, got {}", opts.out_size)));
    }
    if !(opts.margin >= 0.0 && opts.margin.is_finite()) {
        return Err(Error::Invalid(format!("margin must be >= 0, got {}", opts.margin)));
    }
    let (w, h) = img.dimensions();
    face.bbox.validate_within(w, h)?;
    let b = &face.bbox;
    let x0 = (b.x - opts.margin * b.width).max(0.0);
    let y0 = (b.y - opts.margin * b.height).max(0.0);
    let x1 = (b.x + b.width * (1.0 + opts.margin)).min(w as f64);
    let y1 = (b.y + b.height * (1.0 + opts.margin)).min(h as f64);

    let rgb = img.to_rgb8();
    let channels = if opts.grayscale { 1 } else { 3 };
    let n = opts.out_size as usize;
    let (sx, sy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let angle = match (&face.landmarks, opts.align_eyes) {
        (Some(l), true) => l.eye_angle(),
        _ => 0.0,
    };
    let (sin, cos) = angle.sin_cos();
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);

    let mut data = Vec::with_capacity(n * n * channels);
    for row in 0..n {
        for col in 0..n {
            // Pixel centers map to pixel centers; 1:1 scale samples exact pixels.
            let mut px = x0 + (col as f64 + 0.5) * sx - 0.5;
            let mut py = y0 + (row as f64 + 0.5) * sy - 0.5;
            if angle != 0.0 {
                let (dx, dy) = (px + 0.5 - cx, py + 0.5 - cy);
                px = cx + dx * cos - dy * sin - 0.5;
                py = cy + dx * sin + dy * cos - 0.5;
            }
            let [r, g, bl] = bilinear(&rgb, px, py);
            if opts.grayscale {
                data.push(((0.299 * r + 0.587 * g + 0.114 * bl) / 255.0).clamp(0.0, 1.0));
            } else {
                data.extend([r / 255.0, g / 255.0, bl / 255.0]);
            }
        }
    }
    Ok(CropTensor { size: opts.out_size, channels: channels as u32, data })
}

fn bilinear(img: &image::RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (xf, yf) = (x.floor(), y.floor());
    let (tx, ty) = (x - xf, y - yf);
    let (x0, y0) = (xf as i64, yf as i64);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let px = |xx: i64, yy: i64| img.get_pixel(xx as u32, yy as u32).0;
    let (a, b, c, d) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] as f64 * (1.0 - tx) + b[k] as f64 * tx;
        let bottom = c[k] as f64 * (1.0 - tx) + d[k] as f64 * tx;
        out[k] = top * (1.0 - ty) + bottom * ty;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::DownloadStatus;

    fn landmarks() -> LandmarkSet {
        LandmarkSet::new((0..66).map(|i| [i as f64, 2.0 * i as f64]).collect()).unwrap()
    }

    fn face(bbox: BoundingBox, landmarks: Option<LandmarkSet>) -> FaceInstance {
        FaceInstance { bbox, landmarks, detector_name: "test".into() }
    }

    struct Canned(Vec<FaceInstance>);

    impl FaceDetector for Canned {
        fn name(&self) -> &str {
            "canned"
        }
        fn detect(&self, _: &[u8]) -> Result<Vec<FaceInstance>> {
            Ok(self.0.clone())
        }
    }

    fn gradient_image(w: u32, h: u32) -> DynamicImage {
        DynamicImage::ImageRgb8(image::RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([(x * 7 % 256) as u8, (y * 11 % 256) as u8, ((x + y) * 3 % 256) as u8])
        }))
    }

    fn downloaded() -> ImageRecord {
        let mut r = ImageRecord::new("id".into(), "http://a/b".into());
        r.download_status = DownloadStatus::Downloaded;
        r
    }

    #[test]
    fn keep_rule() {
        let png = encode_png(&gradient_image(20, 20)).unwrap();
        let b = BoundingBox::new(2.0, 2.0, 10.0, 10.0);
        let kept = gate(&downloaded(), &png, &Canned(vec![face(b, Some(landmarks()))])).unwrap();
        assert!(kept.decision.kept);
        let no_lm = gate(&downloaded(), &png, &Canned(vec![face(b, None)])).unwrap();
        assert!(!no_lm.decision.kept);
        assert_eq!(no_lm.faces.len(), 1);
        let none = gate(&downloaded(), &png, &Canned(vec![])).unwrap();
        assert!(!none.decision.kept);
        let bad = gate(&downloaded(), b"\x89PNG garbage", &Canned(vec![face(b, Some(landmarks()))])).unwrap();
        assert_eq!(bad.decision.reason.as_deref(), Some(DECODE_FAILURE));
        let pending = ImageRecord::new("id".into(), "http://a/b".into());
        assert!(gate(&pending, &png, &Canned(vec![])).is_err());
    }

    #[test]
    fn landmark_count_is_enforced() {
        assert!(LandmarkSet::new(vec![[0.0, 0.0]; 68]).is_err());
        assert!(LandmarkSet::new(vec![[f64::NAN, 0.0]; 66]).is_err());
        let json = br#"[{"box":[1,2,3,4],"landmarks":[[0,0]]}]"#;
        assert!(parse_sidecar(json, "x").is_err());
        let json = br#"[{"box":[1,2,3,4]}]"#;
        let faces = parse_sidecar(json, "x").unwrap();
        assert_eq!(faces[0].bbox, BoundingBox::new(1.0, 2.0, 3.0, 4.0));
        assert!(faces[0].landmarks.is_none());
        assert!(parse_sidecar(br#"[{"box":[1,2,0,4]}]"#, "x").is_err());
    }

    #[test]
    fn full_box_crop_is_identity() {
        let img = gradient_image(16, 16);
        let f = face(BoundingBox::new(0.0, 0.0, 16.0, 16.0), None);
        let opts = CropOptions { out_size: 16, margin: 0.0, grayscale: false, align_eyes: false };
        let t = register_crop(&img, &f, &opts).unwrap();
        let rgb = img.to_rgb8();
        for y in 0..16 {
            for x in 0..16 {
                for c in 0..3 {
                    let expected = rgb.get_pixel(x, y).0[c as usize] as f64 / 255.0;
                    assert!((t.at(y, x, c) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn margin_adds_context() {
        // White 10x10 box centered in a black 40x40 image; a 25% margin crop
        // puts the box in the middle 10/15 of the output.
        let img = DynamicImage::ImageLuma8(image::GrayImage::from_fn(40, 40, |x, y| {
            image::Luma([if (15..25).contains(&x) && (15..25).contains(&y) { 255 } else { 0 }])
        }));
        let f = face(BoundingBox::new(15.0, 15.0, 10.0, 10.0), None);
        let t = register_crop(&img, &f, &CropOptions { out_size: 15, margin: 0.25, ..Default::default() }).unwrap();
        assert_eq!(t.shape(), (15, 15, 1));
        assert!(t.at(7, 7, 0) > 0.99);
        assert!(t.at(0, 0, 0) < 0.01);
        assert!(t.at(7, 0, 0) < 0.01);
        // The box edge falls on output row 2.5.
        assert!(t.at(1, 7, 0) < 0.01);
        assert!((t.at(2, 7, 0) - 0.5).abs() < 0.01);
        assert!(t.at(3, 7, 0) > 0.99);
    }

    #[test]
    fn grayscale_48_is_normalized() {
        let img = gradient_image(100, 80);
        let f = face(BoundingBox::new(10.0, 5.0, 60.0, 70.0), Some(landmarks()));
        let t = register_crop(&img, &f, &CropOptions::default()).unwrap();
        assert_eq!(t.shape(), (48, 48, 1));
        assert_eq!(t.data.len(), 48 * 48);
        assert!(t.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let aligned = register_crop(&img, &f, &CropOptions { align_eyes: true, ..Default::default() }).unwrap();
        assert_eq!(aligned.shape(), (48, 48, 1));
        assert!(register_crop(&img, &f, &CropOptions { out_size: 7, ..Default::default() }).is_err());
        let outside = face(BoundingBox::new(200.0, 5.0, 10.0, 10.0), None);
        assert!(register_crop(&img, &outside, &CropOptions::default()).is_err());
    }

    #[test]
    fn fixture_detector_reads_sidecars() {
        let dir = tempfile::tempdir().unwrap();
        let png = encode_png(&gradient_image(8, 8)).unwrap();
        let det = FixtureDetector::new(dir.path());
        assert!(det.detect(&png).unwrap().is_empty());
        let hash = sha256_hex(&png);
        std::fs::write(FixtureDetector::sidecar_path(dir.path(), &hash), br#"[{"box":[0,0,4,4]}]"#).unwrap();
        assert_eq!(det.detect(&png).unwrap().len(), 1);
    }

    #[test]
    fn external_detector_pipes_png() {
        let png = encode_png(&gradient_image(8, 8)).unwrap();
        let det = ExternalDetector::new(r#"head -c 8 >/dev/null; echo '[{"box":[0,0,4,4]}]'"#);
        let faces = det.detect(&png).unwrap();
        assert_eq!(faces.len(), 1);
        assert_eq!(faces[0].detector_name, "external");
        assert!(ExternalDetector::new("exit 3").detect(&png).is_err());
    }
}
