//! Workspace configuration.
//!
//! `wildlabel.conf` in the workspace root holds `key = value` lines; `#`
//! starts a comment. Command-line flags override the file, and
//! `WILDLABEL_<KEY>` environment variables override both. `WILDLABEL_UA`
//! sets `user_agent`.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `preset` | `paper` or `desk` training constants | `desk` |
//! | `seed` | seed for sampling, resolution, splits, training | `42` |
//! | `seeds` | comma-separated seeds for `simulate` | `0,1,2,3,4` |
//! | `rate` | requests per second per host | `2` |
//! | `parallel` | concurrent downloads | `8` |
//! | `timeout` | request timeout, seconds | `15` |
//! | `retries` | retries per URL, at most 5 | `3` |
//! | `user_agent` | HTTP User-Agent | `wildlabel/<version>` |
//! | `port` | annotation service port | `8080` |
//! | `languages` | language allowlist | `ar,de,en,es,fa,pt` |
//! | `test_fraction` | per-label test share | `0.2` |
//! | `crop_size` | training crop side, pixels | `48` |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harvest::FetchPolicy;
use crate::taxonomy::DEFAULT_LANGUAGES;
use crate::trainer::Preset;

pub const CONFIG_FILE: &str = "wildlabel.conf";
pub const ENV_PREFIX: &str = "WILDLABEL_";

pub const KEYS: [&str; 12] = [
    "preset",
    "seed",
    "seeds",
    "rate",
    "parallel",
    "timeout",
    "retries",
    "user_agent",
    "port",
    "languages",
    "test_fraction",
    "crop_size",
];

/// One layer of raw settings.
pub type Layer = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkspaceConfig {
    pub workspace: PathBuf,
    pub preset: Preset,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub fetch: FetchPolicy,
    pub port: u16,
    pub languages: Vec<String>,
    pub test_fraction: f64,
    pub crop_size: u32,
}

pub fn parse_layer(text: &str) -> Result<Layer> {
    let mut out = Layer::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, detail: format!("expected key = value, got `{line}`") })?;
        let key = key.trim().to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Parse { line: i + 1, detail: format!("unknown key `{key}`") });
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

/// Settings from `WILDLABEL_*` variables.
pub fn env_layer(vars: impl IntoIterator<Item = (String, String)>) -> Layer {
    let mut out = Layer::new();
    for (name, value) in vars {
        let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
        let key = match key {
            "UA" => "user_agent".to_string(),
            k => k.to_ascii_lowercase(),
        };
        if KEYS.contains(&key.as_str()) {
            out.insert(key, value);
        }
    }
    out
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key} = `{value}`: {e}")))
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl WorkspaceConfig {
    pub fn defaults(workspace: impl Into<PathBuf>) -> Self {
        WorkspaceConfig {
            workspace: workspace.into(),
            preset: Preset::Desk,
            seed: 42,
            seeds: (0..5).collect(),
            fetch: FetchPolicy::default(),
            port: 8080,
            languages: DEFAULT_LANGUAGES.iter().map(|s| s.to_string()).collect(),
            test_fraction: 0.2,
            crop_size: 48,
        }
    }

    pub fn apply(&mut self, layer: &Layer) -> Result<()> {
        for (key, value) in layer {
            let v = value.as_str();
            match key.as_str() {
                "preset" => self.preset = v.parse()?,
                "seed" => self.seed = parse(key, v)?,
                "seeds" => self.seeds = list(v).map(|s| parse(key, s)).collect::<Result<_>>()?,
                "rate" => self.fetch.per_host_rate = parse(key, v)?,
                "parallel" => self.fetch.max_parallel = parse(key, v)?,
                "timeout" => self.fetch.timeout_secs = parse(key, v)?,
                "retries" => self.fetch.retries = parse(key, v)?,
                "user_agent" => self.fetch.user_agent = v.to_string(),
                "port" => self.port = parse(key, v)?,
                "languages" => self.languages = list(v).map(String::from).collect(),
                "test_fraction" => self.test_fraction = parse(key, v)?,
                "crop_size" => self.crop_size = parse(key, v)?,
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        Ok(())
    }

    /// Defaults, then the workspace file (if present), then `flags`, then `env`.
    pub fn resolve(workspace: &Path, flags: &Layer, env: &Layer) -> Result<Self> {
        let mut cfg = Self::defaults(workspace);
        let path = workspace.join(CONFIG_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => cfg.apply(&parse_layer(&text)?)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(&path, e)),
        }
        cfg.apply(flags)?;
        cfg.apply(env)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.fetch.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        if self.languages.is_empty() {
            return Err(Error::Config("languages must be nonempty".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must be in (0, 1), got {}", self.test_fraction)));
        }
        Ok(())
    }

    pub fn language_refs(&self) -> Vec<&str> {
        self.languages.iter().map(String::as_str).collect()
    }
}
