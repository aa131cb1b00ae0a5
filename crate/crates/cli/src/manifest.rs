use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use penh::config::KvConfig;

pub const DEFAULT_OUT_DIR: &str = "penh-out";
pub const OUT_DIR_ENV: &str = "PENH_OUT_DIR";

/// Validation failure detected by the CLI itself.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn library_code(e: &penh::Error) -> u8 {
    use penh::Error::*;
    match e {
        Io { .. } | Parse { .. } | UnsupportedFormat(_) | VersionMismatch(_) | Corrupt(_) | MissingTensor(_) | EmptyDataset => 3,
        Diverged { .. } => 4,
        _ => 2,
    }
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 2;
        }
        if let Some(pe) = cause.downcast_ref::<penh::Error>() {
            return library_code(pe);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return 3;
        }
    }
    1
}

pub fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Command, fully resolved configuration and output paths of one run.
pub struct RunManifest {
    entries: KvConfig,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut entries = KvConfig::new();
        entries.set("command", command);
        entries.set("version", version());
        RunManifest { entries }
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) -> &mut Self {
        self.entries.set(key, value);
        self
    }

    pub fn set_path(&mut self, key: &str, value: &Path) -> &mut Self {
        self.entries.set(key, value.display());
        self
    }

    pub fn extend(&mut self, prefix: &str, kv: &KvConfig) -> &mut Self {
        for (k, v) in kv.iter() {
            self.entries.set(format!("{prefix}{k}"), v);
        }
        self
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.entries.to_text()).with_context(|| format!("writing {}", path.display()))
    }
}

/// `v<version>` plus the output of `git describe` when it was available at
/// build time.
pub fn version() -> String {
    match option_env!("PENH_GIT_DESCRIBE") {
        Some(d) if !d.is_empty() => d.to_string(),
        _ => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}
