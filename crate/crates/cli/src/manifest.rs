use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cass_core::file_sha256;

/// Flat `key=value` record of what produced a set of artifacts.
pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let args: Vec<String> = std::env::args().skip(1).collect();
        let mut m = Manifest { lines: Vec::new() };
        m.set("tool", format!("cass {}", env!("CARGO_PKG_VERSION")));
        m.set("command", command);
        m.set("args", args.join(" "));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    /// Records a file and its SHA-256.
    pub fn file(&mut self, key: &str, path: &Path) -> cass_core::Result<()> {
        let digest = file_sha256(path)?;
        self.set(key, path.display());
        self.set(&format!("{key}.sha256"), digest);
        Ok(())
    }

    /// Prefixes every `key=value` line of `kv` with `prefix.`.
    pub fn section(&mut self, prefix: &str, kv: &str) {
        for line in kv.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.set(&format!("{prefix}.{k}"), v);
            }
        }
    }

    pub fn write(&self, path: &Path) -> cass_core::Result<()> {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k}={v}");
        }
        fs::write(path, s)?;
        Ok(())
    }
}

/// `path` with `suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}
