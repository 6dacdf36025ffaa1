use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// First 12 hex digits of the SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(digest)[..12].to_string()
}

/// `out/features`, `out/profiles`, `out/reports`.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["features", "profiles", "reports"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn features(&self, name: &str) -> PathBuf {
        self.root.join("features").join(name)
    }
    pub fn profiles(&self, name: &str) -> PathBuf {
        self.root.join("profiles").join(name)
    }
    pub fn reports(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}

/// Create `path` and hand a buffered writer to `f`.
pub fn write_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Run `f` and report its wall-clock time on stderr.
pub fn timed<T>(phase: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    eprintln!("[time] {phase}: {:.3}s", start.elapsed().as_secs_f64());
    out
}
