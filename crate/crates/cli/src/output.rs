use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// SHA-256 of the canonical config text, hex encoded.
pub fn config_hash(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Writes artifacts into one directory, each CSV tagged with the config hash.
pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: &Path, hash: String) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash,
            written: Vec::new(),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn put(&mut self, name: &str, body: &str) -> io::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body)?;
        self.written.push(path);
        Ok(())
    }

    /// `# config-hash: …`, then the header row, then one line per row.
    pub fn csv<R, I>(&mut self, name: &str, header: &[&str], rows: I) -> io::Result<()>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[String]>,
    {
        let mut body = format!("# config-hash: {}\n{}\n", self.hash, header.join(","));
        for row in rows {
            body.push_str(&row.as_ref().join(","));
            body.push('\n');
        }
        self.put(name, &body)
    }

    pub fn text(&mut self, name: &str, body: &str) -> io::Result<()> {
        self.put(name, body)
    }
}

/// Shortest round-trip representation; identical across runs.
pub fn num(x: f64) -> String {
    let mut s = String::new();
    write!(s, "{x:e}").unwrap();
    s
}
