//! Append-only artifact directories and per-command manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Commands write into a private staging directory; [`Run::commit`] then
/// moves every file into the output directory. An existing file is left
/// alone when identical and is never replaced when different.
pub struct Run {
    pub command: &'static str,
    out: PathBuf,
    staging: PathBuf,
    entries: Vec<(String, String)>,
}

impl Run {
    pub fn start(command: &'static str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let staging = out.join(format!(".staging-{command}"));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            staging,
            entries: vec![
                ("tool".into(), env!("CARGO_PKG_NAME").into()),
                ("version".into(), env!("CARGO_PKG_VERSION").into()),
                ("command".into(), command.into()),
            ],
        })
    }

    /// Where a command writes artifact `name`.
    pub fn path(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    pub fn record(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// Records an input file by path and content hash.
    pub fn input(&mut self, key: &str, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.record(format!("input.{key}"), format!("{} sha256:{hash}", path.display()));
        Ok(())
    }

    pub fn commit(mut self, config_text: &str) -> Result<Vec<PathBuf>> {
        fs::write(self.path(&format!("{}.config", self.command)), config_text)?;
        self.record("config_sha256", sha256_text(config_text));
        let mut files = Vec::new();
        collect(&self.staging, &mut files)?;
        files.sort();
        let mut manifest = String::new();
        for (k, v) in &self.entries {
            manifest.push_str(&format!("{k}={v}\n"));
        }
        for f in &files {
            let rel = f.strip_prefix(&self.staging)?;
            manifest.push_str(&format!("output.{}=sha256:{}\n", rel.display(), sha256_file(f)?));
        }
        let manifest_name = format!("{}.manifest", self.command);
        fs::write(self.path(&manifest_name), manifest)?;
        files.push(self.path(&manifest_name));

        // Check every destination before moving anything.
        let mut fresh = Vec::with_capacity(files.len());
        for f in &files {
            let dest = self.out.join(f.strip_prefix(&self.staging)?);
            if dest.exists() && fs::read(&dest)? != fs::read(f)? {
                bail!("refusing to overwrite {} with different content; use a fresh --out directory", dest.display());
            }
            fresh.push(!dest.exists());
        }
        let mut written = Vec::new();
        for (f, fresh) in files.iter().zip(fresh) {
            let rel = f.strip_prefix(&self.staging)?.to_path_buf();
            let dest = self.out.join(&rel);
            if fresh {
                if let Some(parent) = dest.parent() {
                    fs::create_dir_all(parent)?;
                }
                fs::rename(f, &dest)?;
            }
            written.push(rel);
        }
        fs::remove_dir_all(&self.staging)?;
        Ok(written)
    }
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

impl Drop for Run {
    fn drop(&mut self) {
        // Leftovers of a failed command; a committed run has already moved
        // everything out.
        let _ = fs::remove_dir_all(&self.staging);
    }
}
