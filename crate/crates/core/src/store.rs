// SPDX-License-Identifier: MIT OR Apache-2.0

//! Persistence: unit-set files, the activation cache, and run directories.
//!
//! Layout under an output directory:
//!
//! ```text
//! runs/<run digest>/manifest.json
//! runs/<run digest>/<report files>
//! ```
//!
//! and under a cache directory:
//!
//! ```text
//! <model hash>/<benchmark hash>/<uid>__<fold>__<sites>.safetensors
//! ```
//!
//! Every report embeds its run digest: CSV files start with a
//! `# run_digest: <hex>` line, JSON files carry a top-level `run_digest`.
//! The manifest lists the sha256 of every report, so `verify_run` can detect
//! edits, missing files and orphans.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use synloc_engine::{ActivationCacheHeader, ActivationPair, UnitSpace};

use crate::corpus::hex;
use crate::error::{Error, Result};
use crate::localizer::UnitSet;
use crate::session::FoldSpec;

pub const UNIT_SET_SCHEMA: &str = "synloc-unit-set";
pub const UNIT_SET_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA: &str = "synloc-run-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CSV_DIGEST_PREFIX: &str = "# run_digest: ";

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// sha256 of the canonical (sorted-key, compact) JSON form.
fn canonical_digest(value: &serde_json::Value) -> String {
    sha256_hex(serde_json::to_string(value).expect("value serializes").as_bytes())
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

// ---------------------------------------------------------------- unit sets

const UNIT_SET_KEYS: [&str; 5] = ["schema", "version", "digest", "run_digest", "unit_set"];

/// JSON document for a unit set, optionally stamped with a run digest.
pub fn unit_set_document(set: &UnitSet, run_digest: Option<&str>) -> Result<serde_json::Value> {
    let body = serde_json::to_value(set)?;
    let mut doc = serde_json::Map::new();
    doc.insert("schema".into(), UNIT_SET_SCHEMA.into());
    doc.insert("version".into(), UNIT_SET_VERSION.into());
    doc.insert("digest".into(), canonical_digest(&body).into());
    if let Some(d) = run_digest {
        doc.insert("run_digest".into(), d.into());
    }
    doc.insert("unit_set".into(), body);
    Ok(serde_json::Value::Object(doc))
}

pub fn write_unit_set(path: impl AsRef<Path>, set: &UnitSet) -> Result<()> {
    let doc = unit_set_document(set, None)?;
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_atomic(path.as_ref(), text.as_bytes())
}

/// A unit set read back from disk, plus anything worth warning about.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedUnitSet {
    pub unit_set: UnitSet,
    pub run_digest: Option<String>,
    pub warnings: Vec<String>,
}

pub fn read_unit_set(path: impl AsRef<Path>) -> Result<LoadedUnitSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Digest(format!("{}: unreadable unit-set file ({e})", path.display())))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Schema(format!("{}: not a JSON object", path.display())))?;
    if obj.get("schema").and_then(|v| v.as_str()) != Some(UNIT_SET_SCHEMA) {
        return Err(Error::Schema(format!("{}: not a unit-set file", path.display())));
    }
    let version = obj.get("version").and_then(|v| v.as_u64());
    if version != Some(UNIT_SET_VERSION as u64) {
        return Err(Error::Schema(format!(
            "{}: unit-set version {version:?}, this reader understands {UNIT_SET_VERSION}",
            path.display()
        )));
    }
    let body = obj
        .get("unit_set")
        .ok_or_else(|| Error::Schema(format!("{}: missing `unit_set`", path.display())))?;
    let recorded = obj.get("digest").and_then(|v| v.as_str()).unwrap_or_default();
    let actual = canonical_digest(body);
    if recorded != actual {
        return Err(Error::Digest(format!(
            "{}: unit-set digest {recorded} does not match content {actual}",
            path.display()
        )));
    }

    let mut warnings: Vec<String> = obj
        .keys()
        .filter(|k| !UNIT_SET_KEYS.contains(&k.as_str()))
        .map(|k| format!("ignoring unknown field `{k}`"))
        .collect();
    let unit_set: UnitSet =
        serde_json::from_value(body.clone()).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let known = serde_json::to_value(&unit_set)?;
    if let (Some(b), Some(k)) = (body.as_object(), known.as_object()) {
        warnings.extend(
            b.keys()
                .filter(|key| !k.contains_key(*key))
                .map(|key| format!("ignoring unknown field `unit_set.{key}`")),
        );
    }
    for w in &warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(LoadedUnitSet {
        unit_set,
        run_digest: obj.get("run_digest").and_then(|v| v.as_str()).map(str::to_string),
        warnings,
    })
}

// --------------------------------------------------------- activation cache

/// Everything a cached activation matrix depends on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub model_hash: String,
    pub benchmark_hash: String,
    pub phenomenon_uid: String,
    pub fold: FoldSpec,
    pub sites: String,
    pub n_pairs: usize,
}

impl CacheKey {
    pub fn digest(&self) -> String {
        canonical_digest(&serde_json::to_value(self).expect("key serializes"))
    }
}

fn path_component(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(16)]
}

#[derive(Debug)]
pub struct ActivationCache {
    root: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ActivationCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root
            .join(path_component(short(&key.model_hash)))
            .join(path_component(short(&key.benchmark_hash)))
            .join(format!(
                "{}__{}__{}.safetensors",
                path_component(&key.phenomenon_uid),
                path_component(&key.fold.label()),
                path_component(&key.sites)
            ))
    }

    /// Cached matrices for `key`, or `None` on a miss. A file at the key's
    /// path written for a different key is a hard error.
    pub fn load(&self, key: &CacheKey, space: &UnitSpace) -> Result<Option<(Array2<f32>, Array2<f32>)>> {
        let path = self.path_for(key);
        if !path.exists() {
            return Ok(None);
        }
        let pair = ActivationPair::load(&path)?;
        let collision = |message: String| Error::CacheCollision {
            path: path.clone(),
            message,
        };
        if pair.header.key_digest != key.digest() {
            return Err(collision(format!(
                "stored key digest {} differs from requested {}",
                pair.header.key_digest,
                key.digest()
            )));
        }
        if pair.header.model_hash != key.model_hash || pair.header.space != *space {
            return Err(collision("model hash or unit space differs".into()));
        }
        if pair.good.nrows() != key.n_pairs || pair.bad.nrows() != key.n_pairs {
            return Err(collision(format!(
                "{} / {} rows stored for {} pairs",
                pair.good.nrows(),
                pair.bad.nrows(),
                key.n_pairs
            )));
        }
        Ok(Some((pair.good, pair.bad)))
    }

    pub fn store(&self, key: &CacheKey, space: &UnitSpace, good: &Array2<f32>, bad: &Array2<f32>) -> Result<()> {
        let pair = ActivationPair {
            header: ActivationCacheHeader {
                format: synloc_engine::cache::CACHE_FORMAT.to_string(),
                model_hash: key.model_hash.clone(),
                space: space.clone(),
                key_digest: key.digest(),
            },
            good: good.clone(),
            bad: bad.clone(),
        };
        write_atomic(&self.path_for(key), &pair.to_bytes()?)
    }

    pub fn get_or_compute(
        &self,
        key: &CacheKey,
        space: &UnitSpace,
        compute: impl FnOnce() -> Result<(Array2<f32>, Array2<f32>)>,
    ) -> Result<(Array2<f32>, Array2<f32>)> {
        if let Some(hit) = self.load(key, space)? {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let (good, bad) = compute()?;
        self.store(key, space, &good, &bad)?;
        Ok((good, bad))
    }
}

// ------------------------------------------------------------------- runs

/// Inputs that determine a run's outputs. Thread count and output location
/// are deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInputs {
    pub command: String,
    pub config: serde_json::Value,
    pub model_hash: String,
    pub benchmark_hashes: Vec<String>,
    pub fraction: f64,
    pub sites: Vec<String>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub schema_version: u32,
    pub toolkit_version: String,
    #[serde(flatten)]
    pub inputs: RunInputs,
    pub run_digest: String,
    /// File name -> sha256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

pub fn run_digest(inputs: &RunInputs, toolkit_version: &str) -> String {
    let mut v = serde_json::to_value(inputs).expect("inputs serialize");
    v["toolkit_version"] = toolkit_version.into();
    v["schema_version"] = MANIFEST_VERSION.into();
    canonical_digest(&v)
}

/// Collects report files in a scratch directory and moves them into
/// `runs/<digest>/` only when the whole run succeeded.
#[derive(Debug)]
pub struct RunWriter {
    final_dir: PathBuf,
    tmp_dir: PathBuf,
    manifest: RunManifest,
    finished: bool,
}

impl RunWriter {
    pub fn create(out_dir: impl AsRef<Path>, inputs: RunInputs) -> Result<Self> {
        let runs = out_dir.as_ref().join("runs");
        let digest = run_digest(&inputs, crate::VERSION);
        let tmp_dir = runs.join(format!(".partial-{}-{}", short(&digest), std::process::id()));
        if tmp_dir.exists() {
            std::fs::remove_dir_all(&tmp_dir).map_err(|e| Error::io(&tmp_dir, e))?;
        }
        std::fs::create_dir_all(&tmp_dir).map_err(|e| Error::io(&tmp_dir, e))?;
        Ok(Self {
            final_dir: runs.join(&digest),
            tmp_dir,
            manifest: RunManifest {
                schema: MANIFEST_SCHEMA.into(),
                schema_version: MANIFEST_VERSION,
                toolkit_version: crate::VERSION.into(),
                inputs,
                run_digest: digest,
                outputs: BTreeMap::new(),
            },
            finished: false,
        })
    }

    pub fn digest(&self) -> &str {
        &self.manifest.run_digest
    }

    pub fn final_dir(&self) -> &Path {
        &self.final_dir
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if name == MANIFEST_FILE || name.contains('/') || name.contains('\\') || name.starts_with('.') {
            return Err(Error::InvalidArgument(format!("bad report file name `{name}`")));
        }
        let path = self.tmp_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes a CSV report, preceded by the run-digest comment line.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let body = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut bytes = format!("{CSV_DIGEST_PREFIX}{}\n", self.digest()).into_bytes();
        bytes.extend_from_slice(&body);
        self.put(name, &bytes)
    }

    /// Writes `{"run_digest": …, "report": value}` as pretty JSON.
    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let doc = serde_json::json!({
            "run_digest": self.digest(),
            "report": serde_json::to_value(value)?,
        });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    pub fn write_unit_set(&mut self, name: &str, set: &UnitSet) -> Result<()> {
        let doc = unit_set_document(set, Some(&self.manifest.run_digest.clone()))?;
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    /// Writes the manifest and moves the run into place, replacing an
    /// earlier run with the same digest.
    pub fn finish(mut self) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        let mpath = self.tmp_dir.join(MANIFEST_FILE);
        std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        if self.final_dir.exists() {
            let old = self.tmp_dir.with_extension("old");
            std::fs::rename(&self.final_dir, &old).map_err(|e| Error::io(&self.final_dir, e))?;
            std::fs::rename(&self.tmp_dir, &self.final_dir).map_err(|e| Error::io(&self.final_dir, e))?;
            std::fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        } else {
            std::fs::rename(&self.tmp_dir, &self.final_dir).map_err(|e| Error::io(&self.final_dir, e))?;
        }
        self.finished = true;
        Ok(self.final_dir.clone())
    }
}

impl Drop for RunWriter {
    fn drop(&mut self) {
        if !self.finished {
            let _ = std::fs::remove_dir_all(&self.tmp_dir);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub run_digest: String,
    pub files_checked: usize,
}

fn embedded_digest(name: &str, bytes: &[u8]) -> Option<String> {
    if name.ends_with(".csv") {
        let text = std::str::from_utf8(bytes).ok()?;
        let first = text.lines().next()?;
        return first.strip_prefix(CSV_DIGEST_PREFIX).map(str::to_string);
    }
    let v: serde_json::Value = serde_json::from_slice(bytes).ok()?;
    v.get("run_digest")?.as_str().map(str::to_string)
}

/// Audits a run directory: manifest digest, per-file hashes, embedded run
/// digests, and files the manifest does not list.
pub fn verify_run(dir: impl AsRef<Path>) -> Result<VerifyReport> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", mpath.display())))?;
    if manifest.schema != MANIFEST_SCHEMA || manifest.schema_version != MANIFEST_VERSION {
        return Err(Error::Schema(format!(
            "manifest schema {} v{} not supported",
            manifest.schema, manifest.schema_version
        )));
    }
    let expected = run_digest(&manifest.inputs, &manifest.toolkit_version);
    if expected != manifest.run_digest {
        return Err(Error::Digest(format!(
            "manifest run digest {} does not match its inputs ({expected})",
            manifest.run_digest
        )));
    }
    if let Some(name) = dir.file_name().and_then(|n| n.to_str()) {
        if name != manifest.run_digest {
            log::warn!("run directory `{name}` is not named after its digest");
        }
    }

    let mut problems = Vec::new();
    for (name, recorded) in &manifest.outputs {
        let path = dir.join(name);
        match std::fs::read(&path) {
            Err(_) => problems.push(format!("missing output `{name}`")),
            Ok(bytes) => {
                if sha256_hex(&bytes) != *recorded {
                    problems.push(format!("`{name}` was modified"));
                }
                if embedded_digest(name, &bytes).as_deref() != Some(manifest.run_digest.as_str()) {
                    problems.push(format!("`{name}` does not embed the run digest"));
                }
            }
        }
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name != MANIFEST_FILE && !manifest.outputs.contains_key(&name) {
            problems.push(format!("orphan file `{name}`"));
        }
    }
    if !problems.is_empty() {
        problems.sort();
        return Err(Error::Digest(problems.join("; ")));
    }
    Ok(VerifyReport {
        run_digest: manifest.run_digest,
        files_checked: manifest.outputs.len(),
    })
}
