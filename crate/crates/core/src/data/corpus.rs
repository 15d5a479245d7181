//! On-disk corpus: `manifest.json` plus one PNG per sample in each of
//! `images/`, `labels_clean/` and `labels_train/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SpadError};
use crate::grid::{Image, LabelMap};
use crate::types::SegSample;

use super::phantom::PhantomConfig;
use super::png::{decode_image_png, decode_label_png, encode_image_png, encode_label_png};

pub const CORPUS_FORMAT: &str = "spad-corpus/1";
const SUBDIRS: [&str; 3] = ["images", "labels_clean", "labels_train"];

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSample {
    pub id: String,
    pub image: Image,
    pub label_clean: LabelMap,
    pub label_train: LabelMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format: String,
    pub num_classes: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Absent for bring-your-own corpora.
    pub phantom: Option<PhantomConfig>,
    pub content_hash: String,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
    pub samples: Vec<CorpusSample>,
}

impl Corpus {
    fn find(&self, id: &str) -> &CorpusSample {
        self.samples.iter().find(|s| s.id == id).expect("ids checked on load")
    }

    /// Training samples carry the jittered labels.
    pub fn train_samples(&self) -> Vec<SegSample> {
        self.manifest
            .train_ids
            .iter()
            .map(|id| {
                let s = self.find(id);
                SegSample {
                    sample_id: s.id.clone(),
                    image: s.image.clone(),
                    label: s.label_train.clone(),
                    num_classes: self.manifest.num_classes,
                }
            })
            .collect()
    }

    /// Test samples carry the clean labels.
    pub fn test_samples(&self) -> Vec<SegSample> {
        self.manifest
            .test_ids
            .iter()
            .map(|id| {
                let s = self.find(id);
                SegSample {
                    sample_id: s.id.clone(),
                    image: s.image.clone(),
                    label: s.label_clean.clone(),
                    num_classes: self.manifest.num_classes,
                }
            })
            .collect()
    }
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(SpadError::Corpus(format!("invalid sample id {id:?}")))
    }
}

fn sample_files(ids: &[&str]) -> Vec<String> {
    let mut files: Vec<String> = SUBDIRS
        .iter()
        .flat_map(|d| ids.iter().map(move |id| format!("{d}/{id}.png")))
        .collect();
    files.sort();
    files
}

/// Hex SHA-256 over the byte concatenation of every sample file, visited in
/// sorted relative-path order.
pub fn corpus_hash(dir: &Path, ids: &[&str]) -> Result<String> {
    let mut h = Sha256::new();
    for rel in sample_files(ids) {
        let path = dir.join(&rel);
        h.update(fs::read(&path).map_err(|e| SpadError::io(&path, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn parse_corpus_manifest(text: &str) -> Result<CorpusManifest> {
    let m: CorpusManifest =
        serde_json::from_str(text).map_err(|e| SpadError::SchemaViolation(e.to_string()))?;
    if m.format != CORPUS_FORMAT {
        return Err(SpadError::SchemaViolation(format!("unknown corpus format {:?}", m.format)));
    }
    if !(2..=255).contains(&m.num_classes) {
        return Err(SpadError::SchemaViolation(format!("num_classes {}", m.num_classes)));
    }
    let mut all: Vec<&String> = m.train_ids.iter().chain(&m.test_ids).collect();
    for id in &all {
        check_id(id)?;
    }
    all.sort();
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(SpadError::SchemaViolation("duplicate or overlapping sample ids".into()));
    }
    Ok(m)
}

/// Writes `samples` to `dir`; the trailing `n_test` samples form the test split.
pub fn write_corpus(
    samples: &[CorpusSample],
    n_test: usize,
    num_classes: usize,
    phantom: Option<&PhantomConfig>,
    dir: &Path,
) -> Result<CorpusManifest> {
    if samples.is_empty() {
        return Err(SpadError::EmptyCorpus(dir.to_path_buf()));
    }
    if n_test > samples.len() {
        return Err(SpadError::InvalidParam(format!(
            "n_test {n_test} exceeds {} samples",
            samples.len()
        )));
    }
    for d in SUBDIRS {
        let p = dir.join(d);
        fs::create_dir_all(&p).map_err(|e| SpadError::io(&p, e))?;
    }
    for s in samples {
        check_id(&s.id)?;
        let files = [
            ("images", encode_image_png(&s.image)?),
            ("labels_clean", encode_label_png(&s.label_clean)?),
            ("labels_train", encode_label_png(&s.label_train)?),
        ];
        for (sub, bytes) in files {
            let p = dir.join(sub).join(format!("{}.png", s.id));
            fs::write(&p, bytes).map_err(|e| SpadError::io(&p, e))?;
        }
    }
    let split = samples.len() - n_test;
    let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let manifest = CorpusManifest {
        format: CORPUS_FORMAT.to_string(),
        num_classes,
        train_ids: ids[..split].iter().map(|s| s.to_string()).collect(),
        test_ids: ids[split..].iter().map(|s| s.to_string()).collect(),
        phantom: phantom.cloned(),
        content_hash: corpus_hash(dir, &ids)?,
    };
    // Re-validate what we are about to persist.
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    parse_corpus_manifest(&text)?;
    let p = dir.join("manifest.json");
    fs::write(&p, text + "\n").map_err(|e| SpadError::io(&p, e))?;
    Ok(manifest)
}

/// Loads a corpus. With `verify`, the live content hash must equal the
/// recorded one.
pub fn read_corpus(dir: &Path, verify: bool) -> Result<Corpus> {
    let mpath = dir.join("manifest.json");
    if !mpath.exists() {
        let empty = fs::read_dir(dir).map(|mut d| d.next().is_none()).unwrap_or(true);
        return Err(if empty {
            SpadError::EmptyCorpus(dir.to_path_buf())
        } else {
            SpadError::Corpus(format!("{} has no manifest.json", dir.display()))
        });
    }
    let text = fs::read_to_string(&mpath).map_err(|e| SpadError::io(&mpath, e))?;
    let manifest = parse_corpus_manifest(&text)?;
    let ids: Vec<&str> = manifest
        .train_ids
        .iter()
        .chain(&manifest.test_ids)
        .map(String::as_str)
        .collect();
    if ids.is_empty() {
        return Err(SpadError::EmptyCorpus(dir.to_path_buf()));
    }
    if verify {
        let live = corpus_hash(dir, &ids)?;
        if live != manifest.content_hash {
            return Err(SpadError::HashMismatch {
                expected: manifest.content_hash.clone(),
                found: live,
            });
        }
    }
    let read = |sub: &str, id: &str| -> Result<Vec<u8>> {
        let p = dir.join(sub).join(format!("{id}.png"));
        fs::read(&p).map_err(|e| SpadError::io(&p, e))
    };
    let mut samples = Vec::with_capacity(ids.len());
    for id in &ids {
        let image = decode_image_png(&read("images", id)?)?;
        let label_clean = decode_label_png(&read("labels_clean", id)?)?;
        let label_train = decode_label_png(&read("labels_train", id)?)?;
        for label in [&label_clean, &label_train] {
            SegSample::new(id.to_string(), image.clone(), label.clone(), manifest.num_classes)?;
        }
        samples.push(CorpusSample {
            id: id.to_string(),
            image,
            label_clean,
            label_train,
        });
    }
    Ok(Corpus {
        dir: dir.to_path_buf(),
        manifest,
        samples,
    })
}
