//! Dataset manifests: paired image/mask files plus the slot count the
//! dataset is evaluated with.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, SceneError};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: String,
    pub mask: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Manifest {
    pub dataset: String,
    pub n_slots: usize,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Evaluation slot counts per known dataset name.
pub fn default_slots(dataset: &str) -> Option<usize> {
    match dataset.to_ascii_lowercase().as_str() {
        "coco" | "entityseg" | "pascal-voc" | "voc" => Some(7),
        "movi-c" | "movi-e" | "clevrtex" => Some(11),
        "scannet" | "ycb" => Some(6),
        _ => None,
    }
}

/// Scan a directory of `NNNN.img.bin` / `NNNN.seg.bin` pairs into a
/// manifest with deterministic lexicographic ordering. Unpaired files are
/// rejected, naming the orphan.
pub fn build_manifest(dir: &Path, dataset: &str, n_slots: usize) -> Result<Manifest> {
    let mut images: BTreeMap<String, String> = BTreeMap::new();
    let mut masks: BTreeMap<String, String> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".img.bin") {
            images.insert(stem.to_string(), name.clone());
        } else if let Some(stem) = name.strip_suffix(".seg.bin") {
            masks.insert(stem.to_string(), name.clone());
        }
    }
    for stem in images.keys() {
        if !masks.contains_key(stem) {
            return Err(SceneError::UnpairedFile { stem: stem.clone(), missing: "mask" });
        }
    }
    for stem in masks.keys() {
        if !images.contains_key(stem) {
            return Err(SceneError::UnpairedFile { stem: stem.clone(), missing: "image" });
        }
    }
    let entries = images
        .into_iter()
        .map(|(stem, image)| ManifestEntry { image, mask: masks[&stem].clone() })
        .collect();
    Ok(Manifest { dataset: dataset.to_string(), n_slots, entries })
}
