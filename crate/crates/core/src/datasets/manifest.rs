//! The dataset manifest: a JSON file listing every study, its clip files
//! (relative to the manifest's directory), its label and its partition.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "class_counts": { "none": 39, "mild": 10, "moderate-severe": 11 },
//!   "entries": [
//!     {
//!       "study_id": "S0000",
//!       "patient_id": "P0000",
//!       "label": "mild",
//!       "partition": "dev",
//!       "clips": { "A4C": { "path": "clips/S0000_A4C.clip", "shape": [8, 144, 144] } },
//!       "flattening": 0.41,
//!       "view_flattening": { "A4C": 0.47 }
//!     }
//!   ]
//! }
//! ```
//!
//! `label` is omitted for unlabeled studies; `flattening` and
//! `view_flattening` are optional ground-truth generative factors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{histogram_equalize, resize_bicubic};

use super::clipfile::{read_clip, read_clip_header};
use super::{Label, MultiViewStudy, View, ViewClip};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    Dev,
    HeldOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRef {
    pub path: String,
    /// `[T, H, W]`
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub study_id: String,
    pub patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub partition: Partition,
    pub clips: BTreeMap<View, ClipRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flattening: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub view_flattening: BTreeMap<View, f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ClassCounts {
    pub none: usize,
    pub mild: usize,
    pub moderate_severe: usize,
}

impl ClassCounts {
    pub fn of_entries(entries: &[ManifestEntry]) -> Self {
        let mut c = Self::default();
        for l in entries.iter().filter_map(|e| e.label) {
            match l {
                Label::None => c.none += 1,
                Label::Mild => c.mild += 1,
                Label::ModerateSevere => c.moderate_severe += 1,
            }
        }
        c
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.none, self.mild, self.moderate_severe]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub class_counts: ClassCounts,
    pub entries: Vec<ManifestEntry>,
    /// Directory clip paths are resolved against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            class_counts: ClassCounts::of_entries(&entries),
            entries,
            root: root.into(),
        }
    }

    pub fn clip_path(&self, r: &ClipRef) -> PathBuf {
        self.root.join(&r.path)
    }

    pub fn indices_in(&self, partition: Partition) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].partition == partition)
            .collect()
    }
}

/// Writes `manifest.json` into `dir` (or to `path` if it names a `.json` file).
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<PathBuf> {
    let file = manifest_file(path);
    if let Some(dir) = file.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&file, text).map_err(|e| Error::io(&file, e))?;
    Ok(file)
}

fn manifest_file(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.to_path_buf()
    } else {
        path.join(MANIFEST_FILE)
    }
}

/// Loads and validates a manifest: schema version, class counts, and every
/// referenced clip's existence and shape.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = manifest_file(path);
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
    let version = raw.get("schema_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == MANIFEST_SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::SchemaVersion {
                path: file,
                found: v as u32,
                expected: MANIFEST_SCHEMA_VERSION,
            })
        }
        None => return Err(Error::Data(format!("{}: missing schema_version", file.display()))),
    }
    let mut m: DatasetManifest =
        serde_json::from_value(raw).map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
    m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();

    let counted = ClassCounts::of_entries(&m.entries);
    if counted != m.class_counts {
        return Err(Error::Data(format!(
            "{}: class_counts {:?} disagree with entries {:?}",
            file.display(),
            m.class_counts.as_array(),
            counted.as_array()
        )));
    }
    for e in &m.entries {
        if e.clips.is_empty() {
            return Err(Error::Data(format!("{}: study {} has no clips", file.display(), e.study_id)));
        }
        for r in e.clips.values() {
            let p = m.clip_path(r);
            let h = read_clip_header(&p)?;
            let found = [h.num_frames, h.height, h.width];
            if found != r.shape {
                return Err(Error::ShapeMismatch {
                    path: p,
                    declared: r.shape,
                    found,
                });
            }
        }
    }
    Ok(m)
}

/// How clips are brought into model space on load.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub views: Vec<View>,
    /// Square output size after bicubic resizing.
    pub size: usize,
    pub equalize: bool,
}

/// Loads the given entries with the requested views, resized and equalized.
/// Entries missing a requested view are skipped.
pub fn load_studies(manifest: &DatasetManifest, indices: &[usize], opts: &LoadOptions) -> Result<Vec<MultiViewStudy>> {
    let mut out = Vec::with_capacity(indices.len());
    let mut skipped = 0;
    for &i in indices {
        let e = manifest
            .entries
            .get(i)
            .ok_or_else(|| Error::Data(format!("manifest has no entry {i}")))?;
        if !opts.views.iter().all(|v| e.clips.contains_key(v)) {
            skipped += 1;
            continue;
        }
        let mut clips = BTreeMap::new();
        for &v in &opts.views {
            let raw = read_clip(&manifest.clip_path(&e.clips[&v]), v)?;
            clips.insert(v, preprocess_clip(&raw, opts.size, opts.equalize)?);
        }
        out.push(MultiViewStudy {
            study_id: e.study_id.clone(),
            patient_id: e.patient_id.clone(),
            clips,
            label: e.label,
        });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} studies lacking a requested view");
    }
    Ok(out)
}

/// Bicubic resize to `size`×`size`, then optional histogram equalization, frame by frame.
pub fn preprocess_clip(clip: &ViewClip, size: usize, equalize: bool) -> Result<ViewClip> {
    let mut data = Vec::with_capacity(clip.num_frames * size * size);
    for t in 0..clip.num_frames {
        let f: Vec<f64> = clip.frame(t).iter().map(|&v| v as f64).collect();
        let mut r = resize_bicubic(&f, clip.height, clip.width, size, size)?;
        if equalize {
            r = histogram_equalize(&r);
        }
        data.extend(r.into_iter().map(|v| v as f32));
    }
    Ok(ViewClip {
        height: size,
        width: size,
        data,
        ..clip.clone()
    })
}
