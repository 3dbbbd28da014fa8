//! Multi-view study data: clips, labels, the on-disk manifest, patient-level
//! splitting, class-balanced batch sampling and the synthetic benchmark.

mod balance;
mod clipfile;
mod manifest;
mod split;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use balance::{balanced_batches, BatchItem};
pub use clipfile::{read_clip, read_clip_header, write_clip, ClipHeader, CLIP_MAGIC, CLIP_VERSION};
pub use manifest::{preprocess_clip, 
    load_manifest, load_studies, save_manifest, ClassCounts, ClipRef, DatasetManifest, LoadOptions, ManifestEntry,
    Partition, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
};
pub use split::{split_folds, Fold};
pub use synthetic::{flattening_range, generate_synthetic, largest_remainder, GeneratorConfig};

/// Standard echocardiographic views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    #[serde(rename = "PLAX")]
    Plax,
    #[serde(rename = "A4C")]
    A4c,
    #[serde(rename = "PSAX-P")]
    PsaxP,
    #[serde(rename = "PSAX-S")]
    PsaxS,
    #[serde(rename = "PSAX-A")]
    PsaxA,
}

impl View {
    pub const ALL: [View; 5] = [View::Plax, View::A4c, View::PsaxP, View::PsaxS, View::PsaxA];

    pub fn name(self) -> &'static str {
        match self {
            View::Plax => "PLAX",
            View::A4c => "A4C",
            View::PsaxP => "PSAX-P",
            View::PsaxS => "PSAX-S",
            View::PsaxA => "PSAX-A",
        }
    }

    pub fn index(self) -> usize {
        View::ALL.iter().position(|v| *v == self).unwrap()
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        View::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown view {s:?} (expected one of PLAX, A4C, PSAX-P, PSAX-S, PSAX-A)")))
    }
}

/// Pulmonary-hypertension severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    None,
    Mild,
    ModerateSevere,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::None, Label::Mild, Label::ModerateSevere];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Downstream classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// PH absent vs. present (mild and moderate-severe merged).
    Binary,
    /// none / mild / moderate-severe.
    Severity,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Severity => 3,
        }
    }

    pub fn class_of(self, label: Label) -> usize {
        match self {
            Task::Binary => usize::from(label != Label::None),
            Task::Severity => label.index(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Severity => "severity",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" => Ok(Task::Binary),
            "severity" => Ok(Task::Severity),
            _ => Err(Error::Config(format!("unknown task {s:?} (expected binary or severity)"))),
        }
    }
}

/// A grayscale frame sequence for one view, row-major `[T, H, W]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewClip {
    pub view: View,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps_num: u32,
    pub fps_den: u32,
    pub data: Vec<f32>,
}

impl ViewClip {
    pub fn new(view: View, num_frames: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let clip = Self {
            view,
            num_frames,
            height,
            width,
            fps_num: 25,
            fps_den: 1,
            data,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn with_fps(mut self, num: u32, den: u32) -> Self {
        self.fps_num = num;
        self.fps_den = den;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Data(format!("{} clip has an empty dimension", self.view)));
        }
        if self.data.len() != self.num_frames * self.height * self.width {
            return Err(Error::Data(format!(
                "{} clip holds {} values for shape {}x{}x{}",
                self.view,
                self.data.len(),
                self.num_frames,
                self.height,
                self.width
            )));
        }
        if self.fps_num == 0 || self.fps_den == 0 {
            return Err(Error::Data(format!("{} clip has a non-positive frame rate", self.view)));
        }
        if let Some(v) = self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("{} clip has pixel value {v} outside [0, 1]", self.view)));
        }
        Ok(())
    }

    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.num_frames, self.height, self.width]
    }
}

/// One subject's clips (at most one per view) and optional label.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewStudy {
    pub study_id: String,
    pub patient_id: String,
    pub clips: BTreeMap<View, ViewClip>,
    pub label: Option<Label>,
}

impl MultiViewStudy {
    pub fn clip(&self, view: View) -> Result<&ViewClip> {
        self.clips
            .get(&view)
            .ok_or_else(|| Error::Data(format!("study {} has no {view} clip", self.study_id)))
    }

    pub fn has_views(&self, views: &[View]) -> bool {
        views.iter().all(|v| self.clips.contains_key(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_mapping_merges_mild_and_severe() {
        let mapped: Vec<usize> = Label::ALL.iter().map(|l| Task::Binary.class_of(*l)).collect();
        assert_eq!(mapped, vec![0, 1, 1]);
        let sev: Vec<usize> = Label::ALL.iter().map(|l| Task::Severity.class_of(*l)).collect();
        assert_eq!(sev, vec![0, 1, 2]);
    }

    #[test]
    fn view_names_roundtrip() {
        for v in View::ALL {
            assert_eq!(v.name().parse::<View>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("PSAX".parse::<View>().is_err());
    }

    #[test]
    fn clip_validation() {
        assert!(ViewClip::new(View::A4c, 1, 2, 2, vec![0.0, 0.5, 1.0, 0.2]).is_ok());
        assert!(ViewClip::new(View::A4c, 1, 2, 2, vec![0.0, 0.5, 1.1, 0.2]).is_err());
        assert!(ViewClip::new(View::A4c, 0, 2, 2, vec![]).is_err());
        assert!(ViewClip::new(View::A4c, 1, 2, 2, vec![0.0; 3]).is_err());
    }
}
