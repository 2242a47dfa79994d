//! Feature bags on disk, manifests, temporal subsampling and the synthetic
//! dataset generator.

mod bag;
mod manifest;
mod sample;
mod synth;

use serde::{Deserialize, Serialize};

pub use bag::{decode_bag, encode_bag, read_bag, write_bag, FeatureBag, FB1_MAGIC, FB1_VERSION};
pub use manifest::{load_dataset, Manifest, ManifestEntry, FRAMES_PER_SNIPPET};
pub use sample::{uniform_sample, uniform_sample_indices};
pub use synth::{generate_synthetic, write_synthetic, SynthSpec, SyntheticDataset, SyntheticSplit};

/// Video-level label; serialized as `0` (normal) or `1` (abnormal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Normal => 0.0,
            Label::Abnormal => 1.0,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Abnormal),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }
}
