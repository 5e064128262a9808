//! Audio, visual and fused frame features.
//!
//! Everything here operates on one utterance at a time and is pure: the same
//! inputs (and seed, where noise is involved) always give the same output.

mod landmarks;
mod normalize;
mod pca;
mod spectral;
mod waveform;

pub mod io;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use landmarks::{landmark_features, LandmarkTrack, NUM_LIP_POINTS};
pub use normalize::{cmvn, fuse, shift_modality, stack_context};
pub use pca::{apply_pca, fit_pca, synthetic_descriptors, PcaModel};
pub use spectral::{
    compute_fbank, compute_fbank_pitch, compute_mfcc, compute_pitch_proxy, hz_to_mel, mel_to_hz,
    SpectralConfig, ENERGY_FLOOR,
};
pub use waveform::{add_noise_at_snr, snr_grid, Waveform};

/// One video frame at 30 fps.
pub const DEFAULT_FRAME_SHIFT_MS: f64 = 100.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Video,
    Fused,
}

/// A `T x D` matrix of frame vectors for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: Array2<f64>,
    frame_shift_ms: f64,
    modality: Modality,
    dim_labels: Option<Vec<String>>,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f64>, frame_shift_ms: f64, modality: Modality) -> Result<Self> {
        let (t, d) = frames.dim();
        if t == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "feature matrix must be non-empty, got {t}x{d}"
            )));
        }
        if !(frame_shift_ms.is_finite() && frame_shift_ms > 0.0) {
            return Err(Error::invalid(format!(
                "frame shift must be positive, got {frame_shift_ms}"
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix contains non-finite values"));
        }
        Ok(Self {
            frames,
            frame_shift_ms,
            modality,
            dim_labels: None,
        })
    }

    /// Builds a sequence at the default 33⅓ ms frame shift.
    pub fn from_frames(frames: Array2<f64>, modality: Modality) -> Result<Self> {
        Self::new(frames, DEFAULT_FRAME_SHIFT_MS, modality)
    }

    pub fn with_dim_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: labels.len(),
            });
        }
        self.dim_labels = Some(labels);
        Ok(self)
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame_shift_ms(&self) -> f64 {
        self.frame_shift_ms
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim_labels(&self) -> Option<&[String]> {
        self.dim_labels.as_deref()
    }

    /// Same metadata, new frame matrix. Labels are dropped if the width changes.
    pub(crate) fn replace_frames(&self, frames: Array2<f64>) -> Result<Self> {
        let keep_labels = frames.ncols() == self.dim();
        let mut out = Self::new(frames, self.frame_shift_ms, self.modality)?;
        if keep_labels {
            out.dim_labels = self.dim_labels.clone();
        }
        Ok(out)
    }
}
