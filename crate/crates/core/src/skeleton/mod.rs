//! Skeleton sequences, the joint graph, preprocessing, file formats and the
//! synthetic action generator.

mod dataset;
mod graph;
mod io;
mod preprocess;
mod synth;

pub use dataset::{Dataset, DatasetEntry, DatasetManifest, MANIFEST_FILE};
pub use graph::{SkeletonGraph, BODY9_JOINTS};
pub use io::{load, save, SEQUENCE_FORMAT_VERSION};
pub use preprocess::{
    add_noise, bones, normalize_translate, pad_repeat, time_reverse, NoiseSpec,
    DEFAULT_PAD_FRAMES,
};
pub use synth::{synth_generate, ClassProgram, Motion, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of coordinate channels (x, y, z).
pub const COORD_CHANNELS: usize = 3;

/// A skeletal motion clip: `coords` is a `C×T×N×M` tensor (channels, frames,
/// joints, persons).
///
/// Frames at or beyond `valid_len` are padding. Person slots at or beyond
/// `persons` are unused.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub coords: Tensor,
    pub label: usize,
    pub valid_len: usize,
    pub persons: usize,
}

impl SkeletonSequence {
    pub fn new(coords: Tensor, label: usize, valid_len: usize, persons: usize) -> Result<Self> {
        let seq = SkeletonSequence {
            coords,
            label,
            valid_len,
            persons,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.coords.shape();
        if s.len() != 4 || s[0] != COORD_CHANNELS {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("expected {COORD_CHANNELS}×T×N×M"),
            });
        }
        if self.valid_len == 0 || self.valid_len > s[1] {
            return Err(Error::invalid(format!(
                "valid_len {} outside [1, {}]",
                self.valid_len, s[1]
            )));
        }
        if self.persons > s[3] {
            return Err(Error::invalid(format!(
                "persons {} exceeds person slots {}",
                self.persons, s[3]
            )));
        }
        if !self.coords.all_finite() {
            return Err(Error::NonFinite("skeleton coordinates".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.coords.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.coords.shape()[2]
    }

    pub fn person_slots(&self) -> usize {
        self.coords.shape()[3]
    }

    pub fn point(&self, t: usize, joint: usize, person: usize) -> [f64; 3] {
        [0, 1, 2].map(|c| self.coords.get(&[c, t, joint, person]))
    }

    pub fn set_point(&mut self, t: usize, joint: usize, person: usize, p: [f64; 3]) {
        for (c, v) in p.into_iter().enumerate() {
            self.coords.set(&[c, t, joint, person], v);
        }
    }

    /// The per-channel time series of one joint of one person.
    pub fn series(&self, channel: usize, joint: usize, person: usize) -> Vec<f64> {
        (0..self.frames())
            .map(|t| self.coords.get(&[channel, t, joint, person]))
            .collect()
    }

    /// Same sequence with the coordinate tensor replaced.
    pub fn with_coords(&self, coords: Tensor) -> Result<Self> {
        SkeletonSequence::new(coords, self.label, self.valid_len, self.persons)
    }
}
