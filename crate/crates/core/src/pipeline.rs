//! Turning raw sequences into model inputs: normalization, feature stream,
//! optional noise, padding and channel encoding.

use serde::{Deserialize, Serialize};

use crate::dct::{control_encoding_tensor, dce_encode_tensor, ControlKind, DceConfig};
use crate::error::{Error, Result};
use crate::skeleton::{
    add_noise, bones, normalize_translate, pad_repeat, NoiseSpec, SkeletonGraph, SkeletonSequence,
    COORD_CHANNELS,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureStream {
    #[default]
    Joint,
    Bone,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    None,
    Dce {
        k: usize,
        #[serde(default = "yes")]
        include_original: bool,
    },
    /// Extra blocks `u⊙x` with `u` uniform on `[-1, 1]`, drawn once from
    /// `seed` and shared by every sequence of the same shape.
    RandPm1 { k: usize, seed: u64 },
    Repeat { k: usize },
}

fn yes() -> bool {
    true
}

impl Encoding {
    pub fn dce(k: usize) -> Self {
        Encoding::Dce {
            k,
            include_original: true,
        }
    }

    /// Channel multiplier applied to the coordinate channels.
    pub fn blocks(&self) -> usize {
        match *self {
            Encoding::None => 1,
            Encoding::Dce {
                k,
                include_original,
            } => k + usize::from(include_original),
            Encoding::RandPm1 { k, .. } | Encoding::Repeat { k } => k + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Encoding::None => Ok(()),
            Encoding::Dce { k, .. } | Encoding::RandPm1 { k, .. } | Encoding::Repeat { k }
                if k == 0 =>
            {
                Err(Error::invalid("encoding needs K >= 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match *self {
            Encoding::None => Ok(x.clone()),
            Encoding::Dce {
                k,
                include_original,
            } => dce_encode_tensor(x, &DceConfig { k, include_original }),
            Encoding::RandPm1 { k, seed } => control_encoding_tensor(x, ControlKind::RandPm1, k, seed),
            Encoding::Repeat { k } => control_encoding_tensor(x, ControlKind::Repeat, k, 0),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Encoding::None => "none".into(),
            Encoding::Dce { k, .. } => format!("dce{k}"),
            Encoding::RandPm1 { k, .. } => format!("rand_pm1_{k}"),
            Encoding::Repeat { k } => format!("repeat{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pipeline {
    pub features: FeatureStream,
    pub encoding: Encoding,
    /// Repeat-pad every sequence to this many frames.
    #[serde(default)]
    pub frames: Option<usize>,
}

impl Pipeline {
    pub fn new(features: FeatureStream, encoding: Encoding) -> Self {
        Pipeline {
            features,
            encoding,
            frames: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.encoding.blocks() * COORD_CHANNELS
    }

    /// Padding, normalization, optional noise on joint positions, then the
    /// feature stream.
    pub fn features(
        &self,
        seq: &SkeletonSequence,
        graph: &SkeletonGraph,
        noise: Option<&NoiseSpec>,
    ) -> Result<SkeletonSequence> {
        let padded = match self.frames {
            Some(t) if t != seq.frames() => pad_repeat(seq, t)?,
            _ => seq.clone(),
        };
        let mut s = normalize_translate(&padded, graph)?;
        if let Some(n) = noise {
            s = add_noise(&s, n)?;
        }
        match self.features {
            FeatureStream::Joint => Ok(s),
            FeatureStream::Bone => bones(&s, graph),
        }
    }

    pub fn encode(&self, seq: &SkeletonSequence) -> Result<Tensor> {
        self.encoding.apply(&seq.coords)
    }

    pub fn prepare(
        &self,
        seq: &SkeletonSequence,
        graph: &SkeletonGraph,
        noise: Option<&NoiseSpec>,
    ) -> Result<Tensor> {
        self.encode(&self.features(seq, graph, noise)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{synth_generate, SyntheticSpec};

    #[test]
    fn channel_counts() {
        assert_eq!(Pipeline::new(FeatureStream::Joint, Encoding::dce(8)).in_channels(), 27);
        assert_eq!(Pipeline::default().in_channels(), 3);
        let tte = Encoding::Dce {
            k: 3,
            include_original: false,
        };
        assert_eq!(Pipeline::new(FeatureStream::Joint, tte).in_channels(), 9);
        assert!(Encoding::Repeat { k: 0 }.validate().is_err());
    }

    #[test]
    fn prepare_shapes_and_serde() {
        let data = synth_generate(&SyntheticSpec::new(1, &[], 16, 1, 3).unwrap()).unwrap();
        let g = SkeletonGraph::body9();
        let p = Pipeline {
            features: FeatureStream::Bone,
            encoding: Encoding::RandPm1 { k: 2, seed: 4 },
            frames: Some(32),
        };
        let x = p.prepare(&data.samples[0], &g, None).unwrap();
        assert_eq!(x.shape(), &[9, 32, 9, 1]);
        assert_eq!(p.prepare(&data.samples[0], &g, None).unwrap(), x);
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Pipeline>(&text).unwrap(), p);
    }
}
