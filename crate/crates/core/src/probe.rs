//! Chronological-order probe: does an input encoding let a backbone emit
//! per-frame values that rise with time?

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dct::{dce_encode_tensor, DceConfig};
use crate::error::{Error, Result};
use crate::losses::probe_order_loss;
use crate::model::{ModelConfig, RecognizerModel};
use crate::pipeline::{FeatureStream, Pipeline};
use crate::skeleton::{Dataset, SkeletonGraph, COORD_CHANNELS};
use crate::tensor::{ReduceKind, Tape, Tensor, Var};
use crate::train::{clip_to_norm, sgd_step};

/// Adjacent pairs closer than this count as non-decreasing.
pub const MONOTONE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Raw coordinates.
    None,
    /// `K` blocks `ε⊙x`, `ε` uniform on `[0, 1]` per element, frozen per
    /// sequence.
    Random,
    /// Cosine blocks `b_k⊙x`, `k < K`.
    Tte,
}

impl ProbeKind {
    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::None => "none",
            ProbeKind::Random => "random",
            ProbeKind::Tte => "tte",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub k: usize,
    /// Keep the raw block in front of the cosine blocks (tte only).
    pub include_original: bool,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_grad_norm: Option<f64>,
    pub widths: Vec<usize>,
    pub hidden: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            kind: ProbeKind::Tte,
            k: 3,
            include_original: false,
            lr: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            clip_grad_norm: Some(1.0),
            widths: vec![16, 32, 48],
            hidden: 32,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind != ProbeKind::None && self.k == 0 {
            return Err(Error::invalid("probe K must be >= 1"));
        }
        if self.batch_size == 0 || !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid("probe needs a positive batch size and finite lr"));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        match self.kind {
            ProbeKind::None => COORD_CHANNELS,
            ProbeKind::Random => self.k * COORD_CHANNELS,
            ProbeKind::Tte => (self.k + usize::from(self.include_original)) * COORD_CHANNELS,
        }
    }

    /// Encodes normalized coordinates. `seq_seed` freezes the random kind's
    /// weights for one sequence.
    pub fn encode(&self, x: &Tensor, seq_seed: u64) -> Result<Tensor> {
        match self.kind {
            ProbeKind::None => Ok(x.clone()),
            ProbeKind::Tte => dce_encode_tensor(
                x,
                &DceConfig {
                    k: self.k,
                    include_original: self.include_original,
                },
            ),
            ProbeKind::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seq_seed);
                let mut out = Vec::with_capacity(self.k * x.numel());
                for _ in 0..self.k {
                    out.extend(x.data().iter().map(|v| rng.random_range(0.0..=1.0) * v));
                }
                let mut shape = x.shape().to_vec();
                shape[0] *= self.k;
                Tensor::new(shape, out)
            }
        }
    }
}

/// `(v − min v) / (max v − min v)` recorded on the tape. A constant `v`
/// yields zeros with no gradient and `true` as the degenerate flag.
pub fn minmax_norm_on(tape: &mut Tape, v: Var) -> Result<(Var, bool)> {
    let shape = tape.shape(v).to_vec();
    if shape.len() != 1 {
        return Err(Error::InvalidShape {
            shape,
            reason: "minmax_norm expects a 1-D value".into(),
        });
    }
    let hi = tape.reduce(v, 0, ReduceKind::Max)?;
    let neg = tape.neg(v);
    let neg_lo = tape.reduce(neg, 0, ReduceKind::Max)?;
    let lo = tape.neg(neg_lo);
    let range = tape.sub(hi, lo)?;
    if tape.value(range).item()? == 0.0 {
        return Ok((tape.constant(Tensor::zeros(&shape)), true));
    }
    let lo_b = tape.broadcast_scalar(lo, &shape)?;
    let shifted = tape.sub(v, lo_b)?;
    let inv = tape.recip(range);
    let inv_b = tape.broadcast_scalar(inv, &shape)?;
    Ok((tape.mul(shifted, inv_b)?, false))
}

/// Plain-value min-max normalization with the degenerate flag.
pub fn minmax_norm(v: &[f64]) -> (Vec<f64>, bool) {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    if v.is_empty() || hi == lo {
        return (vec![0.0; v.len()], true);
    }
    (v.iter().map(|x| (x - lo) / (hi - lo)).collect(), false)
}

/// Share of adjacent pairs with `v[t+1] ≥ v[t] − 1e-12`.
pub fn monotonicity_fraction(v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::invalid(format!(
            "monotonicity needs at least 2 values, got {}",
            v.len()
        )));
    }
    let ok = v
        .windows(2)
        .filter(|p| p[1] >= p[0] - MONOTONE_TOLERANCE)
        .count();
    Ok(ok as f64 / (v.len() - 1) as f64)
}

/// A probe network: backbone without the final temporal pooling plus the
/// per-frame perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub config: ProbeConfig,
    pub model: RecognizerModel,
}

#[derive(Clone, Debug)]
struct ProbeInput {
    input: Tensor,
}

impl Probe {
    pub fn new(cfg: ProbeConfig, graph: &SkeletonGraph) -> Result<Self> {
        cfg.validate()?;
        let model_cfg = ModelConfig {
            chron_hidden: cfg.hidden,
            ..ModelConfig::new(cfg.in_channels(), graph.joints(), 1).with_widths(&cfg.widths)
        };
        let model = RecognizerModel::new(model_cfg, graph.clone(), cfg.seed)?;
        Ok(Probe { config: cfg, model })
    }

    fn record(&self, tape: &mut Tape, vars: &[Var], input: &Tensor) -> Result<(Var, bool)> {
        let x = tape.constant(input.clone());
        let out = self.model.forward_on(tape, vars, x)?;
        let v = self.model.chron_head_on(tape, vars, out.embeddings)?;
        minmax_norm_on(tape, v)
    }

    /// Normalized per-frame values and the degenerate flag.
    pub fn forward(&self, input: &Tensor) -> Result<(Vec<f64>, bool)> {
        let mut tape = Tape::new();
        let vars = self.model.bind_frozen(&mut tape);
        let (v, degenerate) = self.record(&mut tape, &vars, input)?;
        Ok((tape.value(v).data().to_vec(), degenerate))
    }

    fn encode_all(&self, data: &Dataset, graph: &SkeletonGraph, salt: u64) -> Result<Vec<ProbeInput>> {
        let pipe = Pipeline::new(FeatureStream::Joint, Default::default());
        data.samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let feats = pipe.features(s, graph, None)?;
                let seq_seed = self.config.seed ^ salt ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                Ok(ProbeInput {
                    input: self.config.encode(&feats.coords, seq_seed)?,
                })
            })
            .collect()
    }

    /// Curves and monotonicity fractions on `data`.
    pub fn measure(&self, data: &Dataset, graph: &SkeletonGraph) -> Result<ProbeCurves> {
        let inputs = self.encode_all(data, graph, HELD_OUT_SALT)?;
        let outs: Vec<(Vec<f64>, bool)> = inputs
            .par_iter()
            .map(|p| self.forward(&p.input))
            .collect::<Result<_>>()?;
        let fractions = outs
            .iter()
            .map(|(v, _)| monotonicity_fraction(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProbeCurves {
            mean_fraction: fractions.iter().sum::<f64>() / fractions.len().max(1) as f64,
            degenerate: outs.iter().map(|o| o.1).collect(),
            curves: outs.into_iter().map(|o| o.0).collect(),
            fractions,
        })
    }
}

const TRAIN_SALT: u64 = 0x7A11;
const HELD_OUT_SALT: u64 = 0x4E1D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeCurves {
    pub curves: Vec<Vec<f64>>,
    pub fractions: Vec<f64>,
    pub mean_fraction: f64,
    pub degenerate: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub config: ProbeConfig,
    pub epoch_loss: Vec<f64>,
    pub output_frames: usize,
    pub held_out: ProbeCurves,
}

impl ProbeReport {
    /// `frame,value,kind,sample` rows for every held-out curve.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("frame,value,kind,sample\n");
        for (i, c) in self.held_out.curves.iter().enumerate() {
            for (t, v) in c.iter().enumerate() {
                let _ = writeln!(out, "{t},{v},{},{i}", self.config.kind.name());
            }
        }
        out
    }
}

/// Trains a probe on `train` with the probe order loss and measures it on
/// `held_out`. Deterministic under `cfg.seed`.
pub fn probe_train(
    train: &Dataset,
    held_out: &Dataset,
    graph: &SkeletonGraph,
    cfg: &ProbeConfig,
) -> Result<(Probe, ProbeReport)> {
    if train.is_empty() || held_out.is_empty() {
        return Err(Error::invalid("probe needs non-empty training and held-out sets"));
    }
    let mut probe = Probe::new(cfg.clone(), graph)?;
    let inputs = probe.encode_all(train, graph, TRAIN_SALT)?;
    let mut velocity: Vec<Tensor> = probe
        .model
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.shape()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0B5E_55ED);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Vec<Tensor>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut tape = Tape::new();
                    let vars = probe.model.bind(&mut tape);
                    let (v, _) = probe.record(&mut tape, &vars, &inputs[i].input)?;
                    let loss = probe_order_loss(&mut tape, v)?;
                    tape.backward(loss)?;
                    Ok((
                        tape.value(loss).item()?,
                        vars.iter().map(|&v| tape.grad_tensor(v)).collect(),
                    ))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Tensor> = probe
                .model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss: *loss });
                }
                total += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += scale * b;
                    }
                }
            }
            if let Some(max) = cfg.clip_grad_norm {
                clip_to_norm(&mut grads, max);
            }
            sgd_step(probe.model.params_mut(), &grads, &mut velocity, cfg.lr, cfg.momentum)?;
        }
        epoch_loss.push(total / inputs.len() as f64);
    }
    let held = probe.measure(held_out, graph)?;
    let frames = held.curves.first().map_or(0, Vec::len);
    let report = ProbeReport {
        config: cfg.clone(),
        epoch_loss,
        output_frames: frames,
        held_out: held,
    };
    Ok((probe, report))
}
