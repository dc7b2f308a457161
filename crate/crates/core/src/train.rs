//! SGD with momentum, the step schedule, evaluation and ensembling.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{combined_loss, crl_loss, cross_entropy, LossWeights};
use crate::model::{ModelConfig, ParamCount, RecognizerModel};
use crate::pipeline::Pipeline;
use crate::skeleton::{time_reverse, Dataset, NoiseSpec, SkeletonGraph};
use crate::tensor::{softmax, Tape, Tensor};

/// Epochs at which the reference 60-epoch schedule decays.
pub const REFERENCE_DECAYS: [usize; 4] = [28, 36, 44, 52];
pub const REFERENCE_EPOCHS: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub pipeline: Pipeline,
    /// Stop after the first epoch whose validation accuracy reaches this.
    #[serde(default)]
    pub stop_at_accuracy: Option<f64>,
    /// Rescale each batch gradient to at most this global L2 norm.
    #[serde(default)]
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.05,
            momentum: 0.9,
            epochs: REFERENCE_EPOCHS,
            decay_epochs: REFERENCE_DECAYS.to_vec(),
            decay_factor: 0.1,
            batch_size: 16,
            seed: 0,
            weights: LossWeights::default(),
            pipeline: Pipeline::default(),
            stop_at_accuracy: None,
            clip_grad_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    /// The reference schedule compressed to `epochs`: every decay epoch is
    /// scaled by `epochs / 60` and rounded to the nearest integer.
    pub fn scaled(epochs: usize) -> Self {
        TrainConfig {
            epochs,
            decay_epochs: scaled_decays(epochs),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return bad(format!("lr0 must be finite and >= 0, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !self.decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!("decay epochs must increase strictly: {:?}", self.decay_epochs));
        }
        if self.decay_epochs.last().is_some_and(|&e| e >= self.epochs) {
            return bad(format!(
                "decay epochs {:?} must precede the final epoch {}",
                self.decay_epochs, self.epochs
            ));
        }
        self.weights.validate()?;
        self.pipeline.encoding.validate()
    }
}

pub fn scaled_decays(epochs: usize) -> Vec<usize> {
    let mut out: Vec<usize> = REFERENCE_DECAYS
        .iter()
        .map(|&e| (e as f64 * epochs as f64 / REFERENCE_EPOCHS as f64).round() as usize)
        .filter(|&e| e > 0 && e < epochs)
        .collect();
    out.dedup();
    out
}

/// `lr0 · factor^(number of decay epochs ≤ epoch)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let n = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.lr0 * cfg.decay_factor.powi(n as i32)
}

/// `v ← μ·v + g; p ← p − lr·v` for every parameter.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::invalid(format!(
            "sgd_step got {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Scales `grads` down so their joint L2 norm is at most `max`; returns the
/// norm before scaling.
pub fn clip_to_norm(grads: &mut [Tensor], max: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = max / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// An encoded input with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub label: usize,
}

/// Runs every sample of `data` through `pipeline`.
pub fn prepare(
    data: &Dataset,
    pipeline: &Pipeline,
    graph: &SkeletonGraph,
    noise: Option<&NoiseSpec>,
) -> Result<Vec<Example>> {
    data.samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            // Distinct, reproducible noise per sample.
            let n = noise.map(|n| NoiseSpec {
                epsilon: n.epsilon,
                seed: n.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64),
            });
            Ok(Example {
                input: pipeline.prepare(s, graph, n.as_ref())?,
                label: s.label,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean combined loss over the epoch's samples.
    pub loss: f64,
    pub cls_loss: f64,
    pub crl_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub config: TrainConfig,
    #[serde(default)]
    pub class_names: Vec<String>,
    pub model_config: ModelConfig,
    pub epochs: Vec<EpochMetrics>,
    pub final_val_accuracy: Option<f64>,
    pub evaluation: Option<Evaluation>,
    pub param_count: ParamCount,
    pub wall_time_secs: f64,
}

impl TrainRun {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

struct SampleResult {
    grads: Vec<Tensor>,
    loss: f64,
    cls: f64,
    crl: f64,
    correct: bool,
}

fn sample_step(model: &RecognizerModel, ex: &Example, w: &LossWeights) -> Result<SampleResult> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let x = tape.constant(ex.input.clone());
    let out = model.forward_on(&mut tape, &vars, x)?;
    let cls = cross_entropy(&mut tape, out.logits, ex.label)?;
    let v = model.chron_head_on(&mut tape, &vars, out.embeddings)?;
    let crl = crl_loss(&mut tape, v)?;
    let loss = combined_loss(&mut tape, cls, crl, w)?;
    tape.backward(loss)?;
    Ok(SampleResult {
        grads: vars.iter().map(|&v| tape.grad_tensor(v)).collect(),
        loss: tape.value(loss).item()?,
        cls: tape.value(cls).item()?,
        crl: tape.value(crl).item()?,
        correct: argmax(tape.value(out.logits).data()) == ex.label,
    })
}

/// Trains a fresh model from `model_cfg`. Deterministic under `cfg.seed`:
/// the initialization, the per-epoch shuffle and the gradient reduction
/// order depend on nothing else.
pub fn train(
    model_cfg: &ModelConfig,
    graph: &SkeletonGraph,
    train_set: &[Example],
    val_set: Option<&[Example]>,
    cfg: &TrainConfig,
) -> Result<(RecognizerModel, TrainRun)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if model_cfg.in_channels != cfg.pipeline.in_channels() {
        return Err(Error::invalid(format!(
            "encoding {} yields {} channels but the model consumes {}",
            cfg.pipeline.encoding.label(),
            cfg.pipeline.in_channels(),
            model_cfg.in_channels
        )));
    }
    let start = Instant::now();
    let mut model = RecognizerModel::new(model_cfg.clone(), graph.clone(), cfg.seed)?;
    let mut velocity: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F5A_3D1E);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let n = train_set.len() as f64;

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut loss, mut cls, mut crl, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<SampleResult> = batch
                .par_iter()
                .map(|&i| sample_step(&model, &train_set[i], &cfg.weights))
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Tensor> =
                model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
            for r in &results {
                if !r.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        loss: r.loss,
                    });
                }
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * b;
                    }
                }
                loss += r.loss;
                cls += r.cls;
                crl += r.crl;
                correct += usize::from(r.correct);
            }
            if let Some(max) = cfg.clip_grad_norm {
                clip_to_norm(&mut grads, max);
            }
            sgd_step(model.params_mut(), &grads, &mut velocity, lr, cfg.momentum)?;
            if model.params().iter().any(|p| !p.all_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
        let val_accuracy = match val_set {
            Some(v) if !v.is_empty() => Some(accuracy(&model, v)?),
            _ => None,
        };
        history.push(EpochMetrics {
            epoch,
            lr,
            loss: loss / n,
            cls_loss: cls / n,
            crl_loss: crl / n,
            train_accuracy: correct as f64 / n,
            val_accuracy,
        });
        if let (Some(target), Some(acc)) = (cfg.stop_at_accuracy, val_accuracy) {
            if acc >= target {
                break;
            }
        }
    }

    let evaluation = match val_set {
        Some(v) if !v.is_empty() => Some(evaluate(&model, v)?),
        _ => None,
    };
    let run = TrainRun {
        config: cfg.clone(),
        class_names: Vec::new(),
        model_config: model_cfg.clone(),
        final_val_accuracy: evaluation.as_ref().map(|e| e.accuracy),
        evaluation,
        param_count: model.param_count(),
        epochs: history,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, run))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Logits for every example, in order.
pub fn predict_logits(model: &RecognizerModel, data: &[Example]) -> Result<Vec<Vec<f64>>> {
    data.par_iter().map(|ex| model.logits(&ex.input)).collect()
}

pub fn accuracy(model: &RecognizerModel, data: &[Example]) -> Result<f64> {
    Ok(evaluate(model, data)?.accuracy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `None` for classes without samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Most frequent wrong prediction per class; `None` when the class is
    /// never misclassified.
    pub most_confused: Vec<Option<usize>>,
}

impl Evaluation {
    pub fn from_predictions(num_classes: usize, labels: &[usize], predicted: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty dataset"));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&y, &p) in labels.iter().zip(predicted) {
            if y >= num_classes || p >= num_classes {
                return Err(Error::invalid(format!(
                    "label {y} or prediction {p} outside {num_classes} classes"
                )));
            }
            confusion[y][p] += 1;
        }
        let trace: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[c] as f64 / total as f64)
            })
            .collect();
        let most_confused = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let mut best: Option<usize> = None;
                for (j, &n) in row.iter().enumerate() {
                    if j != c && n > 0 && best.is_none_or(|b| n > row[b]) {
                        best = Some(j);
                    }
                }
                best
            })
            .collect();
        Ok(Evaluation {
            accuracy: trace as f64 / labels.len() as f64,
            per_class_accuracy,
            confusion,
            most_confused,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    /// `true\predicted` matrix with a header row.
    pub fn confusion_csv(&self) -> String {
        let k = self.num_classes();
        let mut out = String::from("true");
        for j in 0..k {
            out.push_str(&format!(",pred_{j}"));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Top-1 accuracy, per-class accuracy, confusion matrix and most-confused
/// class.
pub fn evaluate(model: &RecognizerModel, data: &[Example]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let logits = predict_logits(model, data)?;
    let predicted: Vec<usize> = logits.iter().map(|z| argmax(z)).collect();
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    Evaluation::from_predictions(model.config().num_classes, &labels, &predicted)
}

/// Averages per-model probability vectors sample by sample and scores the
/// argmax. `probs[m][i]` is model `m`'s distribution for sample `i`.
pub fn ensemble_from_probabilities(probs: &[Vec<Vec<f64>>], labels: &[usize]) -> Result<Evaluation> {
    let first = probs
        .first()
        .ok_or_else(|| Error::invalid("ensemble needs at least one model"))?;
    let k = first.first().map_or(0, Vec::len);
    for p in probs {
        if p.len() != labels.len() || p.iter().any(|v| v.len() != k) {
            return Err(Error::invalid(
                "ensemble members disagree on the sample or class count",
            ));
        }
    }
    let predicted: Vec<usize> = (0..labels.len())
        .map(|i| {
            let mut avg = vec![0.0; k];
            for p in probs {
                for (a, v) in avg.iter_mut().zip(&p[i]) {
                    *a += v / probs.len() as f64;
                }
            }
            argmax(&avg)
        })
        .collect();
    Evaluation::from_predictions(k, labels, &predicted)
}

/// A trained model with the pipeline that produces its inputs.
#[derive(Clone, Copy, Debug)]
pub struct EnsembleMember<'a> {
    pub model: &'a RecognizerModel,
    pub pipeline: &'a Pipeline,
}

/// Softmax-averaging ensemble over raw sequences; each member prepares its
/// own inputs.
pub fn ensemble_eval(
    members: &[EnsembleMember<'_>],
    data: &Dataset,
    graph: &SkeletonGraph,
    noise: Option<&NoiseSpec>,
) -> Result<Evaluation> {
    let classes = members
        .first()
        .ok_or_else(|| Error::invalid("ensemble needs at least one model"))?
        .model
        .config()
        .num_classes;
    if members.iter().any(|m| m.model.config().num_classes != classes) {
        return Err(Error::invalid("ensemble members disagree on the class count"));
    }
    let mut probs = Vec::with_capacity(members.len());
    for m in members {
        let examples = prepare(data, m.pipeline, graph, noise)?;
        let logits = predict_logits(m.model, &examples)?;
        probs.push(logits.iter().map(|z| softmax(z)).collect());
    }
    let labels: Vec<usize> = data.samples.iter().map(|s| s.label).collect();
    ensemble_from_probabilities(&probs, &labels)
}

/// Reversal-pair discrimination. Every sample whose label belongs to a pair
/// `(a, b)` is scored twice: as-is against its own label and time-reversed
/// (after feature extraction) against the partner label. A score counts as
/// correct when the true member of the pair has the larger logit, ties going
/// to the lower class index.
pub fn pair_discrimination(
    model: &RecognizerModel,
    pipeline: &Pipeline,
    graph: &SkeletonGraph,
    data: &Dataset,
    pairs: &[(usize, usize)],
) -> Result<f64> {
    let partner = |y: usize| {
        pairs.iter().find_map(|&(a, b)| {
            if y == a {
                Some(b)
            } else if y == b {
                Some(a)
            } else {
                None
            }
        })
    };
    let scores: Vec<[bool; 2]> = data
        .samples
        .par_iter()
        .filter_map(|s| partner(s.label).map(|p| (s, p)))
        .map(|(s, p)| {
            let feats = pipeline.features(s, graph, None)?;
            let rev = time_reverse(&feats)?;
            let judge = |input: &Tensor, truth: usize, other: usize| -> Result<bool> {
                let z = model.logits(input)?;
                let (lo, hi) = (truth.min(other), truth.max(other));
                let pick = if z[hi] > z[lo] { hi } else { lo };
                Ok(pick == truth)
            };
            Ok([
                judge(&pipeline.encode(&feats)?, s.label, p)?,
                judge(&pipeline.encode(&rev)?, p, s.label)?,
            ])
        })
        .collect::<Result<_>>()?;
    if scores.is_empty() {
        return Err(Error::invalid("no samples belong to a reversal pair"));
    }
    let hits: usize = scores.iter().flatten().filter(|&&b| b).count();
    Ok(hits as f64 / (2 * scores.len()) as f64)
}
