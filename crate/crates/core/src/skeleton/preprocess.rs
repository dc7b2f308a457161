use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{SkeletonGraph, SkeletonSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_PAD_FRAMES: usize = 300;

/// Pads to `target` frames by cycling the valid frames: output frame `t` is
/// input frame `t mod valid_len`.
pub fn pad_repeat(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    if target < seq.valid_len {
        return Err(Error::invalid(format!(
            "cannot pad {} valid frames down to {target}; truncation is not supported",
            seq.valid_len
        )));
    }
    let s = seq.coords.shape();
    let (c, t_in, rest) = (s[0], s[1], s[2] * s[3]);
    let src = seq.coords.data();
    let mut out = Vec::with_capacity(c * target * rest);
    for ch in 0..c {
        for t in 0..target {
            let base = (ch * t_in + t % seq.valid_len) * rest;
            out.extend_from_slice(&src[base..base + rest]);
        }
    }
    seq.with_coords(Tensor::new(vec![c, target, s[2], s[3]], out)?)
}

/// Reverses the valid window (frame `t` ↦ frame `valid_len - 1 - t`) and
/// repeat-pads back to the original length.
pub fn time_reverse(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    let s = seq.coords.shape();
    let (c, t_in, rest) = (s[0], s[1], s[2] * s[3]);
    let v = seq.valid_len;
    let src = seq.coords.data();
    let mut out = Vec::with_capacity(c * t_in * rest);
    for ch in 0..c {
        for t in 0..t_in {
            let from = v - 1 - (t % v);
            let base = (ch * t_in + from) * rest;
            out.extend_from_slice(&src[base..base + rest]);
        }
    }
    seq.with_coords(Tensor::new(s.to_vec(), out)?)
}

/// Root-centers on the root joint of person 0 in frame 0 and rescales so the
/// root→reference-child bone of person 0 in frame 0 has unit length. Only
/// active person slots are transformed.
pub fn normalize_translate(
    seq: &SkeletonSequence,
    graph: &SkeletonGraph,
) -> Result<SkeletonSequence> {
    check_graph(seq, graph)?;
    let root = graph.root();
    let child = graph
        .reference_child()
        .ok_or_else(|| Error::invalid("graph has no reference bone (single joint)"))?;
    let origin = seq.point(0, root, 0);
    let tip = seq.point(0, child, 0);
    let len = (0..3).map(|c| (tip[c] - origin[c]).powi(2)).sum::<f64>().sqrt();
    if len == 0.0 || !len.is_finite() {
        return Err(Error::invalid(format!(
            "reference bone (joint {root} -> {child}) has length {len} in frame 0; cannot normalize"
        )));
    }
    let mut out = seq.clone();
    let persons = seq.persons.max(1);
    for t in 0..seq.frames() {
        for j in 0..seq.joints() {
            for m in 0..persons {
                let p = seq.point(t, j, m);
                out.set_point(t, j, m, [0, 1, 2].map(|c| (p[c] - origin[c]) / len));
            }
        }
    }
    Ok(out)
}

/// Bone vectors: joint minus parent for every non-root joint, zeros at the
/// root.
pub fn bones(seq: &SkeletonSequence, graph: &SkeletonGraph) -> Result<SkeletonSequence> {
    check_graph(seq, graph)?;
    let mut out = seq.clone();
    for t in 0..seq.frames() {
        for m in 0..seq.person_slots() {
            for j in 0..seq.joints() {
                let b = match graph.parent(j) {
                    Some(p) => {
                        let (a, b) = (seq.point(t, j, m), seq.point(t, p, m));
                        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
                    }
                    None => [0.0; 3],
                };
                out.set_point(t, j, m, b);
            }
        }
    }
    Ok(out)
}

fn check_graph(seq: &SkeletonSequence, graph: &SkeletonGraph) -> Result<()> {
    if seq.joints() != graph.joints() {
        return Err(Error::invalid(format!(
            "sequence has {} joints but the graph has {}",
            seq.joints(),
            graph.joints()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub epsilon: f64,
    pub seed: u64,
}

/// `x + ε·n` with `n` i.i.d. standard normal, drawn from a generator seeded
/// with `spec.seed`.
pub fn add_noise(seq: &SkeletonSequence, spec: &NoiseSpec) -> Result<SkeletonSequence> {
    if !spec.epsilon.is_finite() || spec.epsilon < 0.0 {
        return Err(Error::invalid(format!(
            "noise epsilon must be finite and >= 0, got {}",
            spec.epsilon
        )));
    }
    if spec.epsilon == 0.0 {
        return Ok(seq.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noisy = seq.coords.map(|v| {
        let n: f64 = StandardNormal.sample(&mut rng);
        v + spec.epsilon * n
    });
    seq.with_coords(noisy)
}
