//! Chronological, classification and combined objectives.
//!
//! Every loss comes in two forms: a tape version that records the
//! computation for backpropagation, and a plain `*_value` version on slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_crl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_crl: 1.0 }
    }
}

impl LossWeights {
    pub fn new(lambda_crl: f64) -> Result<Self> {
        let w = LossWeights { lambda_crl };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_crl.is_finite() && self.lambda_crl >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda_crl must be finite and >= 0, got {}",
                self.lambda_crl
            )));
        }
        Ok(())
    }
}

fn check_len(len: usize) -> Result<()> {
    if len < 2 {
        return Err(Error::invalid(format!(
            "chronological losses need at least 2 values, got {len}"
        )));
    }
    Ok(())
}

// v[t] - v[t+1] for every adjacent pair of a 1-D variable.
fn adjacent_drops(tape: &mut Tape, v: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    if shape.len() != 1 {
        return Err(Error::InvalidShape {
            shape,
            reason: "chronological values must be 1-D".into(),
        });
    }
    let n = shape[0];
    check_len(n)?;
    let head = tape.narrow(v, 0, 0, n - 1)?;
    let tail = tape.narrow(v, 0, 1, n - 1)?;
    tape.sub(head, tail)
}

/// `Σ_t relu(v_t − v_{t+1})`: zero exactly when `v` is non-decreasing.
pub fn crl_loss(tape: &mut Tape, v: Var) -> Result<Var> {
    let d = adjacent_drops(tape, v)?;
    let r = tape.relu(d);
    tape.sum_all(r)
}

/// `Σ_t (v_t − v_{t+1})`, which telescopes to `v_first − v_last` and so
/// cannot tell a monotone sequence from an oscillating one.
pub fn naive_chron_loss(tape: &mut Tape, v: Var) -> Result<Var> {
    let d = adjacent_drops(tape, v)?;
    tape.sum_all(d)
}

/// Same form as [`crl_loss`], applied to normalized probe outputs.
pub fn probe_order_loss(tape: &mut Tape, v: Var) -> Result<Var> {
    crl_loss(tape, v)
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    tape.cross_entropy(logits, label)
}

/// `cls + λ·crl`.
pub fn combined_loss(tape: &mut Tape, cls: Var, crl: Var, w: &LossWeights) -> Result<Var> {
    let weighted = tape.scale(crl, w.lambda_crl);
    tape.add(cls, weighted)
}

pub fn crl_value(v: &[f64]) -> Result<f64> {
    check_len(v.len())?;
    Ok(v.windows(2).map(|p| (p[0] - p[1]).max(0.0)).sum())
}

pub fn naive_chron_value(v: &[f64]) -> Result<f64> {
    check_len(v.len())?;
    Ok(v.windows(2).map(|p| p[0] - p[1]).sum())
}

pub fn cross_entropy_value(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

pub fn combined_value(cls: f64, crl: f64, w: &LossWeights) -> Result<f64> {
    if !cls.is_finite() || !crl.is_finite() {
        return Err(Error::NonFinite(format!("loss terms cls = {cls}, crl = {crl}")));
    }
    Ok(cls + w.lambda_crl * crl)
}

/// Class probabilities of a logit vector.
pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    softmax(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tensor, DEFAULT_GRAD_CHECK_EPS};
    use proptest::prelude::*;

    fn tape_value(f: fn(&mut Tape, Var) -> Result<Var>, v: &[f64]) -> f64 {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(v.to_vec()));
        let l = f(&mut t, x).unwrap();
        t.value(l).item().unwrap()
    }

    #[test]
    fn crl_examples() {
        assert_eq!(crl_value(&[0.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(crl_value(&[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(crl_value(&[0.0, 2.0, 1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(tape_value(crl_loss, &[0.0, 2.0, 1.0, 3.0]), 1.0);
        assert!(crl_value(&[1.0]).is_err());
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0]));
        assert!(crl_loss(&mut t, x).is_err());
    }

    #[test]
    fn naive_examples() {
        assert_eq!(naive_chron_value(&[3.0, 0.0]).unwrap(), 3.0);
        let mono = naive_chron_value(&[0.0, 1.0, 2.0, 2.0]).unwrap();
        let osc = naive_chron_value(&[0.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(mono, osc);
        assert_eq!(tape_value(naive_chron_loss, &[0.0, 2.0, 1.0, 2.0]), -2.0);
    }

    #[test]
    fn crl_zero_iff_non_decreasing_brute_force() {
        for code in 0..243u32 {
            let v: Vec<f64> = (0..5).map(|i| ((code / 3u32.pow(i)) % 3) as f64).collect();
            let sorted = v.windows(2).all(|p| p[0] <= p[1]);
            assert_eq!(crl_value(&v).unwrap() == 0.0, sorted, "{v:?}");
            assert_eq!(tape_value(crl_loss, &v) == 0.0, sorted, "{v:?}");
            assert_eq!(naive_chron_value(&v).unwrap(), v[0] - v[4]);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let ln4 = cross_entropy_value(&[0.3; 4], 2).unwrap();
        assert!((ln4 - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy_value(&[1e6, 0.0, 0.0], 0).unwrap() < 1e-12);
        let z = [0.2, -1.3, 2.5];
        let shifted = z.map(|v| v + 1000.0);
        let (a, b) = (
            cross_entropy_value(&z, 1).unwrap(),
            cross_entropy_value(&shifted, 1).unwrap(),
        );
        assert!((a - b).abs() < 1e-12);
        assert!(cross_entropy_value(&z, 3).is_err());

        let mut t = Tape::new();
        let l = t.leaf(Tensor::from_vec(z.to_vec()));
        let ce = cross_entropy(&mut t, l, 1).unwrap();
        assert!((t.value(ce).item().unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn combined_examples() {
        let w0 = LossWeights::new(0.0).unwrap();
        assert_eq!(combined_value(2.0, 3.0, &w0).unwrap(), 2.0);
        assert_eq!(combined_value(2.0, 3.0, &LossWeights::default()).unwrap(), 5.0);
        assert!(LossWeights::new(-1.0).is_err());
        assert!(combined_value(f64::NAN, 0.0, &w0).is_err());
    }

    #[test]
    fn combined_gradient_is_additive() {
        let v = vec![0.5, -0.2, 0.9, 0.1];
        let logits = vec![0.1, 0.7, -0.4];
        let grads = |lambda: f64| {
            let mut t = Tape::new();
            let a = t.leaf(Tensor::from_vec(v.clone()));
            let z = t.leaf(Tensor::from_vec(logits.clone()));
            let cls = cross_entropy(&mut t, z, 2).unwrap();
            let crl = crl_loss(&mut t, a).unwrap();
            let total = combined_loss(&mut t, cls, crl, &LossWeights { lambda_crl: lambda }).unwrap();
            t.backward(total).unwrap();
            (t.grad_tensor(a), t.grad_tensor(z))
        };
        let (a0, z0) = grads(0.0);
        let (a2, z2) = grads(2.0);
        assert!(a0.data().iter().all(|&g| g == 0.0));
        assert_eq!(z0, z2);
        let crl_grad = [1.0, -1.0, 1.0, -1.0];
        for (g, e) in a2.data().iter().zip(crl_grad) {
            assert!((g - 2.0 * e).abs() < 1e-12);
        }
    }

    #[test]
    fn probe_loss_examples() {
        assert_eq!(tape_value(probe_order_loss, &[0.0, 0.25, 0.5, 1.0]), 0.0);
        assert_eq!(tape_value(probe_order_loss, &[1.0, 0.0]), 1.0);
        assert_eq!(tape_value(probe_order_loss, &[0.4; 6]), 0.0);
    }

    #[test]
    fn crl_through_linear_head_passes_grad_check() {
        // f(x) = crl(W·x) with W fixed, x a 4×3 input, output over 5 frames.
        let w: Vec<f64> = (0..20).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
        let x = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let err = grad_check(
            |t, x| {
                let wv = t.constant(Tensor::new(vec![5, 4], w.clone())?);
                let y = t.matmul(wv, x)?;
                let s = t.reduce(y, 1, crate::tensor::ReduceKind::Sum)?;
                crl_loss(t, s)
            },
            &x,
            DEFAULT_GRAD_CHECK_EPS,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    proptest! {
        #[test]
        fn crl_shift_and_scale(v in prop::collection::vec(-10.0f64..10.0, 2..20), c in -5.0f64..5.0, a in 0.0f64..4.0) {
            let base = crl_value(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let scaled: Vec<f64> = v.iter().map(|x| a * x).collect();
            prop_assert!((crl_value(&shifted).unwrap() - base).abs() < 1e-9);
            prop_assert!((crl_value(&scaled).unwrap() - a * base).abs() < 1e-9);
        }

        #[test]
        fn crl_reverse_equals_negation(v in prop::collection::vec(-10.0f64..10.0, 2..20)) {
            let rev: Vec<f64> = v.iter().rev().copied().collect();
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            prop_assert!((crl_value(&rev).unwrap() - crl_value(&neg).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn strictly_monotone_has_one_zero_direction(mut v in prop::collection::vec(-10.0f64..10.0, 2..20)) {
            v.sort_by(f64::total_cmp);
            v.dedup();
            prop_assume!(v.len() >= 2);
            let rev: Vec<f64> = v.iter().rev().copied().collect();
            let zeros = [crl_value(&v).unwrap(), crl_value(&rev).unwrap()]
                .iter()
                .filter(|&&l| l == 0.0)
                .count();
            prop_assert_eq!(zeros, 1);
        }

        #[test]
        fn naive_telescopes(v in prop::collection::vec(-10.0f64..10.0, 2..20)) {
            let n = naive_chron_value(&v).unwrap();
            prop_assert!((n - (v[0] - v[v.len() - 1])).abs() < 1e-9);
        }
    }
}
