//! Unnormalized DCT-2 basis, transforms, and the cosine channel-expansion
//! encoding with its control variants.
//!
//! The basis rows are `b_k[t] = cos(π/T · (t + ½) · k)` with no scaling, so
//! `B·Bᵀ = diag(T, T/2, …, T/2)` and `d_k = Σ_t x_t · b_k[t]`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;
use crate::tensor::Tensor;

/// The first `K` DCT-2 basis sequences of length `T`, stored as a `K×T`
/// row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DctBasis {
    t: usize,
    k: usize,
    rows: Vec<f64>,
}

impl DctBasis {
    pub fn new(t: usize, k: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::invalid("sequence length T must be positive"));
        }
        if k == 0 || k > t {
            return Err(Error::invalid(format!(
                "basis count K must satisfy 1 <= K <= T (K = {k}, T = {t})"
            )));
        }
        let step = PI / t as f64;
        let mut rows = Vec::with_capacity(k * t);
        for kk in 0..k {
            for tt in 0..t {
                rows.push((step * (tt as f64 + 0.5) * kk as f64).cos());
            }
        }
        Ok(DctBasis { t, k, rows })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn count(&self) -> usize {
        self.k
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.t..(k + 1) * self.t]
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(vec![self.k, self.t], self.rows.clone()).expect("basis shape")
    }
}

/// Shorthand for [`DctBasis::new`].
pub fn basis(t: usize, k: usize) -> Result<DctBasis> {
    DctBasis::new(t, k)
}

/// Unnormalized DCT-2 coefficients `d_k = Σ_t x_t cos(π/T (t + ½) k)` for
/// `k = 0..T`.
pub fn dct2(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("dct2 of an empty series"));
    }
    let b = DctBasis::new(x.len(), x.len())?;
    Ok((0..x.len())
        .map(|k| b.row(k).iter().zip(x).map(|(c, v)| c * v).sum())
        .collect())
}

/// Exact inverse of [`dct2`]:
/// `x_t = d_0 / T + (2/T) Σ_{k≥1} d_k cos(π/T (t + ½) k)`.
pub fn idct2(d: &[f64]) -> Result<Vec<f64>> {
    if d.is_empty() {
        return Err(Error::invalid("inverse dct2 of an empty series"));
    }
    let t = d.len();
    let b = DctBasis::new(t, t)?;
    let mut x = vec![d[0] / t as f64; t];
    let scale = 2.0 / t as f64;
    for (k, &dk) in d.iter().enumerate().skip(1) {
        if dk == 0.0 {
            continue;
        }
        for (xi, c) in x.iter_mut().zip(b.row(k)) {
            *xi += scale * dk * c;
        }
    }
    Ok(x)
}

/// Zeroes DCT-2 coefficients with index `>= keep` and transforms back.
pub fn lowpass_revert(x: &[f64], keep: usize) -> Result<Vec<f64>> {
    if keep == 0 || keep > x.len() {
        return Err(Error::invalid(format!(
            "keep must lie in [1, {}], got {keep}",
            x.len()
        )));
    }
    let mut d = dct2(x)?;
    d[keep..].iter_mut().for_each(|v| *v = 0.0);
    idct2(&d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DceConfig {
    /// Number of basis sequences.
    pub k: usize,
    /// Whether the raw sequence is kept as the first channel block.
    pub include_original: bool,
}

impl Default for DceConfig {
    fn default() -> Self {
        DceConfig {
            k: 8,
            include_original: true,
        }
    }
}

impl DceConfig {
    pub fn blocks(&self) -> usize {
        self.k + usize::from(self.include_original)
    }
}

fn check_motion_tensor(x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.ndim() != 4 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "expected a C×T×N×M tensor".into(),
        });
    }
    let s = x.shape();
    Ok((s[0], s[1], s[2] * s[3]))
}

/// Cosine encoding of a `C×T×N×M` tensor.
///
/// The output stacks channel blocks `[x, b_0⊙x, …, b_{K-1}⊙x]` (the first
/// block only when `include_original`), giving `(K+1)·C` channels; block `j`
/// channel `c` lands at output channel `j·C + c`.
pub fn dce_encode_tensor(x: &Tensor, cfg: &DceConfig) -> Result<Tensor> {
    let (c, t, rest) = check_motion_tensor(x)?;
    let b = DctBasis::new(t, cfg.k)?;
    let src = x.data();
    let mut out = Vec::with_capacity(cfg.blocks() * src.len());
    if cfg.include_original {
        out.extend_from_slice(src);
    }
    for k in 0..cfg.k {
        let row = b.row(k);
        for ch in 0..c {
            for (tt, &w) in row.iter().enumerate() {
                let base = (ch * t + tt) * rest;
                out.extend(src[base..base + rest].iter().map(|v| w * v));
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = cfg.blocks() * c;
    Tensor::new(shape, out)
}

pub fn dce_encode(seq: &SkeletonSequence, cfg: &DceConfig) -> Result<Tensor> {
    dce_encode_tensor(&seq.coords, cfg)
}

/// Channel expansions with the same output shape as the cosine encoding but
/// without frequency content.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    /// Each extra block is `u⊙x`, `u` i.i.d. uniform on `[-1, 1]`.
    RandPm1,
    /// Each extra block is a copy of `x`.
    Repeat,
}

/// `[x, e_1, …, e_K]` where each extra block `e_j` follows `kind`. Random
/// blocks are drawn fresh per block from a generator seeded with `seed`.
pub fn control_encoding_tensor(
    x: &Tensor,
    kind: ControlKind,
    k: usize,
    seed: u64,
) -> Result<Tensor> {
    let (c, _, _) = check_motion_tensor(x)?;
    if k == 0 {
        return Err(Error::invalid("control encoding needs K >= 1"));
    }
    let mut out = Vec::with_capacity((k + 1) * x.numel());
    out.extend_from_slice(x.data());
    match kind {
        ControlKind::Repeat => {
            for _ in 0..k {
                out.extend_from_slice(x.data());
            }
        }
        ControlKind::RandPm1 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..k {
                out.extend(x.data().iter().map(|v| rng.random_range(-1.0..=1.0) * v));
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = (k + 1) * c;
    Tensor::new(shape, out)
}

pub fn control_encoding(
    seq: &SkeletonSequence,
    kind: ControlKind,
    k: usize,
    seed: u64,
) -> Result<Tensor> {
    control_encoding_tensor(&seq.coords, kind, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn max_abs(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn basis_rows() {
        let b = basis(5, 3).unwrap();
        assert!(b.row(0).iter().all(|&v| v == 1.0));
        let b2 = basis(2, 2).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b2.row(1)[0] - r).abs() < 1e-15);
        assert!((b2.row(1)[1] + r).abs() < 1e-15);
        let b300 = basis(300, 2).unwrap();
        let row = b300.row(1);
        assert!(row.windows(2).all(|w| w[1] < w[0]));
        assert!(row.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn basis_rejects_bad_sizes() {
        assert!(basis(0, 1).is_err());
        assert!(basis(4, 5).is_err());
        assert!(basis(4, 0).is_err());
    }

    #[test]
    fn basis_is_orthogonal() {
        for t in 2..=64 {
            let b = basis(t, t).unwrap();
            for i in 0..t {
                for j in 0..t {
                    let g: f64 = b.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
                    let expect = match (i == j, i) {
                        (false, _) => 0.0,
                        (true, 0) => t as f64,
                        (true, _) => t as f64 / 2.0,
                    };
                    assert!((g - expect).abs() < 1e-9, "T={t} ({i},{j}) {g}");
                }
            }
        }
    }

    #[test]
    fn dct2_examples() {
        let d = dct2(&[2.5; 10]).unwrap();
        assert!((d[0] - 25.0).abs() < 1e-12);
        assert!(d[1..].iter().all(|v| v.abs() < 1e-9));

        let t = 16;
        let b1 = basis(t, 2).unwrap().row(1).to_vec();
        let d = dct2(&b1).unwrap();
        for (k, v) in d.iter().enumerate() {
            let expect = if k == 1 { t as f64 / 2.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-9);
        }
        assert!(dct2(&[0.0; 7]).unwrap().iter().all(|&v| v == 0.0));
        assert!(dct2(&[]).is_err());
    }

    #[test]
    fn lowpass_examples() {
        let t = 20;
        let x: Vec<f64> = (0..t).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        assert!(max_abs(&lowpass_revert(&x, t).unwrap(), &x) < 1e-9);

        let b = basis(t, t).unwrap();
        let b1 = b.row(1).to_vec();
        assert!(max_abs(&lowpass_revert(&b1, 2).unwrap(), &b1) < 1e-9);

        let top = b.row(t - 1).to_vec();
        let out = lowpass_revert(&top, t / 2).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-9));

        assert!(lowpass_revert(&x, 0).is_err());
        assert!(lowpass_revert(&x, t + 1).is_err());
    }

    #[test]
    fn smooth_signals_concentrate_energy_at_low_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in [32usize, 64, 128] {
            for _ in 0..50 {
                let mut acc = 0.0;
                let x: Vec<f64> = (0..t)
                    .map(|_| {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        acc += 0.05 * n;
                        acc
                    })
                    .collect();
                let d = dct2(&x).unwrap();
                let energy: Vec<f64> = d.iter().map(|v| v * v).collect();
                let low: f64 = energy[..8].iter().sum();
                for start in 8..=t - 8 {
                    let band: f64 = energy[start..start + 8].iter().sum();
                    assert!(low > band, "T={t} start={start}");
                }
            }
        }
    }

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn dce_shapes_and_first_blocks() {
        let x = random_tensor(&[3, 12, 4, 2], 1);
        let cfg = DceConfig::default();
        let e = dce_encode_tensor(&x, &cfg).unwrap();
        assert_eq!(e.shape(), &[27, 12, 4, 2]);

        let e1 = dce_encode_tensor(
            &x,
            &DceConfig {
                k: 1,
                include_original: true,
            },
        )
        .unwrap();
        assert_eq!(&e1.data()[..x.numel()], x.data());
        assert_eq!(&e1.data()[x.numel()..], x.data());

        let no_orig = DceConfig {
            k: 3,
            include_original: false,
        };
        assert_eq!(dce_encode_tensor(&x, &no_orig).unwrap().shape()[0], 9);
        let too_many = DceConfig {
            k: 13,
            include_original: true,
        };
        assert!(dce_encode_tensor(&x, &too_many).is_err());
    }

    #[test]
    fn dce_block_sums_are_dct_coefficients() {
        let (c, t, n, m) = (3, 30, 2, 1);
        let x = random_tensor(&[c, t, n, m], 5);
        let cfg = DceConfig::default();
        let e = dce_encode_tensor(&x, &cfg).unwrap();
        for ch in 0..c {
            for j in 0..n {
                let series: Vec<f64> = (0..t).map(|tt| x.get(&[ch, tt, j, 0])).collect();
                let d = dct2(&series).unwrap();
                for k in 0..cfg.k {
                    let block = 1 + k;
                    let s: f64 = (0..t).map(|tt| e.get(&[block * c + ch, tt, j, 0])).sum();
                    assert!((s - d[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn control_encodings() {
        let x = random_tensor(&[3, 10, 2, 1], 9);
        let rep = control_encoding_tensor(&x, ControlKind::Repeat, 2, 0).unwrap();
        assert_eq!(rep.shape(), &[9, 10, 2, 1]);
        for b in 0..3 {
            assert_eq!(&rep.data()[b * x.numel()..(b + 1) * x.numel()], x.data());
        }
        let r1 = control_encoding_tensor(&x, ControlKind::RandPm1, 8, 42).unwrap();
        let r2 = control_encoding_tensor(&x, ControlKind::RandPm1, 8, 42).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.shape()[0], 27);
        let nx = x.numel();
        for b in 1..=8 {
            for i in 0..nx {
                assert!(r1.data()[b * nx + i].abs() <= x.data()[i].abs());
            }
        }
        // blocks are independent draws
        assert_ne!(&r1.data()[nx..2 * nx], &r1.data()[2 * nx..3 * nx]);
        assert!(control_encoding_tensor(&x, ControlKind::Repeat, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn lowpass_full_band_round_trip(x in prop::collection::vec(-100.0f64..100.0, 1..80)) {
            let y = lowpass_revert(&x, x.len()).unwrap();
            prop_assert!(max_abs(&x, &y) < 1e-9);
        }

        #[test]
        fn dce_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, s1 in 0u64..1000, s2 in 0u64..1000) {
            let x = random_tensor(&[3, 16, 3, 1], s1);
            let y = random_tensor(&[3, 16, 3, 1], s2);
            let combo = Tensor::new(
                x.shape().to_vec(),
                x.data().iter().zip(y.data()).map(|(u, v)| a * u + b * v).collect(),
            ).unwrap();
            let cfg = DceConfig::default();
            let ex = dce_encode_tensor(&x, &cfg).unwrap();
            let ey = dce_encode_tensor(&y, &cfg).unwrap();
            let ec = dce_encode_tensor(&combo, &cfg).unwrap();
            for i in 0..ec.numel() {
                prop_assert!((ec.data()[i] - (a * ex.data()[i] + b * ey.data()[i])).abs() < 1e-12);
            }
        }
    }
}
