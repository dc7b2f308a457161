// Raw loops behind the tape operations. All buffers are row-major and their
// lengths are validated by the callers.

#[inline]
pub(crate) fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[m×n] = a[m×k] · b[k×n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(row, a[i * k + p], &b[p * n..(p + 1) * n]);
        }
    }
    out
}

/// `da[m×k] += g[m×n] · bᵀ`.
pub(crate) fn matmul_grad_a(da: &mut [f64], g: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] += dot(g_row, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `db[k×n] += aᵀ · g[m×n]`.
pub(crate) fn matmul_grad_b(db: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(&mut db[p * n..(p + 1) * n], a[i * k + p], g_row);
        }
    }
}

/// Geometry of a zero-padded "same" temporal convolution over `[C_in, T, R]`
/// inputs, where `R` collects all trailing axes (joints).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub rest: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl ConvGeom {
    fn pad(&self) -> isize {
        (self.dilation * (self.kernel - 1) / 2) as isize
    }

    /// Stride-1 only: offset of tap `j` plus the contiguous run of output
    /// frames `[lo, lo + count)` whose tap lands inside the input.
    fn taps(&self, j: usize) -> (isize, usize, usize) {
        let off = (j * self.dilation) as isize - self.pad();
        let t_in = self.t_in as isize;
        let lo = if off < 0 { -off } else { 0 };
        let hi = (t_in - off).min(self.t_out as isize);
        let count = if hi > lo { (hi - lo) as usize } else { 0 };
        (off, lo.max(0) as usize, count)
    }
}

pub(crate) fn conv_forward(x: &[f64], w: &[f64], g: ConvGeom) -> Vec<f64> {
    let r = g.rest;
    let mut out = vec![0.0; g.c_out * g.t_out * r];
    for co in 0..g.c_out {
        let out_c = &mut out[co * g.t_out * r..(co + 1) * g.t_out * r];
        for ci in 0..g.c_in {
            let x_c = &x[ci * g.t_in * r..(ci + 1) * g.t_in * r];
            for j in 0..g.kernel {
                let wv = w[(co * g.c_in + ci) * g.kernel + j];
                if g.stride == 1 {
                    let (off, lo, count) = g.taps(j);
                    if count == 0 {
                        continue;
                    }
                    let ti = (lo as isize + off) as usize;
                    axpy(
                        &mut out_c[lo * r..(lo + count) * r],
                        wv,
                        &x_c[ti * r..(ti + count) * r],
                    );
                } else {
                    let off = (j * g.dilation) as isize - g.pad();
                    for to in 0..g.t_out {
                        let ti = (to * g.stride) as isize + off;
                        if ti < 0 || ti >= g.t_in as isize {
                            continue;
                        }
                        let ti = ti as usize;
                        axpy(&mut out_c[to * r..(to + 1) * r], wv, &x_c[ti * r..(ti + 1) * r]);
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input and/or weight gradients of [`conv_forward`].
pub(crate) fn conv_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    g: ConvGeom,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
) {
    let r = g.rest;
    for co in 0..g.c_out {
        let g_c = &grad_out[co * g.t_out * r..(co + 1) * g.t_out * r];
        for ci in 0..g.c_in {
            let x_c = &x[ci * g.t_in * r..(ci + 1) * g.t_in * r];
            for j in 0..g.kernel {
                let widx = (co * g.c_in + ci) * g.kernel + j;
                let wv = w[widx];
                if g.stride == 1 {
                    let (off, lo, count) = g.taps(j);
                    if count == 0 {
                        continue;
                    }
                    let ti = (lo as isize + off) as usize;
                    let g_run = &g_c[lo * r..(lo + count) * r];
                    if let Some(dx) = dx.as_deref_mut() {
                        let dx_c = &mut dx[ci * g.t_in * r..(ci + 1) * g.t_in * r];
                        axpy(&mut dx_c[ti * r..(ti + count) * r], wv, g_run);
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[widx] += dot(g_run, &x_c[ti * r..(ti + count) * r]);
                    }
                } else {
                    let off = (j * g.dilation) as isize - g.pad();
                    let mut acc = 0.0;
                    for to in 0..g.t_out {
                        let ti = (to * g.stride) as isize + off;
                        if ti < 0 || ti >= g.t_in as isize {
                            continue;
                        }
                        let ti = ti as usize;
                        let g_run = &g_c[to * r..(to + 1) * r];
                        if let Some(dx) = dx.as_deref_mut() {
                            let base = ci * g.t_in * r + ti * r;
                            axpy(&mut dx[base..base + r], wv, g_run);
                        }
                        acc += dot(g_run, &x_c[ti * r..(ti + 1) * r]);
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        assert_eq!(matmul(&[1.0, 2.0], &[3.0, 4.0], 1, 2, 1), vec![11.0]);
    }

    // Direct evaluation of the convolution definition, used to cross-check the
    // run-based stride-1 fast path.
    fn conv_naive(x: &[f64], w: &[f64], g: ConvGeom) -> Vec<f64> {
        let pad = (g.dilation * (g.kernel - 1) / 2) as isize;
        let mut out = vec![0.0; g.c_out * g.t_out * g.rest];
        for co in 0..g.c_out {
            for to in 0..g.t_out {
                for r in 0..g.rest {
                    let mut s = 0.0;
                    for ci in 0..g.c_in {
                        for j in 0..g.kernel {
                            let ti = (to * g.stride) as isize + (j * g.dilation) as isize - pad;
                            if ti >= 0 && (ti as usize) < g.t_in {
                                s += w[(co * g.c_in + ci) * g.kernel + j]
                                    * x[(ci * g.t_in + ti as usize) * g.rest + r];
                            }
                        }
                    }
                    out[(co * g.t_out + to) * g.rest + r] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_definition() {
        for &(stride, dilation) in &[(1, 1), (1, 3), (2, 1), (2, 2), (3, 1)] {
            let t_in = 11;
            let g = ConvGeom {
                c_in: 2,
                c_out: 3,
                t_in,
                t_out: t_in.div_ceil(stride),
                rest: 4,
                kernel: 3,
                dilation,
                stride,
            };
            let x: Vec<f64> = (0..g.c_in * t_in * g.rest)
                .map(|i| ((i * 7919) % 13) as f64 - 6.0)
                .collect();
            let w: Vec<f64> = (0..g.c_out * g.c_in * g.kernel)
                .map(|i| ((i * 31) % 5) as f64 - 2.0)
                .collect();
            assert_eq!(conv_forward(&x, &w, g), conv_naive(&x, &w, g));
        }
    }
}
