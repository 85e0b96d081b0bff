//! Straight-line reference implementations shared by the integration tests.
#![allow(dead_code)]

use ctan_core::rng::{rng_from_seed, RunRng};
use ctan_core::Tensor;
use rand::Rng;

pub fn uniform(rng: &mut RunRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn seeded(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(&mut rng_from_seed(seed), shape, -1.0, 1.0)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Dense `(out × in)` weights and optional bias applied to one vector.
fn affine(w: &Tensor<f64>, b: Option<&Tensor<f64>>, v: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; rows];
    for i in 0..rows {
        let mut acc = 0.0;
        for j in 0..cols {
            acc += w.data()[i * cols + j] * v[j];
        }
        if let Some(b) = b {
            acc += b.data()[i];
        }
        out[i] = acc;
    }
    out
}

pub struct Excite<'a> {
    pub w1: &'a Tensor<f64>,
    pub b1: Option<&'a Tensor<f64>>,
    pub w2: &'a Tensor<f64>,
    pub b2: Option<&'a Tensor<f64>>,
}

impl Excite<'_> {
    fn gate(&self, pooled: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = affine(self.w1, self.b1, pooled).into_iter().map(|v| v.max(0.0)).collect();
        affine(self.w2, self.b2, &h).into_iter().map(sigmoid).collect()
    }
}

/// Channel attention with explicit loops. Returns (output, gate per (n, c)).
pub fn channel_attention(x: &Tensor<f64>, p: &Excite) -> (Vec<f64>, Vec<Vec<f64>>) {
    let s = x.shape();
    let (n, t, c, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let at = |i, j, k, l, m| x.data()[(((i * t + j) * c + k) * h + l) * w + m];
    let mut out = vec![0.0; x.len()];
    let mut gates = Vec::new();
    for i in 0..n {
        let mut pooled = vec![0.0; c];
        for k in 0..c {
            let mut sum = 0.0;
            for j in 0..t {
                for l in 0..h {
                    for m in 0..w {
                        sum += at(i, j, k, l, m);
                    }
                }
            }
            pooled[k] = sum / (t * h * w) as f64;
        }
        let a = p.gate(&pooled);
        for j in 0..t {
            for k in 0..c {
                for l in 0..h {
                    for m in 0..w {
                        let v = at(i, j, k, l, m);
                        out[(((i * t + j) * c + k) * h + l) * w + m] = v + a[k] * v;
                    }
                }
            }
        }
        gates.push(a);
    }
    (out, gates)
}

/// Temporal attention with explicit loops. Returns (output, gate per (n, t)).
pub fn temporal_attention(x: &Tensor<f64>, p: &Excite) -> (Vec<f64>, Vec<Vec<f64>>) {
    let s = x.shape();
    let (n, t, c, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let at = |i, j, k, l, m| x.data()[(((i * t + j) * c + k) * h + l) * w + m];
    let mut out = vec![0.0; x.len()];
    let mut gates = Vec::new();
    for i in 0..n {
        let mut pooled = vec![0.0; t];
        for j in 0..t {
            let mut sum = 0.0;
            for k in 0..c {
                for l in 0..h {
                    for m in 0..w {
                        sum += at(i, j, k, l, m);
                    }
                }
            }
            pooled[j] = sum / (c * h * w) as f64;
        }
        let a = p.gate(&pooled);
        for j in 0..t {
            for k in 0..c {
                for l in 0..h {
                    for m in 0..w {
                        let v = at(i, j, k, l, m);
                        out[(((i * t + j) * c + k) * h + l) * w + m] = v + a[j] * v;
                    }
                }
            }
        }
        gates.push(a);
    }
    (out, gates)
}

/// Seven nested loops over (n, to, co, ho, wo) × (ci, kt, kh, kw), skipping
/// taps that land in the zero padding.
pub fn conv3d(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<f64> {
    let xs = x.shape();
    let ks = k.shape();
    let (n, t, ci, h, w) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (co, kt, kh, kw) = (ks[0], ks[2], ks[3], ks[4]);
    let to = (t + 2 * pad[0] - kt) / stride[0] + 1;
    let ho = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let wo = (w + 2 * pad[2] - kw) / stride[2] + 1;
    let mut out = vec![0.0; n * to * co * ho * wo];
    for i in 0..n {
        for ot in 0..to {
            for oc in 0..co {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b.data()[oc]);
                        for ic in 0..ci {
                            for a in 0..kt {
                                for bh in 0..kh {
                                    for bw in 0..kw {
                                        let it = (ot * stride[0] + a) as isize - pad[0] as isize;
                                        let ih = (oh * stride[1] + bh) as isize - pad[1] as isize;
                                        let iw = (ow * stride[2] + bw) as isize - pad[2] as isize;
                                        if it < 0 || ih < 0 || iw < 0 || it >= t as isize || ih >= h as isize || iw >= w as isize {
                                            continue;
                                        }
                                        let (it, ih, iw) = (it as usize, ih as usize, iw as usize);
                                        let xv = x.data()[(((i * t + it) * ci + ic) * h + ih) * w + iw];
                                        let kv = k.data()[(((oc * ci + ic) * kt + a) * kh + bh) * kw + bw];
                                        acc += xv * kv;
                                    }
                                }
                            }
                        }
                        out[(((i * to + ot) * co + oc) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, to, co, ho, wo], out).unwrap()
}

/// Every start s with s % 12 == 0 and s + 16 <= frame_count, by scanning.
pub fn brute_force_windows(frame_count: usize) -> Vec<usize> {
    (0..=frame_count)
        .filter(|&s| s % 12 == 0 && s + 16 <= frame_count)
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
