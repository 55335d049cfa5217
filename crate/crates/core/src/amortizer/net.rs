//! Feed-forward attribution network with manual backpropagation.
//!
//! Input: numeric features as-is, categorical codes through per-feature
//! embedding tables. Each block is Linear → LayerNorm → LeakyReLU → Dropout,
//! followed by a linear head with one output per feature. Parameters live in
//! one flat vector so optimizers and checkpoints treat them uniformly.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSchema;

const LN_EPS: f64 = 1e-5;
const LEAK: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub feature: usize,
    pub levels: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub d: usize,
    pub numeric: Vec<usize>,
    pub embeddings: Vec<Embedding>,
    pub hidden: usize,
    pub blocks: usize,
    pub dropout: f64,
}

impl NetShape {
    pub fn new(schema: &[FeatureSchema], hidden: Option<usize>, blocks: usize, dropout: f64) -> Self {
        let d = schema.len();
        let mut numeric = Vec::new();
        let mut embeddings = Vec::new();
        for f in schema {
            if f.is_categorical() {
                let levels = f.levels.len().max(1);
                embeddings.push(Embedding {
                    feature: f.index,
                    levels,
                    dim: levels.div_ceil(2).clamp(2, 8),
                });
            } else {
                numeric.push(f.index);
            }
        }
        NetShape {
            d,
            numeric,
            embeddings,
            hidden: hidden.unwrap_or_else(|| (4 * d).max(64)),
            blocks,
            dropout,
        }
    }

    pub fn input_width(&self) -> usize {
        self.numeric.len() + self.embeddings.iter().map(|e| e.dim).sum::<usize>()
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut emb = Vec::new();
        for e in &self.embeddings {
            emb.push(off);
            off += e.levels * e.dim;
        }
        let mut blocks = Vec::new();
        let mut fan_in = self.input_width();
        for _ in 0..self.blocks {
            let h = self.hidden;
            let b = BlockOff {
                w: off,
                b: off + h * fan_in,
                gamma: off + h * fan_in + h,
                beta: off + h * fan_in + 2 * h,
                fan_in,
            };
            off += h * fan_in + 3 * h;
            blocks.push(b);
            fan_in = h;
        }
        let head_w = off;
        let head_b = off + self.d * fan_in;
        off = head_b + self.d;
        Layout {
            emb,
            blocks,
            head_w,
            head_b,
            head_in: fan_in,
            len: off,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().len
    }
}

#[derive(Debug, Clone)]
struct BlockOff {
    w: usize,
    b: usize,
    gamma: usize,
    beta: usize,
    fan_in: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    emb: Vec<usize>,
    blocks: Vec<BlockOff>,
    head_w: usize,
    head_b: usize,
    head_in: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmortizerNet {
    pub shape: NetShape,
    pub params: Vec<f64>,
}

/// Activations kept for the backward pass.
pub(crate) struct Cache {
    input: Vec<f64>,
    codes: Vec<usize>,
    blocks: Vec<BlockCache>,
    last: Vec<f64>,
}

struct BlockCache {
    a_in: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: f64,
    y: Vec<f64>,
    keep: Vec<f64>,
}

impl AmortizerNet {
    pub fn init<R: Rng>(shape: NetShape, rng: &mut R) -> Self {
        let lay = shape.layout();
        let mut p = vec![0.0; lay.len];
        let n01 = Normal::new(0.0, 1.0).expect("unit normal");
        for (e, &off) in shape.embeddings.iter().zip(&lay.emb) {
            for v in &mut p[off..off + e.levels * e.dim] {
                *v = 0.5 * n01.sample(rng);
            }
        }
        for b in &lay.blocks {
            let sd = (2.0 / b.fan_in.max(1) as f64).sqrt();
            for v in &mut p[b.w..b.b] {
                *v = sd * n01.sample(rng);
            }
            for v in &mut p[b.gamma..b.beta] {
                *v = 1.0;
            }
        }
        let sd = 0.1 / (lay.head_in as f64).sqrt();
        for v in &mut p[lay.head_w..lay.head_b] {
            *v = sd * n01.sample(rng);
        }
        AmortizerNet { shape, params: p }
    }

    pub fn dim(&self) -> usize {
        self.shape.d
    }

    fn encode(&self, x: &[f64], lay: &Layout) -> (Vec<f64>, Vec<usize>) {
        let mut input = Vec::with_capacity(self.shape.input_width());
        for &j in &self.shape.numeric {
            input.push(x[j]);
        }
        let mut codes = Vec::with_capacity(self.shape.embeddings.len());
        for (e, &off) in self.shape.embeddings.iter().zip(&lay.emb) {
            let c = (x[e.feature].round().max(0.0) as usize).min(e.levels - 1);
            codes.push(c);
            input.extend_from_slice(&self.params[off + c * e.dim..off + (c + 1) * e.dim]);
        }
        (input, codes)
    }

    /// Deterministic inference (dropout disabled).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_impl::<rand_chacha::ChaCha8Rng>(x, None).0
    }

    pub(crate) fn forward_impl<R: Rng>(&self, x: &[f64], mut dropout_rng: Option<&mut R>) -> (Vec<f64>, Cache) {
        let lay = self.shape.layout();
        let p = &self.params;
        let (input, codes) = self.encode(x, &lay);
        let mut a = input.clone();
        let mut blocks = Vec::with_capacity(lay.blocks.len());
        let h = self.shape.hidden;
        let keep_p = 1.0 - self.shape.dropout;
        for b in &lay.blocks {
            let mut z = vec![0.0; h];
            for (i, zi) in z.iter_mut().enumerate() {
                let row = &p[b.w + i * b.fan_in..b.w + (i + 1) * b.fan_in];
                *zi = p[b.b + i] + row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
            }
            let mu = z.iter().sum::<f64>() / h as f64;
            let var = z.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / h as f64;
            let inv_std = 1.0 / (var + LN_EPS).sqrt();
            let xhat: Vec<f64> = z.iter().map(|v| (v - mu) * inv_std).collect();
            let y: Vec<f64> = (0..h).map(|i| p[b.gamma + i] * xhat[i] + p[b.beta + i]).collect();
            let keep: Vec<f64> = match dropout_rng.as_deref_mut() {
                Some(rng) if self.shape.dropout > 0.0 => {
                    (0..h).map(|_| if rng.random::<f64>() < keep_p { 1.0 / keep_p } else { 0.0 }).collect()
                }
                _ => vec![1.0; h],
            };
            let out: Vec<f64> = (0..h).map(|i| if y[i] > 0.0 { y[i] } else { LEAK * y[i] } * keep[i]).collect();
            blocks.push(BlockCache {
                a_in: std::mem::replace(&mut a, out),
                xhat,
                inv_std,
                y,
                keep,
            });
        }
        let mut phi = vec![0.0; self.shape.d];
        for (i, o) in phi.iter_mut().enumerate() {
            let row = &p[lay.head_w + i * lay.head_in..lay.head_w + (i + 1) * lay.head_in];
            *o = p[lay.head_b + i] + row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
        }
        (phi, Cache { input, codes, blocks, last: a })
    }

    /// Accumulate `d loss / d params` into `grad` given `d loss / d output`.
    pub(crate) fn backward(&self, cache: &Cache, dout: &[f64], grad: &mut [f64]) {
        let lay = self.shape.layout();
        let p = &self.params;
        let h = self.shape.hidden;
        let mut da = vec![0.0; lay.head_in];
        for (i, &g) in dout.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[lay.head_b + i] += g;
            let w = lay.head_w + i * lay.head_in;
            for k in 0..lay.head_in {
                grad[w + k] += g * cache.last[k];
                da[k] += g * p[w + k];
            }
        }
        for (b, c) in lay.blocks.iter().zip(&cache.blocks).rev() {
            // Dropout and activation.
            let dy: Vec<f64> = (0..h).map(|i| da[i] * c.keep[i] * if c.y[i] > 0.0 { 1.0 } else { LEAK }).collect();
            // Affine part of layer norm.
            let mut dxhat = vec![0.0; h];
            for i in 0..h {
                grad[b.gamma + i] += dy[i] * c.xhat[i];
                grad[b.beta + i] += dy[i];
                dxhat[i] = dy[i] * p[b.gamma + i];
            }
            let m1 = dxhat.iter().sum::<f64>() / h as f64;
            let m2 = dxhat.iter().zip(&c.xhat).map(|(a, b)| a * b).sum::<f64>() / h as f64;
            let dz: Vec<f64> = (0..h).map(|i| c.inv_std * (dxhat[i] - m1 - c.xhat[i] * m2)).collect();
            let mut da_in = vec![0.0; b.fan_in];
            for (i, &g) in dz.iter().enumerate() {
                grad[b.b + i] += g;
                let w = b.w + i * b.fan_in;
                for k in 0..b.fan_in {
                    grad[w + k] += g * c.a_in[k];
                    da_in[k] += g * p[w + k];
                }
            }
            da = da_in;
        }
        // Embedding rows receive the input gradient.
        let mut pos = self.shape.numeric.len();
        for ((e, &off), &code) in self.shape.embeddings.iter().zip(&lay.emb).zip(&cache.codes) {
            for k in 0..e.dim {
                grad[off + code * e.dim + k] += da[pos + k];
            }
            pos += e.dim;
        }
        debug_assert_eq!(pos, cache.input.len());
    }
}
