//! Dense feed-forward network with a station embedding and softplus
//! hidden layers. Parameters live in one flat vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_inputs: usize,
    pub n_stations: usize,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub n_outputs: usize,
}

impl Architecture {
    /// `(fan_in, fan_out)` of each dense layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.n_inputs + self.embedding_dim;
        for &h in self.hidden.iter().chain(std::iter::once(&self.n_outputs)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn embedding_len(&self) -> usize {
        self.n_stations * self.embedding_dim
    }

    pub fn n_params(&self) -> usize {
        self.embedding_len() + self.layers().iter().map(|(i, o)| i * o + o).sum::<usize>()
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct Cache {
    /// Layer inputs; `inputs[0]` is features followed by the embedding row.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

impl Network {
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.n_params();
        Self { arch, params: vec![0.0; n] }
    }

    /// Glorot-uniform dense weights, zero biases, embedding uniform on
    /// `[-0.05, 0.05]`.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        let emb = net.arch.embedding_len();
        for p in &mut net.params[..emb] {
            *p = rng.gen_range(-0.05..=0.05);
        }
        let mut off = emb;
        for (fan_in, fan_out) in net.arch.layers() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = rng.gen_range(-limit..=limit);
            }
            off += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn embedding(&self, station: usize) -> &[f64] {
        let d = self.arch.embedding_dim;
        &self.params[station * d..(station + 1) * d]
    }

    pub fn forward(&self, x: &[f64], station: usize, cache: &mut Cache) {
        debug_assert_eq!(x.len(), self.arch.n_inputs);
        let layers = self.arch.layers();
        cache.inputs.resize(layers.len(), Vec::new());
        cache.pre.resize(layers.len() - 1, Vec::new());
        let first = &mut cache.inputs[0];
        first.clear();
        first.extend_from_slice(x);
        first.extend_from_slice(self.embedding(station));
        let mut off = self.arch.embedding_len();
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let z: Vec<f64> = (0..fan_out)
                .map(|o| b[o] + dot(&w[o * fan_in..(o + 1) * fan_in], &cache.inputs[l]))
                .collect();
            if l + 1 < layers.len() {
                cache.inputs[l + 1] = z.iter().map(|&v| softplus(v)).collect();
                cache.pre[l] = z;
            } else {
                cache.output = z;
            }
        }
    }

    /// Adds the parameter gradient for output gradient `g_out` at the point
    /// stored in `cache`.
    pub fn backward(&self, station: usize, cache: &Cache, g_out: &[f64], grad: &mut [f64]) {
        let layers = self.arch.layers();
        let emb = self.arch.embedding_len();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = emb;
        for &(i, o) in &layers {
            offsets.push(off);
            off += i * o + o;
        }
        let mut delta = g_out.to_vec();
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            let off = offsets[l];
            let a = &cache.inputs[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, &ai) in gw.iter_mut().zip(a) {
                    *g += d * ai;
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut g_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (gi, &wi) in g_in.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *gi += d * wi;
                }
            }
            if l > 0 {
                delta = g_in.iter().zip(&cache.pre[l - 1]).map(|(g, &z)| g * sigmoid(z)).collect();
            } else {
                let dim = self.arch.embedding_dim;
                let ge = &mut grad[station * dim..(station + 1) * dim];
                for (g, v) in ge.iter_mut().zip(&g_in[self.arch.n_inputs..]) {
                    *g += v;
                }
            }
        }
    }

    /// Shape-tagged view for serialization.
    pub fn to_matrices(&self) -> NetworkJson {
        let mut layers = Vec::new();
        let mut off = self.arch.embedding_len();
        for (i, o) in self.arch.layers() {
            layers.push(DenseJson {
                weights: Matrix { rows: o, cols: i, data: self.params[off..off + i * o].to_vec() },
                bias: self.params[off + i * o..off + i * o + o].to_vec(),
            });
            off += i * o + o;
        }
        NetworkJson {
            n_inputs: self.arch.n_inputs,
            embedding: Matrix {
                rows: self.arch.n_stations,
                cols: self.arch.embedding_dim,
                data: self.params[..self.arch.embedding_len()].to_vec(),
            },
            layers,
        }
    }

    pub fn from_matrices(j: &NetworkJson) -> Result<Self, String> {
        let (last, hidden) = j.layers.split_last().ok_or("network without layers")?;
        let arch = Architecture {
            n_inputs: j.n_inputs,
            n_stations: j.embedding.rows,
            embedding_dim: j.embedding.cols,
            hidden: hidden.iter().map(|l| l.weights.rows).collect(),
            n_outputs: last.weights.rows,
        };
        let mut params = Vec::with_capacity(arch.n_params());
        j.embedding.check()?;
        params.extend_from_slice(&j.embedding.data);
        for ((i, o), l) in arch.layers().into_iter().zip(&j.layers) {
            l.weights.check()?;
            if l.weights.rows != o || l.weights.cols != i || l.bias.len() != o {
                return Err(format!("layer shape {}x{} does not chain ({o}x{i} expected)", l.weights.rows, l.weights.cols));
            }
            params.extend_from_slice(&l.weights.data);
            params.extend_from_slice(&l.bias);
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err("non-finite network weight".into());
        }
        Ok(Self { arch, params })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

impl Matrix {
    fn check(&self) -> Result<(), String> {
        if self.data.len() == self.rows * self.cols {
            Ok(())
        } else {
            Err(format!("matrix {}x{} holds {} values", self.rows, self.cols, self.data.len()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseJson {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkJson {
    pub n_inputs: usize,
    pub embedding: Matrix,
    pub layers: Vec<DenseJson>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-7, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
