//! Minimal deterministic feed-forward nets.
//!
//! All arithmetic is f64; parameters are kept on the f32 grid (every update
//! rounds through f32) so checkpoints, which store 32-bit floats, round-trip
//! bit-exactly. Everything here is single-threaded and deterministic given
//! the seed.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply_inplace(&self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
        }
    }

    /// Derivative expressed in terms of the activation output.
    pub fn grad_from_output(&self, y: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => Array2::ones(y.raw_dim()),
            Activation::Relu => y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Tanh => y.mapv(|v| 1.0 - v * v),
            Activation::Sigmoid => y.mapv(|v| v * (1.0 - v)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            other => return Err(Error::Checkpoint(format!("unknown activation '{other}'"))),
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Round to the nearest f32-representable value.
pub fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// One dense layer, weights stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Fan-in-scaled uniform init, quantized to the f32 grid.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| {
            quantize(rng.random_range(-bound..bound))
        });
        let b = Array1::zeros(out_dim);
        Self { w, b }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

/// Gradients mirroring an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            w: mlp
                .layers
                .iter()
                .map(|l| Array2::zeros(l.w.raw_dim()))
                .collect(),
            b: mlp
                .layers
                .iter()
                .map(|l| Array1::zeros(l.b.raw_dim()))
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            a.scaled_add(scale, b);
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            a.scaled_add(scale, b);
        }
    }
}

/// Activations cached during a forward pass; `outputs[0]` is the input.
pub struct MlpCache {
    outputs: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("cache holds at least the input")
    }
}

/// A plain multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub acts: Vec<Activation>,
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(dims: &[usize], acts: &[Activation], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        assert_eq!(acts.len(), dims.len() - 1, "one activation per layer");
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Self {
            dims: dims.to_vec(),
            acts: acts.to_vec(),
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.acts) {
            h = layer.forward(&h);
            act.apply_inplace(&mut h);
        }
        h
    }

    /// Forward over a single row.
    pub fn forward1(&self, x: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row shape");
        self.forward(&x).row(0).to_vec()
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> MlpCache {
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.clone());
        for (layer, act) in self.layers.iter().zip(&self.acts) {
            let mut h = layer.forward(outputs.last().unwrap());
            act.apply_inplace(&mut h);
            outputs.push(h);
        }
        MlpCache { outputs }
    }

    /// Backpropagate `grad_out` (dL/d output, same shape as the output)
    /// through the cached pass. Returns parameter gradients and dL/d input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> (MlpGrads, Array2<f64>) {
        let n_layers = self.layers.len();
        let mut grads = MlpGrads {
            w: Vec::with_capacity(n_layers),
            b: Vec::with_capacity(n_layers),
        };
        let mut gw_rev = Vec::with_capacity(n_layers);
        let mut gb_rev = Vec::with_capacity(n_layers);
        let mut grad = grad_out.clone();
        for l in (0..n_layers).rev() {
            let y = &cache.outputs[l + 1];
            let x = &cache.outputs[l];
            let dz = &grad * &self.acts[l].grad_from_output(y);
            gw_rev.push(dz.t().dot(x));
            gb_rev.push(dz.sum_axis(Axis(0)));
            grad = dz.dot(&self.layers[l].w);
        }
        gw_rev.reverse();
        gb_rev.reverse();
        grads.w = gw_rev;
        grads.b = gb_rev;
        (grads, grad)
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Adaptive moment estimation. One optimizer instance per net.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: MlpGrads,
    v: MlpGrads,
}

impl Adam {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: MlpGrads::zeros_like(mlp),
            v: MlpGrads::zeros_like(mlp),
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for l in 0..mlp.layers.len() {
            update_array2(
                &mut mlp.layers[l].w,
                &grads.w[l],
                &mut self.m.w[l],
                &mut self.v.w[l],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            update_array1(
                &mut mlp.layers[l].b,
                &grads.b[l],
                &mut self.m.b[l],
                &mut self.v.b[l],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_array2(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    azip_update(
        p.as_slice_mut().unwrap(),
        g.as_slice().unwrap(),
        m.as_slice_mut().unwrap(),
        v.as_slice_mut().unwrap(),
        lr,
        beta1,
        beta2,
        eps,
        bc1,
        bc2,
    );
}

#[allow(clippy::too_many_arguments)]
fn update_array1(
    p: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    azip_update(
        p.as_slice_mut().unwrap(),
        g.as_slice().unwrap(),
        m.as_slice_mut().unwrap(),
        v.as_slice_mut().unwrap(),
        lr,
        beta1,
        beta2,
        eps,
        bc1,
        bc2,
    );
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        // Parameters stay on the f32 grid so checkpoints are lossless.
        p[i] = quantize(p[i] - lr * m_hat / (v_hat.sqrt() + eps));
    }
}

/// Adam over an arbitrary ordered list of parameter slices, for modules that
/// are not plain MLPs. The slice layout must be identical on every step.
#[derive(Debug, Clone)]
pub struct AdamFlat {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamFlat {
    pub fn new(total_len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; total_len],
            v: vec![0.0; total_len],
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(
            params.len(),
            grads.len(),
            "parameter/gradient segment mismatch"
        );
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            assert_eq!(p.len(), g.len(), "segment length mismatch");
            let end = offset + p.len();
            assert!(
                end <= self.m.len(),
                "segments exceed the optimizer's length"
            );
            azip_update(
                p,
                g,
                &mut self.m[offset..end],
                &mut self.v[offset..end],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            offset = end;
        }
        assert_eq!(
            offset,
            self.m.len(),
            "segments cover the optimizer's length"
        );
    }
}

/// Row-wise softmax, numerically stable.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
