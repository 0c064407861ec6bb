//! Differentiable function approximators for all three domains, plus the
//! checkpoint container.
//!
//! Checkpoint layout: a text header (format line, then one JSON line with
//! version, architecture, seed, step count, domain, and the array manifest),
//! a `---` separator line, then the raw parameter arrays as row-major
//! little-endian 32-bit floats in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Activation, Linear, Mlp};

/// Dimension of the particle-world communication vector.
pub const COMM_DIM: usize = 128;
/// Particle-world action count (N, S, E, W, stay).
pub const NUM_PARTICLE_ACTIONS: usize = 5;
/// Flattened 28x28 image.
pub const IMAGE_DIM: usize = 784;
/// Lever-game agent id space.
pub const NUM_LEVER_IDS: usize = 10;
/// Levers per deal (= agents per deal).
pub const NUM_LEVERS: usize = 3;
/// Agents in a lever deal.
pub const LEVER_AGENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Speaker,
    Actor,
    VaeEncoder,
    VaeDecoder,
    Commnet,
    Adversary,
}

/// Architecture metadata stored alongside parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub activations: Vec<String>,
}

impl ArchitectureSpec {
    fn for_mlp(kind: ModelKind, mlp: &Mlp) -> Self {
        Self {
            kind,
            input_dim: mlp.input_dim(),
            output_dim: mlp.output_dim(),
            hidden: mlp.dims[1..mlp.dims.len() - 1].to_vec(),
            activations: mlp.acts.iter().map(|a| a.name().to_string()).collect(),
        }
    }

    fn mlp_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims
    }

    fn mlp_acts(&self) -> Result<Vec<Activation>> {
        self.activations
            .iter()
            .map(|a| Activation::from_name(a))
            .collect()
    }
}

fn require_finite(values: &Array2<f64>, what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalHealth(format!(
            "non-finite values in {what}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Particle-world nets
// ---------------------------------------------------------------------------

/// Speaker: 2-d actor position -> bounded 128-d communication vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Speaker {
    pub mlp: Mlp,
}

impl Speaker {
    pub fn new(hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![2];
        dims.extend_from_slice(hidden);
        dims.push(COMM_DIM);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Tanh); // bounded communication space
        Self {
            mlp: Mlp::new(&dims, &acts, rng),
        }
    }

    /// Batched forward: rows are (x, y) states, output rows are comm vectors.
    pub fn forward(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        require_finite(states, "speaker input")?;
        let out = self.mlp.forward(states);
        require_finite(&out, "speaker output")?;
        Ok(out)
    }

    pub fn spec(&self) -> ArchitectureSpec {
        ArchitectureSpec::for_mlp(ModelKind::Speaker, &self.mlp)
    }
}

/// Actor: 128-d comm vector -> softmax over the five particle actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub mlp: Mlp,
}

impl Actor {
    pub fn new(hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![COMM_DIM];
        dims.extend_from_slice(hidden);
        dims.push(NUM_PARTICLE_ACTIONS);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        Self {
            mlp: Mlp::new(&dims, &acts, rng),
        }
    }

    pub fn forward_logits(&self, comm: &Array2<f64>) -> Result<Array2<f64>> {
        require_finite(comm, "actor input")?;
        let out = self.mlp.forward(comm);
        require_finite(&out, "actor logits")?;
        Ok(out)
    }

    /// Probability rows summing to one.
    pub fn forward_probs(&self, comm: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.forward_logits(comm)?))
    }

    pub fn spec(&self) -> ArchitectureSpec {
        ArchitectureSpec::for_mlp(ModelKind::Actor, &self.mlp)
    }
}

// ---------------------------------------------------------------------------
// VAE nets
// ---------------------------------------------------------------------------

/// Encoder: 784-d image -> (mean, log-variance), each `latent_dim` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeEncoder {
    pub mlp: Mlp,
    pub latent_dim: usize,
}

impl VaeEncoder {
    pub fn new(latent_dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![IMAGE_DIM];
        dims.extend_from_slice(hidden);
        dims.push(2 * latent_dim);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        Self {
            mlp: Mlp::new(&dims, &acts, rng),
            latent_dim,
        }
    }

    /// Split the raw output into (mean, log_variance).
    pub fn encode(&self, images: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if images.ncols() != IMAGE_DIM {
            return Err(Error::Contract(format!(
                "encoder expects {IMAGE_DIM}-d images, got {}",
                images.ncols()
            )));
        }
        let raw = self.mlp.forward(images);
        require_finite(&raw, "encoder output")?;
        let mean = raw.slice(s![.., ..self.latent_dim]).to_owned();
        let log_var = raw.slice(s![.., self.latent_dim..]).to_owned();
        Ok((mean, log_var))
    }

    pub fn spec(&self) -> ArchitectureSpec {
        ArchitectureSpec::for_mlp(ModelKind::VaeEncoder, &self.mlp)
    }
}

/// `mean + exp(0.5 * log_var) * noise`.
pub fn vae_reparameterize(
    mean: &Array2<f64>,
    log_var: &Array2<f64>,
    noise: &Array2<f64>,
) -> Result<Array2<f64>> {
    if mean.raw_dim() != log_var.raw_dim() || mean.raw_dim() != noise.raw_dim() {
        return Err(Error::Contract("reparameterize: shape mismatch".into()));
    }
    Ok(mean + &(log_var.mapv(|v| (0.5 * v).exp()) * noise))
}

/// Decoder: latent -> 784-d reconstruction in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct VaeDecoder {
    pub mlp: Mlp,
    pub latent_dim: usize,
}

impl VaeDecoder {
    pub fn new(latent_dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![latent_dim];
        dims.extend_from_slice(hidden);
        dims.push(IMAGE_DIM);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Sigmoid);
        Self {
            mlp: Mlp::new(&dims, &acts, rng),
            latent_dim,
        }
    }

    pub fn decode(&self, latents: &Array2<f64>) -> Result<Array2<f64>> {
        if latents.ncols() != self.latent_dim {
            return Err(Error::Contract(format!(
                "decoder expects latent dim {}, got {}",
                self.latent_dim,
                latents.ncols()
            )));
        }
        let out = self.mlp.forward(latents);
        require_finite(&out, "decoder output")?;
        Ok(out)
    }

    pub fn spec(&self) -> ArchitectureSpec {
        ArchitectureSpec::for_mlp(ModelKind::VaeDecoder, &self.mlp)
    }
}

// ---------------------------------------------------------------------------
// Adversary
// ---------------------------------------------------------------------------

/// Binary discriminator over convention outputs; sigmoid scalar score.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryNet {
    pub mlp: Mlp,
}

impl AdversaryNet {
    pub fn new(input_dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Sigmoid);
        Self {
            mlp: Mlp::new(&dims, &acts, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn forward_scores(&self, candidates: &Array2<f64>) -> Result<Vec<f64>> {
        if candidates.ncols() != self.input_dim() {
            return Err(Error::Contract(format!(
                "adversary expects {}-d candidates, got {}",
                self.input_dim(),
                candidates.ncols()
            )));
        }
        Ok(self.mlp.forward(candidates).column(0).to_vec())
    }

    pub fn spec(&self) -> ArchitectureSpec {
        ArchitectureSpec::for_mlp(ModelKind::Adversary, &self.mlp)
    }
}

// ---------------------------------------------------------------------------
// CommNet
// ---------------------------------------------------------------------------

/// Per-agent hidden vectors after each f-block layer. These are the
/// convention signals the lever-game adversaries discriminate.
#[derive(Debug, Clone, PartialEq)]
pub struct CommNetLayerOutputs {
    /// `agents x hidden` rows for the first f-block.
    pub layer1: Array2<f64>,
    /// `agents x hidden` rows for the second f-block.
    pub layer2: Array2<f64>,
}

/// CommNet with two f-block layers and shared weights across the three
/// agents. Each f-block consumes the agent's previous hidden state
/// concatenated with the mean of the *other* agents' hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct CommNet {
    pub embed: Linear,
    pub f1: Linear,
    pub f2: Linear,
    pub head: Linear,
    pub hidden: usize,
}

/// Cached activations from a batched CommNet pass. Rows are deal-major:
/// deal `d`'s agents occupy rows `3d .. 3d+3`.
pub struct CommNetCache {
    pub x: Array2<f64>,
    pub h0: Array2<f64>,
    pub z1: Array2<f64>,
    pub h1: Array2<f64>,
    pub z2: Array2<f64>,
    pub h2: Array2<f64>,
    pub q: Array2<f64>,
}

/// Gradients mirroring [`CommNet`] parameters.
#[derive(Debug, Clone)]
pub struct CommNetGrads {
    pub embed_w: Array2<f64>,
    pub embed_b: Array1<f64>,
    pub f1_w: Array2<f64>,
    pub f1_b: Array1<f64>,
    pub f2_w: Array2<f64>,
    pub f2_b: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

/// Replace each row with the mean of the other rows of its 3-agent group.
/// Self-adjoint, so it also serves as its own backward pass.
fn mean_others(h: &Array2<f64>) -> Array2<f64> {
    let rows = h.nrows();
    debug_assert_eq!(rows % LEVER_AGENTS, 0);
    let mut out = Array2::zeros(h.raw_dim());
    for d in 0..rows / LEVER_AGENTS {
        let base = d * LEVER_AGENTS;
        let group = h.slice(s![base..base + LEVER_AGENTS, ..]);
        let sum = group.sum_axis(Axis(0));
        for k in 0..LEVER_AGENTS {
            let mut row = out.row_mut(base + k);
            row.assign(&(&sum - &group.row(k)));
            row.mapv_inplace(|v| v / (LEVER_AGENTS - 1) as f64);
        }
    }
    out
}

fn one_hot_rows(ids: &[usize], width: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((ids.len(), width));
    for (row, id) in ids.iter().enumerate() {
        if *id >= width {
            return Err(Error::Contract(format!("id {id} out of range 0..{width}")));
        }
        x[(row, *id)] = 1.0;
    }
    Ok(x)
}

impl CommNet {
    pub fn new(hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            embed: Linear::init(NUM_LEVER_IDS, hidden, rng),
            f1: Linear::init(2 * hidden, hidden, rng),
            f2: Linear::init(2 * hidden, hidden, rng),
            head: Linear::init(hidden, NUM_LEVERS, rng),
            hidden,
        }
    }

    /// Batched forward over whole deals (`ids.len()` must be a multiple of
    /// three, deal-major). Returns per-agent Q-value rows and the cache.
    pub fn forward_cached(&self, ids: &[usize]) -> Result<CommNetCache> {
        if ids.is_empty() || ids.len() % LEVER_AGENTS != 0 {
            return Err(Error::Contract(format!(
                "CommNet processes whole 3-agent deals, got {} ids",
                ids.len()
            )));
        }
        let x = one_hot_rows(ids, NUM_LEVER_IDS)?;
        let mut h0 = self.embed.forward(&x);
        Activation::Relu.apply_inplace(&mut h0);
        let c1 = mean_others(&h0);
        let z1 = concatenate![Axis(1), h0, c1];
        let mut h1 = self.f1.forward(&z1);
        Activation::Relu.apply_inplace(&mut h1);
        let c2 = mean_others(&h1);
        let z2 = concatenate![Axis(1), h1, c2];
        let mut h2 = self.f2.forward(&z2);
        Activation::Relu.apply_inplace(&mut h2);
        let q = self.head.forward(&h2);
        Ok(CommNetCache {
            x,
            h0,
            z1,
            h1,
            z2,
            h2,
            q,
        })
    }

    /// Q-values and both layers' f-block outputs for one deal.
    pub fn forward(
        &self,
        ids: [usize; LEVER_AGENTS],
    ) -> Result<(Array2<f64>, CommNetLayerOutputs)> {
        let cache = self.forward_cached(&ids)?;
        Ok((
            cache.q.clone(),
            CommNetLayerOutputs {
                layer1: cache.h1.clone(),
                layer2: cache.h2.clone(),
            },
        ))
    }

    /// Backward pass. `d_q` matches the Q output; `d_h0`/`d_h1`/`d_h2` are
    /// optional extra gradients applied directly to the communicated layer
    /// outputs (paired and adversarial losses attach there).
    pub fn backward(
        &self,
        cache: &CommNetCache,
        d_q: &Array2<f64>,
        d_h0_direct: Option<&Array2<f64>>,
        d_h1_direct: Option<&Array2<f64>>,
        d_h2_direct: Option<&Array2<f64>>,
    ) -> CommNetGrads {
        // `.t().dot()` may produce F-order output; pin to standard layout so
        // flat parameter walks line up with the stored row-major weights.
        let head_w_g = d_q.t().dot(&cache.h2).as_standard_layout().into_owned();
        let head_b_g = d_q.sum_axis(Axis(0));
        let mut d_h2 = d_q.dot(&self.head.w);
        if let Some(extra) = d_h2_direct {
            d_h2 += extra;
        }
        let d_z2_pre = &d_h2 * &Activation::Relu.grad_from_output(&cache.h2);
        let f2_w_g = d_z2_pre
            .t()
            .dot(&cache.z2)
            .as_standard_layout()
            .into_owned();
        let f2_b_g = d_z2_pre.sum_axis(Axis(0));
        let d_z2 = d_z2_pre.dot(&self.f2.w);
        let h = self.hidden;
        let mut d_h1 = d_z2.slice(s![.., ..h]).to_owned();
        d_h1 += &mean_others(&d_z2.slice(s![.., h..]).to_owned());
        if let Some(extra) = d_h1_direct {
            d_h1 += extra;
        }
        let d_z1_pre = &d_h1 * &Activation::Relu.grad_from_output(&cache.h1);
        let f1_w_g = d_z1_pre
            .t()
            .dot(&cache.z1)
            .as_standard_layout()
            .into_owned();
        let f1_b_g = d_z1_pre.sum_axis(Axis(0));
        let d_z1 = d_z1_pre.dot(&self.f1.w);
        let mut d_h0 = d_z1.slice(s![.., ..h]).to_owned();
        d_h0 += &mean_others(&d_z1.slice(s![.., h..]).to_owned());
        if let Some(extra) = d_h0_direct {
            d_h0 += extra;
        }
        let d_x_pre = &d_h0 * &Activation::Relu.grad_from_output(&cache.h0);
        let embed_w_g = d_x_pre.t().dot(&cache.x).as_standard_layout().into_owned();
        let embed_b_g = d_x_pre.sum_axis(Axis(0));
        CommNetGrads {
            embed_w: embed_w_g,
            embed_b: embed_b_g,
            f1_w: f1_w_g,
            f1_b: f1_b_g,
            f2_w: f2_w_g,
            f2_b: f2_b_g,
            head_w: head_w_g,
            head_b: head_b_g,
        }
    }

    pub fn spec(&self) -> ArchitectureSpec {
        ArchitectureSpec {
            kind: ModelKind::Commnet,
            input_dim: NUM_LEVER_IDS,
            output_dim: NUM_LEVERS,
            hidden: vec![self.hidden, self.hidden],
            activations: vec![
                "relu".into(),
                "relu".into(),
                "relu".into(),
                "identity".into(),
            ],
        }
    }
}

/// Forward one deal through a *mixed* team: each agent runs its own net's
/// parameters, communication crosses nets.
pub fn commnet_forward_mixed(
    nets: [&CommNet; LEVER_AGENTS],
    ids: [usize; LEVER_AGENTS],
) -> Result<(Array2<f64>, CommNetLayerOutputs)> {
    let hidden = nets[0].hidden;
    if nets.iter().any(|n| n.hidden != hidden) {
        return Err(Error::Contract(
            "mixed CommNet teams need equal hidden widths".into(),
        ));
    }
    let x = one_hot_rows(&ids, NUM_LEVER_IDS)?;
    let mut h0 = Array2::zeros((LEVER_AGENTS, hidden));
    for k in 0..LEVER_AGENTS {
        let mut row = nets[k].embed.forward(&x.slice(s![k..k + 1, ..]).to_owned());
        Activation::Relu.apply_inplace(&mut row);
        h0.row_mut(k).assign(&row.row(0));
    }
    let c1 = mean_others(&h0);
    let mut h1 = Array2::zeros((LEVER_AGENTS, hidden));
    for k in 0..LEVER_AGENTS {
        let z = concatenate![
            Axis(1),
            h0.slice(s![k..k + 1, ..]).to_owned(),
            c1.slice(s![k..k + 1, ..]).to_owned()
        ];
        let mut row = nets[k].f1.forward(&z);
        Activation::Relu.apply_inplace(&mut row);
        h1.row_mut(k).assign(&row.row(0));
    }
    let c2 = mean_others(&h1);
    let mut h2 = Array2::zeros((LEVER_AGENTS, hidden));
    let mut q = Array2::zeros((LEVER_AGENTS, NUM_LEVERS));
    for k in 0..LEVER_AGENTS {
        let z = concatenate![
            Axis(1),
            h1.slice(s![k..k + 1, ..]).to_owned(),
            c2.slice(s![k..k + 1, ..]).to_owned()
        ];
        let mut row = nets[k].f2.forward(&z);
        Activation::Relu.apply_inplace(&mut row);
        h2.row_mut(k).assign(&row.row(0));
        q.row_mut(k).assign(&nets[k].head.forward(&row).row(0));
    }
    Ok((
        q,
        CommNetLayerOutputs {
            layer1: h1,
            layer2: h2,
        },
    ))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &str = "ASP-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub spec: ArchitectureSpec,
    pub seed: u64,
    pub steps: u64,
    pub domain: String,
    pub arrays: Vec<ArrayInfo>,
}

/// Training provenance stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub steps: u64,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub data: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{CHECKPOINT_MAGIC} {}", self.header.version)?;
        serde_json::to_writer(&mut file, &self.header)?;
        writeln!(file)?;
        writeln!(file, "---")?;
        for array in &self.data {
            let mut bytes = Vec::with_capacity(array.len() * 4);
            for v in array {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            file.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let magic_end = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
        let magic_line = std::str::from_utf8(&bytes[..magic_end])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let mut parts = magic_line.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::Checkpoint(format!("bad magic line '{magic_line}'")));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let json_start = magic_end + 1;
        let json_end = json_start
            + bytes[json_start..]
                .iter()
                .position(|b| *b == b'\n')
                .ok_or_else(|| Error::Checkpoint("missing header JSON".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[json_start..json_end])?;
        if header.version != version {
            return Err(Error::Checkpoint("header/magic version mismatch".into()));
        }
        // Separator line.
        let sep_start = json_end + 1;
        let sep_end = sep_start
            + bytes[sep_start..]
                .iter()
                .position(|b| *b == b'\n')
                .ok_or_else(|| Error::Checkpoint("missing separator".into()))?;
        if &bytes[sep_start..sep_end] != b"---" {
            return Err(Error::Checkpoint("missing '---' separator".into()));
        }
        let mut offset = sep_end + 1;
        let mut data = Vec::with_capacity(header.arrays.len());
        for info in &header.arrays {
            let count: usize = info.shape.iter().product();
            let len = count * 4;
            if offset + len > bytes.len() {
                return Err(Error::Checkpoint(format!(
                    "array '{}' truncated: wanted {len} bytes at offset {offset}",
                    info.name
                )));
            }
            let mut array = Vec::with_capacity(count);
            let mut cursor = &bytes[offset..offset + len];
            let mut buf = [0u8; 4];
            for _ in 0..count {
                cursor.read_exact(&mut buf)?;
                array.push(f32::from_le_bytes(buf));
            }
            data.push(array);
            offset += len;
        }
        if offset != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the declared arrays",
                bytes.len() - offset
            )));
        }
        Ok(Self { header, data })
    }
}

fn mlp_arrays(mlp: &Mlp) -> (Vec<ArrayInfo>, Vec<Vec<f32>>) {
    let mut infos = Vec::new();
    let mut data = Vec::new();
    for (idx, layer) in mlp.layers.iter().enumerate() {
        infos.push(ArrayInfo {
            name: format!("layer{idx}.w"),
            shape: layer.w.shape().to_vec(),
        });
        data.push(layer.w.iter().map(|v| *v as f32).collect());
        infos.push(ArrayInfo {
            name: format!("layer{idx}.b"),
            shape: vec![layer.b.len()],
        });
        data.push(layer.b.iter().map(|v| *v as f32).collect());
    }
    (infos, data)
}

fn mlp_from_checkpoint(ckpt: &Checkpoint) -> Result<Mlp> {
    let spec = &ckpt.header.spec;
    let dims = spec.mlp_dims();
    let acts = spec.mlp_acts()?;
    let n_layers = dims.len() - 1;
    if ckpt.header.arrays.len() != 2 * n_layers {
        return Err(Error::Checkpoint(format!(
            "expected {} arrays, found {}",
            2 * n_layers,
            ckpt.header.arrays.len()
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let w_info = &ckpt.header.arrays[2 * l];
        let b_info = &ckpt.header.arrays[2 * l + 1];
        if w_info.shape != vec![dims[l + 1], dims[l]] {
            return Err(Error::Checkpoint(format!(
                "array '{}' has shape {:?}, expected [{}, {}]",
                w_info.name,
                w_info.shape,
                dims[l + 1],
                dims[l]
            )));
        }
        if b_info.shape != vec![dims[l + 1]] {
            return Err(Error::Checkpoint(format!(
                "array '{}' has shape {:?}, expected [{}]",
                b_info.name,
                b_info.shape,
                dims[l + 1]
            )));
        }
        let w = Array2::from_shape_vec(
            (dims[l + 1], dims[l]),
            ckpt.data[2 * l].iter().map(|v| *v as f64).collect(),
        )
        .map_err(|e| Error::Checkpoint(format!("array '{}': {e}", w_info.name)))?;
        let b = Array1::from_vec(ckpt.data[2 * l + 1].iter().map(|v| *v as f64).collect());
        layers.push(Linear { w, b });
    }
    Ok(Mlp { dims, acts, layers })
}

fn mlp_checkpoint(kind: ModelKind, mlp: &Mlp, meta: &TrainMeta) -> Checkpoint {
    let (arrays, data) = mlp_arrays(mlp);
    Checkpoint {
        header: CheckpointHeader {
            version: CHECKPOINT_VERSION,
            spec: ArchitectureSpec::for_mlp(kind, mlp),
            seed: meta.seed,
            steps: meta.steps,
            domain: meta.domain.clone(),
            arrays,
        },
        data,
    }
}

fn expect_kind(ckpt: &Checkpoint, kind: ModelKind) -> Result<()> {
    if ckpt.header.spec.kind != kind {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds a {:?}, expected {:?}",
            ckpt.header.spec.kind, kind
        )));
    }
    Ok(())
}

macro_rules! mlp_checkpoint_impl {
    ($ty:ident, $kind:expr) => {
        impl $ty {
            pub fn to_checkpoint(&self, meta: &TrainMeta) -> Checkpoint {
                mlp_checkpoint($kind, &self.mlp, meta)
            }
        }
    };
}

mlp_checkpoint_impl!(Speaker, ModelKind::Speaker);
mlp_checkpoint_impl!(Actor, ModelKind::Actor);
mlp_checkpoint_impl!(AdversaryNet, ModelKind::Adversary);

impl Speaker {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_kind(ckpt, ModelKind::Speaker)?;
        Ok(Self {
            mlp: mlp_from_checkpoint(ckpt)?,
        })
    }
}

impl Actor {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_kind(ckpt, ModelKind::Actor)?;
        Ok(Self {
            mlp: mlp_from_checkpoint(ckpt)?,
        })
    }
}

impl AdversaryNet {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_kind(ckpt, ModelKind::Adversary)?;
        Ok(Self {
            mlp: mlp_from_checkpoint(ckpt)?,
        })
    }
}

impl VaeEncoder {
    pub fn to_checkpoint(&self, meta: &TrainMeta) -> Checkpoint {
        mlp_checkpoint(ModelKind::VaeEncoder, &self.mlp, meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_kind(ckpt, ModelKind::VaeEncoder)?;
        let mlp = mlp_from_checkpoint(ckpt)?;
        let latent_dim = mlp.output_dim() / 2;
        Ok(Self { mlp, latent_dim })
    }
}

impl VaeDecoder {
    pub fn to_checkpoint(&self, meta: &TrainMeta) -> Checkpoint {
        mlp_checkpoint(ModelKind::VaeDecoder, &self.mlp, meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_kind(ckpt, ModelKind::VaeDecoder)?;
        let mlp = mlp_from_checkpoint(ckpt)?;
        let latent_dim = mlp.input_dim();
        Ok(Self { mlp, latent_dim })
    }
}

impl CommNet {
    pub fn to_checkpoint(&self, meta: &TrainMeta) -> Checkpoint {
        let named: [(&str, &Array2<f64>, &Array1<f64>); 4] = [
            ("embed", &self.embed.w, &self.embed.b),
            ("f1", &self.f1.w, &self.f1.b),
            ("f2", &self.f2.w, &self.f2.b),
            ("head", &self.head.w, &self.head.b),
        ];
        let mut arrays = Vec::new();
        let mut data = Vec::new();
        for (name, w, b) in named {
            arrays.push(ArrayInfo {
                name: format!("{name}.w"),
                shape: w.shape().to_vec(),
            });
            data.push(w.iter().map(|v| *v as f32).collect());
            arrays.push(ArrayInfo {
                name: format!("{name}.b"),
                shape: vec![b.len()],
            });
            data.push(b.iter().map(|v| *v as f32).collect());
        }
        Checkpoint {
            header: CheckpointHeader {
                version: CHECKPOINT_VERSION,
                spec: self.spec(),
                seed: meta.seed,
                steps: meta.steps,
                domain: meta.domain.clone(),
                arrays,
            },
            data,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_kind(ckpt, ModelKind::Commnet)?;
        let hidden = *ckpt
            .header
            .spec
            .hidden
            .first()
            .ok_or_else(|| Error::Checkpoint("commnet spec missing hidden width".into()))?;
        let expected: [(&str, (usize, usize)); 4] = [
            ("embed", (hidden, NUM_LEVER_IDS)),
            ("f1", (hidden, 2 * hidden)),
            ("f2", (hidden, 2 * hidden)),
            ("head", (NUM_LEVERS, hidden)),
        ];
        let mut linears = Vec::with_capacity(4);
        for (idx, (name, (rows, cols))) in expected.iter().enumerate() {
            let w_info = &ckpt.header.arrays[2 * idx];
            if w_info.shape != vec![*rows, *cols] {
                return Err(Error::Checkpoint(format!(
                    "array '{}' has shape {:?}, expected [{rows}, {cols}]",
                    w_info.name, w_info.shape
                )));
            }
            let w = Array2::from_shape_vec(
                (*rows, *cols),
                ckpt.data[2 * idx].iter().map(|v| *v as f64).collect(),
            )
            .map_err(|e| Error::Checkpoint(format!("array '{name}.w': {e}")))?;
            let b = Array1::from_vec(ckpt.data[2 * idx + 1].iter().map(|v| *v as f64).collect());
            linears.push(Linear { w, b });
        }
        let head = linears.pop().unwrap();
        let f2 = linears.pop().unwrap();
        let f1 = linears.pop().unwrap();
        let embed = linears.pop().unwrap();
        Ok(Self {
            embed,
            f1,
            f2,
            head,
            hidden,
        })
    }
}

/// Apply [`CommNetGrads`] with four per-linear Adam states packed into MLPs
/// would be awkward; instead the training module wraps each Linear in a
/// one-layer view. Helper to expose the linears uniformly.
pub struct CommNetParams<'a> {
    pub linears: [&'a mut Linear; 4],
}

impl CommNet {
    pub fn params_mut(&mut self) -> CommNetParams<'_> {
        CommNetParams {
            linears: [&mut self.embed, &mut self.f1, &mut self.f2, &mut self.head],
        }
    }
}

impl CommNetGrads {
    pub fn as_pairs(&self) -> [(&Array2<f64>, &Array1<f64>); 4] {
        [
            (&self.embed_w, &self.embed_b),
            (&self.f1_w, &self.f1_b),
            (&self.f2_w, &self.f2_b),
            (&self.head_w, &self.head_b),
        ]
    }

    pub fn zeros_like(net: &CommNet) -> Self {
        Self {
            embed_w: Array2::zeros(net.embed.w.raw_dim()),
            embed_b: Array1::zeros(net.embed.b.raw_dim()),
            f1_w: Array2::zeros(net.f1.w.raw_dim()),
            f1_b: Array1::zeros(net.f1.b.raw_dim()),
            f2_w: Array2::zeros(net.f2.w.raw_dim()),
            f2_b: Array1::zeros(net.f2.b.raw_dim()),
            head_w: Array2::zeros(net.head.w.raw_dim()),
            head_b: Array1::zeros(net.head.b.raw_dim()),
        }
    }

    pub fn add_scaled(&mut self, other: &CommNetGrads, scale: f64) {
        self.embed_w.scaled_add(scale, &other.embed_w);
        self.embed_b.scaled_add(scale, &other.embed_b);
        self.f1_w.scaled_add(scale, &other.f1_w);
        self.f1_b.scaled_add(scale, &other.f1_b);
        self.f2_w.scaled_add(scale, &other.f2_w);
        self.f2_b.scaled_add(scale, &other.f2_b);
        self.head_w.scaled_add(scale, &other.head_w);
        self.head_b.scaled_add(scale, &other.head_b);
    }
}

// Re-exported for training code that backpropagates through Mlp-based models.
pub use crate::nn::{MlpCache as ModelCache, MlpGrads as ModelGrads};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_rng;
    use ndarray::arr2;

    #[test]
    fn speaker_contract() {
        let mut rng = stream_rng(3, "models");
        let speaker = Speaker::new(&[64], &mut rng);
        let states = arr2(&[[0.5, -1.0]]);
        let out = speaker.forward(&states).unwrap();
        assert_eq!(out.ncols(), COMM_DIM);
        assert_eq!(out, speaker.forward(&states).unwrap());
        assert!(out.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn speaker_zero_final_layer_outputs_zero() {
        let mut rng = stream_rng(3, "models");
        let mut speaker = Speaker::new(&[64], &mut rng);
        let last = speaker.mlp.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b.fill(0.0);
        let out = speaker.forward(&arr2(&[[1.0, 2.0]])).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn actor_softmax_contract() {
        let mut rng = stream_rng(4, "models");
        let actor = Actor::new(&[64], &mut rng);
        let comm = Array2::from_shape_fn((3, COMM_DIM), |(i, j)| ((i + j) as f64).sin());
        let probs = actor.forward_probs(&comm).unwrap();
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|p| *p >= 0.0));
        }
        // Uniform logits give the uniform distribution.
        let mut actor = actor;
        for layer in &mut actor.mlp.layers {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        let probs = actor.forward_probs(&comm).unwrap();
        assert!(probs.iter().all(|p| (p - 0.2).abs() < 1e-12));
    }

    #[test]
    fn vae_reparameterization_identities() {
        let mean = arr2(&[[0.3, -0.7]]);
        let log_var = arr2(&[[0.0, 0.0]]);
        let zero = Array2::zeros((1, 2));
        assert_eq!(vae_reparameterize(&mean, &log_var, &zero).unwrap(), mean);
        let noise = arr2(&[[1.5, -2.0]]);
        let sample = vae_reparameterize(&mean, &log_var, &noise).unwrap();
        assert_eq!(sample, &mean + &noise);
    }

    #[test]
    fn vae_decoder_range_and_dim_checks() {
        let mut rng = stream_rng(5, "models");
        let decoder = VaeDecoder::new(4, &[32], &mut rng);
        let z = Array2::from_shape_fn((2, 4), |(i, j)| (i as f64) - (j as f64));
        let out = decoder.decode(&z).unwrap();
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        let wrong = Array2::zeros((1, 5));
        assert!(matches!(decoder.decode(&wrong), Err(Error::Contract(_))));

        let encoder = VaeEncoder::new(4, &[32], &mut rng);
        let images = Array2::from_elem((2, IMAGE_DIM), 0.5);
        let (mean, log_var) = encoder.encode(&images).unwrap();
        assert_eq!(mean.ncols(), 4);
        assert_eq!(log_var.ncols(), 4);
    }

    #[test]
    fn adversary_contract() {
        let mut rng = stream_rng(6, "models");
        let mut adv = AdversaryNet::new(8, &[16, 16], &mut rng);
        let x = Array2::from_elem((4, 8), 0.25);
        let scores = adv.forward_scores(&x).unwrap();
        assert!(scores.iter().all(|s| *s > 0.0 && *s < 1.0));
        assert_eq!(scores, adv.forward_scores(&x).unwrap());
        // Zero final layer scores exactly 0.5.
        let last = adv.mlp.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b.fill(0.0);
        let scores = adv.forward_scores(&x).unwrap();
        assert!(scores.iter().all(|s| (*s - 0.5).abs() < 1e-12));
        let wrong = Array2::zeros((1, 9));
        assert!(adv.forward_scores(&wrong).is_err());
    }

    #[test]
    fn commnet_permutation_equivariance() {
        let mut rng = stream_rng(7, "models");
        let net = CommNet::new(16, &mut rng);
        let (q, outs) = net.forward([8, 3, 5]).unwrap();
        let (q_perm, outs_perm) = net.forward([3, 5, 8]).unwrap();
        // Agent order [8,3,5] permuted to [3,5,8]: row k of the permuted
        // output equals row perm(k) of the original (up to summation order
        // in the mean over other agents).
        let perm = [1usize, 2, 0];
        let close = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
            a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12)
        };
        for k in 0..3 {
            assert!(close(q_perm.row(k), q.row(perm[k])));
            assert!(close(outs_perm.layer1.row(k), outs.layer1.row(perm[k])));
            assert!(close(outs_perm.layer2.row(k), outs.layer2.row(perm[k])));
        }
        // Two layers by three agents of exposed outputs.
        assert_eq!(outs.layer1.nrows() + outs.layer2.nrows(), 6);
        // Mixed forward with three copies of the same net matches.
        let (q_mixed, _) = commnet_forward_mixed([&net, &net, &net], [8, 3, 5]).unwrap();
        for (a, b) in q_mixed.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn commnet_backward_matches_finite_differences() {
        let mut rng = stream_rng(8, "models");
        let mut net = CommNet::new(8, &mut rng);
        let ids = [2usize, 7, 4];
        // Loss: sum of squared Q values plus sums over every communicated
        // layer output, exercising all the direct layer gradients.
        let loss = |n: &CommNet| -> f64 {
            let cache = n.forward_cached(&ids).unwrap();
            cache.q.mapv(|v| v * v).sum()
                + 0.25 * cache.h0.sum()
                + cache.h1.sum()
                + 0.5 * cache.h2.sum()
        };
        let cache = net.forward_cached(&ids).unwrap();
        let d_q = cache.q.mapv(|v| 2.0 * v);
        let d_h0 = Array2::from_elem(cache.h0.raw_dim(), 0.25);
        let d_h1 = Array2::ones(cache.h1.raw_dim());
        let d_h2 = Array2::from_elem(cache.h2.raw_dim(), 0.5);
        let grads = net.backward(&cache, &d_q, Some(&d_h0), Some(&d_h1), Some(&d_h2));

        let h = 1e-4;
        let checks: [(&str, (usize, usize)); 4] = [
            ("embed", (0, 3)),
            ("f1", (2, 5)),
            ("f2", (1, 9)),
            ("head", (2, 2)),
        ];
        for (name, idx) in checks {
            let analytic = match name {
                "embed" => grads.embed_w[idx],
                "f1" => grads.f1_w[idx],
                "f2" => grads.f2_w[idx],
                _ => grads.head_w[idx],
            };
            fn get<'a>(n: &'a mut CommNet, name: &str) -> &'a mut Array2<f64> {
                match name {
                    "embed" => &mut n.embed.w,
                    "f1" => &mut n.f1.w,
                    "f2" => &mut n.f2.w,
                    _ => &mut n.head.w,
                }
            }
            let orig = get(&mut net, name)[idx];
            get(&mut net, name)[idx] = orig + h;
            let up = loss(&net);
            get(&mut net, name)[idx] = orig - h;
            let down = loss(&net);
            get(&mut net, name)[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - analytic).abs() <= 1e-3 * fd.abs().max(analytic.abs()).max(1e-6),
                "{name}{idx:?}: fd {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = stream_rng(9, "models");
        let speaker = Speaker::new(&[64], &mut rng);
        let meta = TrainMeta {
            seed: 9,
            steps: 123,
            domain: "particle".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("speaker.ckpt");
        speaker.to_checkpoint(&meta).save(&path).unwrap();
        let loaded = Speaker::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(loaded, speaker);
        // Saving the loaded model reproduces the file byte for byte.
        let path2 = dir.path().join("speaker2.ckpt");
        loaded.to_checkpoint(&meta).save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn checkpoint_rejects_tampering() {
        let mut rng = stream_rng(10, "models");
        let net = CommNet::new(8, &mut rng);
        let meta = TrainMeta {
            seed: 1,
            steps: 0,
            domain: "lever".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        net.to_checkpoint(&meta).save(&path).unwrap();

        // Truncated payload names the offending array.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        match Checkpoint::load(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("head.b"), "{msg}"),
            other => panic!("expected checkpoint error, got {other:?}"),
        }

        // Unknown version.
        let mut tampered = bytes.clone();
        tampered[CHECKPOINT_MAGIC.len() + 1] = b'9';
        std::fs::write(&path, &tampered).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));

        // Tampered shape metadata.
        std::fs::write(&path, &bytes).unwrap();
        let mut ckpt = Checkpoint::load(&path).unwrap();
        ckpt.header.arrays[0].shape = vec![1, 1];
        assert!(CommNet::from_checkpoint(&ckpt).is_err());

        // Wrong kind.
        let ckpt = Checkpoint::load(&path).unwrap();
        assert!(Speaker::from_checkpoint(&ckpt).is_err());
    }
}
