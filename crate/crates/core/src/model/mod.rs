//! Whisper-style audio encoder, mean pooling and projection head.
//!
//! Layout (shape-compatible with `whisper-tiny` at the default config):
//!
//! ```text
//! X [F×T] ─ conv1 (k3, s1) ─ GELU ─ conv2 (k3, s2) ─ GELU ─ + sinusoids
//!         ─ n_layers × pre-norm block ─ LayerNorm ─ E [T'×D], T' = ceil(T/2)
//! E ─ mean over T' ─ dense D→H ─ ReLU ─ dense H→embed_dim ─ z
//! ```
//!
//! Tensor names follow the Hugging Face `WhisperEncoder` state-dict keys
//! (`encoder.conv1.weight`, `encoder.layers.0.self_attn.q_proj.weight`, ...),
//! so externally trained encoder weights map one-to-one by name. The
//! projection head lives under `projection.dense{1,2}`.

mod checkpoint;
mod forward;
mod layers;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CheckpointDtype, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{backward, forward, ForwardTrace};
pub(crate) use forward::{resume, Stage};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

/// Name of the only non-trainable tensor.
pub const POSITIONS: &str = "encoder.embed_positions.weight";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub proj_hidden: usize,
    pub embed_dim: usize,
    /// Frame capacity after the stride-2 convolution.
    pub max_frames: usize,
}

impl Default for ModelConfig {
    /// whisper-tiny encoder dimensions with a 384→384→256 head.
    fn default() -> Self {
        ModelConfig {
            n_mels: 80,
            d_model: 384,
            n_layers: 4,
            n_heads: 6,
            ffn_mult: 4,
            proj_hidden: 384,
            embed_dim: 256,
            max_frames: 1500,
        }
    }
}

impl ModelConfig {
    /// Small preset used by tests and desk-scale training.
    pub fn micro() -> Self {
        ModelConfig {
            n_mels: 80,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            ffn_mult: 4,
            proj_hidden: 64,
            embed_dim: 256,
            max_frames: 150,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ffn(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_mels", self.n_mels),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ffn_mult", self.ffn_mult),
            ("proj_hidden", self.proj_hidden),
            ("embed_dim", self.embed_dim),
            ("max_frames", self.max_frames),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 || self.d_model < 4 {
            return Err(Error::config("d_model must be even and >= 4 for sinusoidal positions"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `[out, in, 3]`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_norm: LayerNorm,
    pub q_proj: Linear,
    /// Whisper's key projection has no bias.
    pub k_proj: Linear,
    pub v_proj: Linear,
    pub out_proj: Linear,
    pub mlp_norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    /// `[max_frames, d_model]`, fixed sinusoids.
    pub positions: Tensor,
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
    pub dense1: Linear,
    pub dense2: Linear,
}

fn linear_zeros(n_out: usize, n_in: usize, bias: bool) -> Linear {
    Linear {
        weight: Tensor::zeros(&[n_out, n_in]),
        bias: bias.then(|| Tensor::zeros(&[n_out])),
    }
}

fn norm_ones(d: usize) -> LayerNorm {
    LayerNorm {
        weight: Tensor::filled(&[d], 1.0),
        bias: Tensor::zeros(&[d]),
    }
}

/// Whisper's sinusoidal table: `[sin(t·ω_i) | cos(t·ω_i)]` with
/// `ω_i = 10000^(-i / (D/2 - 1))`.
pub fn sinusoids(length: usize, channels: usize) -> Tensor {
    let half = channels / 2;
    let inc = 10000f64.ln() / (half as f64 - 1.0);
    let mut t = Tensor::zeros(&[length, channels]);
    for pos in 0..length {
        for i in 0..half {
            let angle = pos as f64 * (-inc * i as f64).exp();
            t.data[pos * channels + i] = angle.sin();
            t.data[pos * channels + half + i] = angle.cos();
        }
    }
    t
}

impl ModelParams {
    /// All weights zero, layer-norm gains one, positions filled in.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                attn_norm: norm_ones(d),
                q_proj: linear_zeros(d, d, true),
                k_proj: linear_zeros(d, d, false),
                v_proj: linear_zeros(d, d, true),
                out_proj: linear_zeros(d, d, true),
                mlp_norm: norm_ones(d),
                fc1: linear_zeros(config.d_ffn(), d, true),
                fc2: linear_zeros(d, config.d_ffn(), true),
            })
            .collect();
        Ok(ModelParams {
            config,
            conv1: Conv1d {
                weight: Tensor::zeros(&[d, config.n_mels, 3]),
                bias: Tensor::zeros(&[d]),
            },
            conv2: Conv1d {
                weight: Tensor::zeros(&[d, d, 3]),
                bias: Tensor::zeros(&[d]),
            },
            positions: sinusoids(config.max_frames, d),
            blocks,
            final_norm: norm_ones(d),
            dense1: linear_zeros(config.proj_hidden, d, true),
            dense2: linear_zeros(config.embed_dim, config.proj_hidden, true),
        })
    }

    /// Truncated-normal (±2σ, σ = 0.02) weights, zero biases, unit norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut r = rng::substream(seed, &[0x1417]);
        for (name, t) in p.tensors_mut() {
            if name.ends_with(".weight") && !name.contains("norm") && name != POSITIONS {
                for x in t.data.iter_mut() {
                    *x = truncated_normal(&mut r) * INIT_STD;
                }
            }
        }
        Ok(p)
    }

    /// Gradient buffer: every tensor zero (including gains).
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for (_, t) in g.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        g
    }

    /// Every tensor with its state-dict name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("encoder.conv1.weight".into(), &self.conv1.weight));
        out.push(("encoder.conv1.bias".into(), &self.conv1.bias));
        out.push(("encoder.conv2.weight".into(), &self.conv2.weight));
        out.push(("encoder.conv2.bias".into(), &self.conv2.bias));
        out.push((POSITIONS.into(), &self.positions));
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("encoder.layers.{i}");
            push_linear(&mut out, &format!("{p}.self_attn.k_proj"), &b.k_proj);
            push_linear(&mut out, &format!("{p}.self_attn.v_proj"), &b.v_proj);
            push_linear(&mut out, &format!("{p}.self_attn.q_proj"), &b.q_proj);
            push_linear(&mut out, &format!("{p}.self_attn.out_proj"), &b.out_proj);
            push_norm(&mut out, &format!("{p}.self_attn_layer_norm"), &b.attn_norm);
            push_linear(&mut out, &format!("{p}.fc1"), &b.fc1);
            push_linear(&mut out, &format!("{p}.fc2"), &b.fc2);
            push_norm(&mut out, &format!("{p}.final_layer_norm"), &b.mlp_norm);
        }
        push_norm(&mut out, "encoder.layer_norm", &self.final_norm);
        push_linear(&mut out, "projection.dense1", &self.dense1);
        push_linear(&mut out, "projection.dense2", &self.dense2);
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("encoder.conv1.weight".into(), &mut self.conv1.weight));
        out.push(("encoder.conv1.bias".into(), &mut self.conv1.bias));
        out.push(("encoder.conv2.weight".into(), &mut self.conv2.weight));
        out.push(("encoder.conv2.bias".into(), &mut self.conv2.bias));
        out.push((POSITIONS.into(), &mut self.positions));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("encoder.layers.{i}");
            push_linear_mut(&mut out, &format!("{p}.self_attn.k_proj"), &mut b.k_proj);
            push_linear_mut(&mut out, &format!("{p}.self_attn.v_proj"), &mut b.v_proj);
            push_linear_mut(&mut out, &format!("{p}.self_attn.q_proj"), &mut b.q_proj);
            push_linear_mut(&mut out, &format!("{p}.self_attn.out_proj"), &mut b.out_proj);
            push_norm_mut(&mut out, &format!("{p}.self_attn_layer_norm"), &mut b.attn_norm);
            push_linear_mut(&mut out, &format!("{p}.fc1"), &mut b.fc1);
            push_linear_mut(&mut out, &format!("{p}.fc2"), &mut b.fc2);
            push_norm_mut(&mut out, &format!("{p}.final_layer_norm"), &mut b.mlp_norm);
        }
        push_norm_mut(&mut out, "encoder.layer_norm", &mut self.final_norm);
        push_linear_mut(&mut out, "projection.dense1", &mut self.dense1);
        push_linear_mut(&mut out, "projection.dense2", &mut self.dense2);
        out
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors_mut().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn n_trainable(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|(n, _)| is_trainable(n))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors().into_iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n)
    }
}

pub fn is_trainable(name: &str) -> bool {
    name != POSITIONS
}

fn push_linear<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, l: &'a Linear) {
    out.push((format!("{prefix}.weight"), &l.weight));
    if let Some(b) = &l.bias {
        out.push((format!("{prefix}.bias"), b));
    }
}

fn push_norm<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, n: &'a LayerNorm) {
    out.push((format!("{prefix}.weight"), &n.weight));
    out.push((format!("{prefix}.bias"), &n.bias));
}

fn push_linear_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, l: &'a mut Linear) {
    out.push((format!("{prefix}.weight"), &mut l.weight));
    if let Some(b) = &mut l.bias {
        out.push((format!("{prefix}.bias"), b));
    }
}

fn push_norm_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, n: &'a mut LayerNorm) {
    out.push((format!("{prefix}.weight"), &mut n.weight));
    out.push((format!("{prefix}.bias"), &mut n.bias));
}

fn truncated_normal(r: &mut Rng) -> f64 {
    loop {
        let x = rng::normal(r);
        if x.abs() <= 2.0 {
            return x;
        }
    }
}

/// Encoder output for one input, `n_frames × dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddings {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub dim: usize,
}

impl FrameEmbeddings {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Final speaker embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Runs the encoder stack on one spectrogram.
pub fn encode(x: &LogMelSpectrogram, params: &ModelParams) -> Result<FrameEmbeddings> {
    let trace = forward::encode_trace(x, params)?;
    Ok(trace.into_frames())
}

/// Mean over the time axis.
pub fn pool(e: &FrameEmbeddings) -> Result<Vec<f64>> {
    if e.n_frames == 0 || e.dim == 0 {
        return Err(Error::arg("cannot pool an empty frame sequence"));
    }
    let mut out = vec![0.0; e.dim];
    for t in 0..e.n_frames {
        for (o, v) in out.iter_mut().zip(e.frame(t)) {
            *o += v;
        }
    }
    let inv = 1.0 / e.n_frames as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

/// Projection head: dense → ReLU → dense. No output normalization.
pub fn project(v: &[f64], params: &ModelParams) -> Result<EmbeddingVector> {
    if v.len() != params.config.d_model {
        return Err(Error::arg(format!(
            "pooled vector has {} dims, model expects {}",
            v.len(),
            params.config.d_model
        )));
    }
    Ok(EmbeddingVector(forward::head_forward(v, params).z))
}

/// `project(pool(encode(x)))`.
pub fn embed(x: &LogMelSpectrogram, params: &ModelParams) -> Result<EmbeddingVector> {
    Ok(EmbeddingVector(forward(x, params)?.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FeatureConfig;

    fn constant_input(cfg: &FeatureConfig, value: f64) -> LogMelSpectrogram {
        LogMelSpectrogram {
            data: vec![value; cfg.n_mels * cfg.fixed_frames],
            n_mels: cfg.n_mels,
            n_frames: cfg.fixed_frames,
            valid_frames: cfg.fixed_frames,
            config: *cfg,
        }
    }

    #[test]
    fn micro_output_shape() {
        let p = ModelParams::init(ModelConfig::micro(), 1).unwrap();
        let x = constant_input(&FeatureConfig::micro(), 0.3);
        let e = encode(&x, &p).unwrap();
        assert_eq!((e.n_frames, e.dim), (150, 32));
        assert_eq!(embed(&x, &p).unwrap().dim(), 256);
    }

    #[test]
    fn odd_frame_counts_round_up() {
        let p = ModelParams::init(ModelConfig::micro(), 1).unwrap();
        let cfg = FeatureConfig {
            fixed_frames: 7,
            ..FeatureConfig::micro()
        };
        assert_eq!(encode(&constant_input(&cfg, 0.1), &p).unwrap().n_frames, 4);
    }

    #[test]
    fn zero_weights_give_time_constant_output() {
        let mut p = ModelParams::zeros(ModelConfig::micro()).unwrap();
        p.positions.data.iter_mut().for_each(|x| *x = 0.0);
        let e = encode(&constant_input(&FeatureConfig::micro(), 0.7), &p).unwrap();
        for t in 1..e.n_frames {
            assert_eq!(e.frame(t), e.frame(0));
        }
    }

    #[test]
    fn shape_mismatches_are_argument_errors() {
        let p = ModelParams::init(ModelConfig::micro(), 1).unwrap();
        let wrong_mels = FeatureConfig {
            n_mels: 40,
            ..FeatureConfig::micro()
        };
        assert!(matches!(encode(&constant_input(&wrong_mels, 0.0), &p), Err(Error::InvalidArgument(_))));
        let too_long = FeatureConfig {
            fixed_frames: 302,
            ..FeatureConfig::micro()
        };
        assert!(matches!(encode(&constant_input(&too_long, 0.0), &p), Err(Error::InvalidArgument(_))));
        assert!(matches!(project(&[0.0; 5], &p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn non_finite_input_names_the_stage() {
        let p = ModelParams::init(ModelConfig::micro(), 1).unwrap();
        let mut x = constant_input(&FeatureConfig::micro(), 0.0);
        x.data[5] = f64::NAN;
        match encode(&x, &p) {
            Err(Error::NonFinite(stage)) => assert!(stage.contains("conv"), "{stage}"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn pool_small_cases() {
        let one = FrameEmbeddings {
            data: vec![1.5, -2.0],
            n_frames: 1,
            dim: 2,
        };
        assert_eq!(pool(&one).unwrap(), vec![1.5, -2.0]);
        let two = FrameEmbeddings {
            data: vec![1.0, 1.0, 3.0, 3.0],
            n_frames: 2,
            dim: 2,
        };
        assert_eq!(pool(&two).unwrap(), vec![2.0, 2.0]);
        let empty = FrameEmbeddings {
            data: vec![],
            n_frames: 0,
            dim: 2,
        };
        assert!(pool(&empty).is_err());
    }

    #[test]
    fn project_zero_input_zero_bias_is_zero() {
        let p = ModelParams::init(ModelConfig::micro(), 3).unwrap();
        let z = project(&[0.0; 32], &p).unwrap();
        assert!(z.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn project_hand_computed_case() {
        let cfg = ModelConfig {
            d_model: 4,
            n_heads: 1,
            n_layers: 0,
            proj_hidden: 3,
            embed_dim: 3,
            ..ModelConfig::micro()
        };
        let mut p = ModelParams::zeros(cfg).unwrap();
        // dense1: picks the first three inputs; dense2: identity with a bias
        for i in 0..3 {
            p.dense1.weight.data[i * 4 + i] = 1.0;
            p.dense2.weight.data[i * 3 + i] = 1.0;
        }
        p.dense1.bias.as_mut().unwrap().data = vec![0.0, 0.5, -1.0];
        p.dense2.bias.as_mut().unwrap().data = vec![0.25, 0.0, 0.0];
        let z = project(&[1.0, -2.0, 3.0, 9.0], &p).unwrap();
        // hidden = relu([1, -1.5, 2]) = [1, 0, 2]
        assert_eq!(z.0, vec![1.25, 0.0, 2.0]);
    }

    #[test]
    fn parameter_names_are_unique_and_stable() {
        let p = ModelParams::init(ModelConfig::micro(), 0).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        let mut_names: Vec<String> = p.clone().tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mut_names);
        // 4 stem + positions + 15 per block + 2 final norm + 4 head
        assert_eq!(names.len(), 5 + 15 * 2 + 2 + 4);
        assert!(names.contains(&"encoder.layers.1.self_attn.k_proj.weight".into()));
        assert!(!names.contains(&"encoder.layers.1.self_attn.k_proj.bias".into()));
    }

    #[test]
    fn init_statistics() {
        let p = ModelParams::init(ModelConfig::micro(), 5).unwrap();
        let w = &p.conv1.weight.data;
        assert!(w.iter().all(|x| x.abs() <= 2.0 * INIT_STD));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        // truncated at ±2σ: std ≈ 0.88σ
        assert!((var.sqrt() / INIT_STD - 0.88).abs() < 0.05);
        assert!(p.blocks[0].attn_norm.weight.data.iter().all(|&g| g == 1.0));
        assert!(p.conv1.bias.data.iter().all(|&b| b == 0.0));
        assert_eq!(p, ModelParams::init(ModelConfig::micro(), 5).unwrap());
    }

    #[test]
    fn sinusoid_table_matches_whisper_layout() {
        let t = sinusoids(3, 8);
        assert_eq!(&t.data[0..8], &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert!((t.data[8] - 1.0f64.sin()).abs() < 1e-15);
        assert!((t.data[8 + 4] - 1.0f64.cos()).abs() < 1e-15);
        // last frequency is 1/10000
        assert!((t.data[8 + 3] - (1e-4f64).sin()).abs() < 1e-15);
    }
}
