//! Forward pass with activation traces, and the matching reverse-mode pass.
//!
//! Activations are row-major `[frames × channels]`. Each stage keeps exactly
//! what its backward needs; [`backward`] walks the trace in reverse and
//! accumulates parameter gradients into a [`ModelParams`]-shaped buffer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::{col2im, gelu, gelu_grad, im2col, layer_norm, layer_norm_backward, softmax_rows, NormStats};
use super::{Block, FrameEmbeddings, ModelParams};
use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_strided, linear, linear_backward};

#[derive(Debug, Clone)]
pub(crate) struct StemTrace {
    t_in: usize,
    col1: Vec<f64>,
    h1: Vec<f64>,
    col2: Vec<f64>,
    h2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockTrace {
    pub(crate) x_in: Vec<f64>,
    n1: NormStats,
    xn1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    attn: Vec<f64>,
    x_mid: Vec<f64>,
    n2: NormStats,
    xn2: Vec<f64>,
    f1: Vec<f64>,
    g: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct PostTrace {
    pub(crate) x_in: Vec<f64>,
    stats: NormStats,
    pub(crate) frames: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadTrace {
    pub(crate) pooled: Vec<f64>,
    pub(crate) hidden: Vec<f64>,
    act: Vec<f64>,
    pub(crate) z: Vec<f64>,
}

/// Everything the backward pass needs for one input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(crate) t_out: usize,
    pub(crate) stem: StemTrace,
    pub(crate) blocks: Vec<BlockTrace>,
    pub(crate) post: PostTrace,
    pub(crate) head: HeadTrace,
    /// The embedding this trace produced.
    pub z: Vec<f64>,
}

pub(crate) struct EncoderTrace {
    t_out: usize,
    stem: StemTrace,
    blocks: Vec<BlockTrace>,
    post: PostTrace,
}

impl EncoderTrace {
    pub(crate) fn into_frames(self) -> FrameEmbeddings {
        let dim = self.post.frames.len() / self.t_out;
        FrameEmbeddings {
            data: self.post.frames,
            n_frames: self.t_out,
            dim,
        }
    }
}

fn check_finite(x: &[f64], stage: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(stage.into()))
    }
}

fn stem_forward(x: &LogMelSpectrogram, p: &ModelParams) -> Result<(StemTrace, Vec<f64>, usize)> {
    let cfg = &p.config;
    if x.n_mels != cfg.n_mels {
        return Err(Error::arg(format!(
            "input has {} mel bands, model expects {}",
            x.n_mels, cfg.n_mels
        )));
    }
    if x.n_frames == 0 || x.data.len() != x.n_mels * x.n_frames {
        return Err(Error::arg("malformed spectrogram"));
    }
    let t_in = x.n_frames;
    let t_out = (t_in - 1) / 2 + 1;
    if t_out > cfg.max_frames {
        return Err(Error::arg(format!(
            "{t_in} input frames exceed model capacity ({} after stride 2)",
            cfg.max_frames
        )));
    }
    let (f, d) = (cfg.n_mels, cfg.d_model);
    let mut x0 = vec![0.0; t_in * f];
    for m in 0..f {
        for t in 0..t_in {
            x0[t * f + m] = x.data[m * t_in + t];
        }
    }
    let (col1, _) = im2col(&x0, t_in, f, 1);
    let mut h1 = vec![0.0; t_in * d];
    linear(&col1, t_in, &p.conv1.weight.data, Some(&p.conv1.bias.data), 3 * f, d, &mut h1);
    let a1: Vec<f64> = h1.iter().map(|&v| gelu(v)).collect();
    let (col2, _) = im2col(&a1, t_in, d, 2);
    let mut h2 = vec![0.0; t_out * d];
    linear(&col2, t_out, &p.conv2.weight.data, Some(&p.conv2.bias.data), 3 * d, d, &mut h2);
    let mut out: Vec<f64> = h2.iter().map(|&v| gelu(v)).collect();
    for (o, pos) in out.iter_mut().zip(&p.positions.data[..t_out * d]) {
        *o += pos;
    }
    check_finite(&out, "encoder.conv stem")?;
    Ok((
        StemTrace {
            t_in,
            col1,
            h1,
            col2,
            h2,
        },
        out,
        t_out,
    ))
}

fn block_forward(b: &Block, p: &ModelParams, x_in: Vec<f64>, t: usize) -> (BlockTrace, Vec<f64>) {
    let cfg = &p.config;
    let (d, heads, dh, ff) = (cfg.d_model, cfg.n_heads, cfg.d_head(), cfg.d_ffn());
    let scale = 1.0 / (dh as f64).sqrt();

    let mut xn1 = vec![0.0; t * d];
    let n1 = layer_norm(&x_in, t, d, &b.attn_norm.weight.data, &b.attn_norm.bias.data, &mut xn1);
    let mut q = vec![0.0; t * d];
    let mut k = vec![0.0; t * d];
    let mut v = vec![0.0; t * d];
    linear(&xn1, t, &b.q_proj.weight.data, b.q_proj.bias.as_ref().map(|x| &x.data[..]), d, d, &mut q);
    linear(&xn1, t, &b.k_proj.weight.data, b.k_proj.bias.as_ref().map(|x| &x.data[..]), d, d, &mut k);
    linear(&xn1, t, &b.v_proj.weight.data, b.v_proj.bias.as_ref().map(|x| &x.data[..]), d, d, &mut v);

    let mut probs = vec![0.0; heads * t * t];
    let mut attn = vec![0.0; t * d];
    for h in 0..heads {
        let ph = &mut probs[h * t * t..(h + 1) * t * t];
        // S = q_h k_hᵀ
        gemm_strided(t, dh, t, &q[h * dh..], (d, 1), &k[h * dh..], (1, d), ph, (t, 1), false);
        ph.iter_mut().for_each(|s| *s *= scale);
        softmax_rows(ph, t, t);
        gemm_strided(t, t, dh, ph, (t, 1), &v[h * dh..], (d, 1), &mut attn[h * dh..], (d, 1), false);
    }
    let mut x_mid = vec![0.0; t * d];
    linear(&attn, t, &b.out_proj.weight.data, b.out_proj.bias.as_ref().map(|x| &x.data[..]), d, d, &mut x_mid);
    for (o, r) in x_mid.iter_mut().zip(&x_in) {
        *o += r;
    }

    let mut xn2 = vec![0.0; t * d];
    let n2 = layer_norm(&x_mid, t, d, &b.mlp_norm.weight.data, &b.mlp_norm.bias.data, &mut xn2);
    let mut f1 = vec![0.0; t * ff];
    linear(&xn2, t, &b.fc1.weight.data, b.fc1.bias.as_ref().map(|x| &x.data[..]), d, ff, &mut f1);
    let g: Vec<f64> = f1.iter().map(|&v| gelu(v)).collect();
    let mut out = vec![0.0; t * d];
    linear(&g, t, &b.fc2.weight.data, b.fc2.bias.as_ref().map(|x| &x.data[..]), ff, d, &mut out);
    for (o, r) in out.iter_mut().zip(&x_mid) {
        *o += r;
    }
    (
        BlockTrace {
            x_in,
            n1,
            xn1,
            q,
            k,
            v,
            probs,
            attn,
            x_mid,
            n2,
            xn2,
            f1,
            g,
        },
        out,
    )
}

fn post_forward(p: &ModelParams, x_in: Vec<f64>, t: usize) -> PostTrace {
    let d = p.config.d_model;
    let mut frames = vec![0.0; t * d];
    let stats = layer_norm(&x_in, t, d, &p.final_norm.weight.data, &p.final_norm.bias.data, &mut frames);
    PostTrace { x_in, stats, frames }
}

fn mean_rows(x: &[f64], t: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for row in x[..t * d].chunks_exact(d) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let inv = 1.0 / t as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    out
}

pub(crate) fn head_forward(pooled: &[f64], p: &ModelParams) -> HeadTrace {
    let cfg = &p.config;
    let mut hidden = vec![0.0; cfg.proj_hidden];
    linear(
        pooled,
        1,
        &p.dense1.weight.data,
        p.dense1.bias.as_ref().map(|x| &x.data[..]),
        cfg.d_model,
        cfg.proj_hidden,
        &mut hidden,
    );
    let act: Vec<f64> = hidden.iter().map(|&h| if h > 0.0 { h } else { 0.0 }).collect();
    let mut z = vec![0.0; cfg.embed_dim];
    linear(
        &act,
        1,
        &p.dense2.weight.data,
        p.dense2.bias.as_ref().map(|x| &x.data[..]),
        cfg.proj_hidden,
        cfg.embed_dim,
        &mut z,
    );
    HeadTrace {
        pooled: pooled.to_vec(),
        hidden,
        act,
        z,
    }
}

pub(crate) fn encode_trace(x: &LogMelSpectrogram, p: &ModelParams) -> Result<EncoderTrace> {
    let (stem, mut h, t) = stem_forward(x, p)?;
    let mut blocks = Vec::with_capacity(p.blocks.len());
    for (i, b) in p.blocks.iter().enumerate() {
        let (trace, out) = block_forward(b, p, h, t);
        check_finite(&out, &format!("encoder.layers.{i}"))?;
        blocks.push(trace);
        h = out;
    }
    let post = post_forward(p, h, t);
    check_finite(&post.frames, "encoder.layer_norm")?;
    Ok(EncoderTrace {
        t_out: t,
        stem,
        blocks,
        post,
    })
}

/// Full forward pass (encoder, mean pool, head) keeping the trace.
pub fn forward(x: &LogMelSpectrogram, p: &ModelParams) -> Result<ForwardTrace> {
    let enc = encode_trace(x, p)?;
    let pooled = mean_rows(&enc.post.frames, enc.t_out, p.config.d_model);
    let head = head_forward(&pooled, p);
    check_finite(&head.z, "projection")?;
    Ok(ForwardTrace {
        t_out: enc.t_out,
        stem: enc.stem,
        blocks: enc.blocks,
        post: enc.post,
        z: head.z.clone(),
        head,
    })
}

/// Where a partial re-evaluation starts; see [`resume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stage {
    Block(usize),
    FinalNorm,
    Head,
}

impl ForwardTrace {
    /// The activation entering `stage`.
    pub(crate) fn stage_input(&self, stage: Stage) -> &[f64] {
        match stage {
            Stage::Block(i) => &self.blocks[i].x_in,
            Stage::FinalNorm => &self.post.x_in,
            Stage::Head => &self.head.pooled,
        }
    }
}

/// Recomputes the head from a stored stage input. Equal, bit for bit, to
/// the tail of [`forward`].
pub(crate) fn resume(p: &ModelParams, stage: Stage, input: &[f64], t: usize) -> HeadTrace {
    let d = p.config.d_model;
    let pooled = match stage {
        Stage::Head => input.to_vec(),
        Stage::Block(_) | Stage::FinalNorm => {
            let mut h = input.to_vec();
            if let Stage::Block(first) = stage {
                for b in &p.blocks[first..] {
                    h = block_forward(b, p, h, t).1;
                }
            }
            let post = post_forward(p, h, t);
            mean_rows(&post.frames, t, d)
        }
    };
    head_forward(&pooled, p)
}

fn block_backward(b: &Block, gb: &mut Block, p: &ModelParams, tr: &BlockTrace, dout: &[f64], t: usize) -> Vec<f64> {
    let cfg = &p.config;
    let (d, heads, dh, ff) = (cfg.d_model, cfg.n_heads, cfg.d_head(), cfg.d_ffn());
    let scale = 1.0 / (dh as f64).sqrt();

    // MLP branch
    let mut dg = vec![0.0; t * ff];
    linear_backward(
        dout,
        &tr.g,
        t,
        &b.fc2.weight.data,
        ff,
        d,
        &mut gb.fc2.weight.data,
        gb.fc2.bias.as_mut().map(|x| &mut x.data[..]),
        Some(&mut dg),
    );
    for (g, f) in dg.iter_mut().zip(&tr.f1) {
        *g *= gelu_grad(*f);
    }
    let mut dxn2 = vec![0.0; t * d];
    linear_backward(
        &dg,
        &tr.xn2,
        t,
        &b.fc1.weight.data,
        d,
        ff,
        &mut gb.fc1.weight.data,
        gb.fc1.bias.as_mut().map(|x| &mut x.data[..]),
        Some(&mut dxn2),
    );
    let mut dmid = dout.to_vec();
    layer_norm_backward(
        &dxn2,
        &tr.x_mid,
        &tr.n2,
        t,
        d,
        &b.mlp_norm.weight.data,
        &mut gb.mlp_norm.weight.data,
        &mut gb.mlp_norm.bias.data,
        &mut dmid,
    );

    // attention branch
    let mut dattn = vec![0.0; t * d];
    linear_backward(
        &dmid,
        &tr.attn,
        t,
        &b.out_proj.weight.data,
        d,
        d,
        &mut gb.out_proj.weight.data,
        gb.out_proj.bias.as_mut().map(|x| &mut x.data[..]),
        Some(&mut dattn),
    );
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut ds = vec![0.0; t * t];
    for h in 0..heads {
        let ph = &tr.probs[h * t * t..(h + 1) * t * t];
        // dP = dO_h v_hᵀ
        gemm(t, dh, t, &dattn[h * dh..], d, 1, &tr.v[h * dh..], 1, d, false, &mut ds);
        // dv_h = P_hᵀ dO_h
        gemm_strided(t, t, dh, ph, (1, t), &dattn[h * dh..], (d, 1), &mut dv[h * dh..], (d, 1), false);
        for r in 0..t {
            let prow = &ph[r * t..(r + 1) * t];
            let drow = &mut ds[r * t..(r + 1) * t];
            let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
            for (g, pv) in drow.iter_mut().zip(prow) {
                *g = pv * (*g - dot) * scale;
            }
        }
        gemm_strided(t, t, dh, &ds, (t, 1), &tr.k[h * dh..], (d, 1), &mut dq[h * dh..], (d, 1), false);
        gemm_strided(t, t, dh, &ds, (1, t), &tr.q[h * dh..], (d, 1), &mut dk[h * dh..], (d, 1), false);
    }
    let mut dxn1 = vec![0.0; t * d];
    for (grad, lin, gl) in [
        (&dq, &b.q_proj, &mut gb.q_proj),
        (&dk, &b.k_proj, &mut gb.k_proj),
        (&dv, &b.v_proj, &mut gb.v_proj),
    ] {
        linear_backward(
            grad,
            &tr.xn1,
            t,
            &lin.weight.data,
            d,
            d,
            &mut gl.weight.data,
            gl.bias.as_mut().map(|x| &mut x.data[..]),
            Some(&mut dxn1),
        );
    }
    let mut dx = dmid;
    layer_norm_backward(
        &dxn1,
        &tr.x_in,
        &tr.n1,
        t,
        d,
        &b.attn_norm.weight.data,
        &mut gb.attn_norm.weight.data,
        &mut gb.attn_norm.bias.data,
        &mut dx,
    );
    dx
}

/// Accumulates `∂(dz · z)/∂θ` for the trace's input into `grads`.
pub fn backward(trace: &ForwardTrace, p: &ModelParams, dz: &[f64], grads: &mut ModelParams) {
    let cfg = &p.config;
    let (f, d, hdim) = (cfg.n_mels, cfg.d_model, cfg.proj_hidden);
    let t = trace.t_out;
    let head = &trace.head;

    let mut dact = vec![0.0; hdim];
    linear_backward(
        dz,
        &head.act,
        1,
        &p.dense2.weight.data,
        hdim,
        cfg.embed_dim,
        &mut grads.dense2.weight.data,
        grads.dense2.bias.as_mut().map(|x| &mut x.data[..]),
        Some(&mut dact),
    );
    for (g, h) in dact.iter_mut().zip(&head.hidden) {
        if *h <= 0.0 {
            *g = 0.0;
        }
    }
    let mut dpooled = vec![0.0; d];
    linear_backward(
        &dact,
        &head.pooled,
        1,
        &p.dense1.weight.data,
        d,
        hdim,
        &mut grads.dense1.weight.data,
        grads.dense1.bias.as_mut().map(|x| &mut x.data[..]),
        Some(&mut dpooled),
    );

    let inv_t = 1.0 / t as f64;
    let dframes: Vec<f64> = (0..t * d).map(|i| dpooled[i % d] * inv_t).collect();
    let mut dx = vec![0.0; t * d];
    layer_norm_backward(
        &dframes,
        &trace.post.x_in,
        &trace.post.stats,
        t,
        d,
        &p.final_norm.weight.data,
        &mut grads.final_norm.weight.data,
        &mut grads.final_norm.bias.data,
        &mut dx,
    );

    for i in (0..p.blocks.len()).rev() {
        dx = block_backward(&p.blocks[i], &mut grads.blocks[i], p, &trace.blocks[i], &dx, t);
    }

    // stem; positions are constant so dx flows straight into the GELU
    let stem = &trace.stem;
    for (g, h) in dx.iter_mut().zip(&stem.h2) {
        *g *= gelu_grad(*h);
    }
    let mut dcol2 = vec![0.0; t * 3 * d];
    linear_backward(
        &dx,
        &stem.col2,
        t,
        &p.conv2.weight.data,
        3 * d,
        d,
        &mut grads.conv2.weight.data,
        Some(&mut grads.conv2.bias.data),
        Some(&mut dcol2),
    );
    let mut da1 = vec![0.0; stem.t_in * d];
    col2im(&dcol2, stem.t_in, d, 2, &mut da1);
    for (g, h) in da1.iter_mut().zip(&stem.h1) {
        *g *= gelu_grad(*h);
    }
    linear_backward(
        &da1,
        &stem.col1,
        stem.t_in,
        &p.conv1.weight.data,
        3 * f,
        d,
        &mut grads.conv1.weight.data,
        Some(&mut grads.conv1.bias.data),
        None,
    );
}
