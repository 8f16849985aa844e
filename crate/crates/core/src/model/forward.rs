//! Forward computation of the fusion model on a [`Tape`].
//!
//! Every function accepts either unbatched `[seq, feature]` values or
//! batched `[batch, seq, feature]` values; the layout carries through.
//!
//! Data flow: per-modality alignment, then cross attention (or additive
//! fusion when disabled), then the self-attention stack (or identity), then
//! mean pooling and the feed-forward sigmoid head.

use super::config::{InputModality, ModelConfig};
use super::params::{
    AlignParams, BoundParams, CrossHeadParams, DenseParams, McamParams, ModelParams, MsaBlockParams,
    NormParams, SmsamParams,
};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, LAYER_NORM_EPS};

fn norm(tape: &mut Tape, bound: &BoundParams, p: NormParams, x: Var) -> Result<Var> {
    tape.layer_norm(x, bound.var(p.gain), bound.var(p.bias), LAYER_NORM_EPS)
}

/// Layer norm over the input width, projection to the aligned width, then
/// resampling of the sequence axis to the common length.
pub fn align(tape: &mut Tape, bound: &BoundParams, p: &AlignParams, input: Var) -> Result<Var> {
    let normed = norm(tape, bound, p.norm, input)?;
    let projected = tape.matmul(normed, bound.var(p.projection))?;
    tape.matmul(bound.var(p.resample), projected)
}

/// `softmax(q kᵀ / sqrt(d_key)) v`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var, d_key: usize) -> Result<Var> {
    let kt = tape.transpose_last_two(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.mul_scalar(scores, 1.0 / (d_key as f64).sqrt());
    let weights = tape.softmax_rows(scaled);
    tape.matmul(weights, v)
}

/// One cross-attention head. The visual output uses textual queries over
/// visual keys and values; the textual output uses visual queries over
/// textual keys and values.
pub fn cross_attention_head(
    tape: &mut Tape,
    bound: &BoundParams,
    head: &CrossHeadParams,
    f_va: Var,
    f_ta: Var,
    d_key: usize,
) -> Result<(Var, Var)> {
    let q_v = tape.matmul(f_va, bound.var(head.w_vq))?;
    let k_v = tape.matmul(f_va, bound.var(head.w_vk))?;
    let v_v = tape.matmul(f_va, bound.var(head.w_vv))?;
    let q_t = tape.matmul(f_ta, bound.var(head.w_tq))?;
    let k_t = tape.matmul(f_ta, bound.var(head.w_tk))?;
    let v_t = tape.matmul(f_ta, bound.var(head.w_tv))?;
    let z_v = scaled_dot_attention(tape, q_t, k_v, v_v, d_key)?;
    let z_t = scaled_dot_attention(tape, q_v, k_t, v_t, d_key)?;
    Ok((z_v, z_t))
}

/// Multi-head cross attention with residual layer-norm fusion.
pub fn mcam(
    tape: &mut Tape,
    bound: &BoundParams,
    p: &McamParams,
    f_va: Var,
    f_ta: Var,
    d_key: usize,
) -> Result<Var> {
    let mut zv = Vec::with_capacity(p.heads.len());
    let mut zt = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let (v, t) = cross_attention_head(tape, bound, head, f_va, f_ta, d_key)?;
        zv.push(v);
        zt.push(t);
    }
    let zv_cc = tape.concat_last_axis(&zv)?;
    let zt_cc = tape.concat_last_axis(&zt)?;
    let res_v = tape.add(zv_cc, f_va)?;
    let res_t = tape.add(zt_cc, f_ta)?;
    let fused_v = norm(tape, bound, p.norm_visual, res_v)?;
    let fused_t = norm(tape, bound, p.norm_textual, res_t)?;
    let sum = tape.add(fused_v, fused_t)?;
    norm(tape, bound, p.norm_fused, sum)
}

/// Additive fallback used when cross attention is disabled: `LN(f_va + f_ta)`.
pub fn simple_fusion(tape: &mut Tape, bound: &BoundParams, p: NormParams, f_va: Var, f_ta: Var) -> Result<Var> {
    let sum = tape.add(f_va, f_ta)?;
    norm(tape, bound, p, sum)
}

/// Pre-norm multi-head self attention with a residual: `MSA(LN(z)) + z`.
/// Heads are concatenated without an output projection.
pub fn msa_block(tape: &mut Tape, bound: &BoundParams, block: &MsaBlockParams, z: Var, d_key: usize) -> Result<Var> {
    let n = norm(tape, bound, block.norm, z)?;
    let mut heads = Vec::with_capacity(block.heads.len());
    for h in &block.heads {
        let q = tape.matmul(n, bound.var(h.w_q))?;
        let k = tape.matmul(n, bound.var(h.w_k))?;
        let v = tape.matmul(n, bound.var(h.w_v))?;
        heads.push(scaled_dot_attention(tape, q, k, v, d_key)?);
    }
    let cat = tape.concat_last_axis(&heads)?;
    tape.add(cat, z)
}

/// Sequential self-attention blocks followed by a final layer norm.
pub fn smsam(tape: &mut Tape, bound: &BoundParams, p: &SmsamParams, f_vt: Var, d_key: usize) -> Result<Var> {
    let mut z = f_vt;
    for block in &p.blocks {
        z = msa_block(tape, bound, block, z, d_key)?;
    }
    norm(tape, bound, p.final_norm, z)
}

/// Mean-pools the sequence axis, then ReLU hidden layers and a sigmoid
/// output layer. `[S, D] -> [M]` or `[B, S, D] -> [B, M]`.
pub fn ffn_head(tape: &mut Tape, bound: &BoundParams, layers: &[DenseParams], y: Var) -> Result<Var> {
    let unbatched = tape.shape(y).len() == 2;
    let mut h = tape.mean_seq(y)?;
    if unbatched {
        let d = tape.shape(h)[0];
        h = tape.reshape(h, vec![1, d])?;
    }
    let (output, hidden) = layers
        .split_last()
        .ok_or_else(|| Error::Contract("feed-forward head needs an output layer".into()))?;
    for layer in hidden {
        let a = tape.matmul(h, bound.var(layer.weight))?;
        let a = tape.add_bias(a, bound.var(layer.bias))?;
        h = tape.relu(a);
    }
    let logits = tape.matmul(h, bound.var(output.weight))?;
    let logits = tape.add_bias(logits, bound.var(output.bias))?;
    let mut scores = tape.sigmoid(logits);
    if unbatched {
        let m = tape.shape(scores)[1];
        scores = tape.reshape(scores, vec![m])?;
    }
    Ok(scores)
}

fn check_input(config: &ModelConfig, visual: &[usize], textual: &[usize]) -> Result<()> {
    let tail = |s: &[usize]| s[s.len().saturating_sub(2)..].to_vec();
    let want_v = [config.visual_tokens, config.d_visual_in];
    let want_t = [config.textual_tokens, config.d_textual_in];
    if visual.len() < 2 || tail(visual) != want_v {
        return Err(Error::shape("forward (visual input)", visual, &want_v));
    }
    if textual.len() < 2 || tail(textual) != want_t {
        return Err(Error::shape("forward (textual input)", textual, &want_t));
    }
    if visual.len() != textual.len() || (visual.len() == 3 && visual[0] != textual[0]) {
        return Err(Error::shape("forward (batch)", visual, textual));
    }
    Ok(())
}

/// Full pipeline on tape-recorded inputs; returns genre confidences.
pub fn forward(tape: &mut Tape, params: &ModelParams, bound: &BoundParams, visual: Var, textual: Var) -> Result<Var> {
    let config = params.config();
    check_input(config, tape.shape(visual), tape.shape(textual))?;
    let layout = params.layout();

    let zeros_like = |tape: &mut Tape, reference: Var| {
        let t = Tensor::zeros(tape.shape(reference));
        tape.constant(t)
    };
    let (f_va, f_ta) = match config.input_modality {
        InputModality::Both => (
            align(tape, bound, &layout.visual, visual)?,
            align(tape, bound, &layout.textual, textual)?,
        ),
        InputModality::VisualOnly => {
            let v = align(tape, bound, &layout.visual, visual)?;
            (v, zeros_like(tape, v))
        }
        InputModality::TextualOnly => {
            let t = align(tape, bound, &layout.textual, textual)?;
            (zeros_like(tape, t), t)
        }
    };

    let f_vt = match (&layout.mcam, layout.simple_fusion) {
        (Some(p), _) => mcam(tape, bound, p, f_va, f_ta, config.d_key)?,
        (None, Some(n)) => simple_fusion(tape, bound, n, f_va, f_ta)?,
        (None, None) => unreachable!("layout always has one fusion path"),
    };
    let y = match &layout.smsam {
        Some(p) => smsam(tape, bound, p, f_vt, config.d_key)?,
        None => f_vt,
    };
    ffn_head(tape, bound, &layout.ffn, y)
}

/// Inference on stacked inputs `[B, tokens, width]`; returns `[B, M]` scores.
pub fn predict(params: &ModelParams, visual: &Tensor, textual: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let v = tape.constant(visual.clone());
    let t = tape.constant(textual.clone());
    let out = forward(&mut tape, params, &bound, v, t)?;
    Ok(tape.value(out).clone())
}
