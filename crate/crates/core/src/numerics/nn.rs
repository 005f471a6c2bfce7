//! Multi-head self-attention and post-norm Transformer encoder blocks.
//!
//! Parameter names under a block prefix `p`:
//! `p.attn.{wq,bq,wk,bk,wv,bv,wo,bo}`, `p.ln1.{gain,bias}`,
//! `p.ffn.{w1,b1,w2,b2}`, `p.ln2.{gain,bias}`.

use rand::Rng;

use super::matrix::Matrix;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// FFN hidden width multiplier.
pub const FFN_MULT: usize = 4;

pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

pub struct EncoderBlockVars {
    pub attn: AttentionVars,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

impl AttentionVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut p = |s: &str| tape.param(store, &format!("{prefix}.attn.{s}"));
        Ok(Self {
            wq: p("wq")?,
            bq: p("bq")?,
            wk: p("wk")?,
            bk: p("bk")?,
            wv: p("wv")?,
            bv: p("bv")?,
            wo: p("wo")?,
            bo: p("bo")?,
        })
    }
}

impl EncoderBlockVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let attn = AttentionVars::bind(tape, store, prefix)?;
        let mut p = |s: &str| tape.param(store, &format!("{prefix}.{s}"));
        Ok(Self {
            attn,
            ln1_gain: p("ln1.gain")?,
            ln1_bias: p("ln1.bias")?,
            w1: p("ffn.w1")?,
            b1: p("ffn.b1")?,
            w2: p("ffn.w2")?,
            b2: p("ffn.b2")?,
            ln2_gain: p("ln2.gain")?,
            ln2_bias: p("ln2.bias")?,
        })
    }
}

/// Registers a freshly initialised encoder block under `prefix`.
///
/// Weights ~ N(0, 1/fan_in), biases zero, LayerNorm gain one.
pub fn init_encoder_block(
    store: &mut ParamStore,
    prefix: &str,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let hidden = FFN_MULT * dim;
    let std = (1.0 / dim as f64).sqrt();
    for w in ["wq", "wk", "wv", "wo"] {
        store.insert_normal(format!("{prefix}.attn.{w}"), dim, dim, std, rng)?;
    }
    for b in ["bq", "bk", "bv", "bo"] {
        store.insert(format!("{prefix}.attn.{b}"), Matrix::zeros(1, dim))?;
    }
    store.insert_normal(format!("{prefix}.ffn.w1"), dim, hidden, std, rng)?;
    store.insert(format!("{prefix}.ffn.b1"), Matrix::zeros(1, hidden))?;
    store.insert_normal(
        format!("{prefix}.ffn.w2"),
        hidden,
        dim,
        (1.0 / hidden as f64).sqrt(),
        rng,
    )?;
    store.insert(format!("{prefix}.ffn.b2"), Matrix::zeros(1, dim))?;
    for ln in ["ln1", "ln2"] {
        store.insert(format!("{prefix}.{ln}.gain"), Matrix::filled(1, dim, 1.0))?;
        store.insert(format!("{prefix}.{ln}.bias"), Matrix::zeros(1, dim))?;
    }
    Ok(())
}

fn check_heads(dim: usize, heads: usize) -> Result<usize> {
    if heads == 0 || dim % heads != 0 {
        return Err(Error::Config(format!(
            "model width {dim} is not divisible by {heads} heads"
        )));
    }
    Ok(dim / heads)
}

/// Scaled dot-product attention per head, heads concatenated, then the
/// output projection.
pub fn attention(tape: &mut Tape, x: Var, p: &AttentionVars, heads: usize) -> Result<Var> {
    let head_dim = check_heads(x.cols(), heads)?;
    if p.wq.shape() != (x.cols(), x.cols()) {
        return Err(Error::shape(format!(
            "attention weights {:?} for tokens of width {}",
            p.wq.shape(),
            x.cols()
        )));
    }
    let q = tape.matmul(x, p.wq)?;
    let q = tape.add_row(q, p.bq)?;
    let k = tape.matmul(x, p.wk)?;
    let k = tape.add_row(k, p.bk)?;
    let v = tape.matmul(x, p.wv)?;
    let v = tape.add_row(v, p.bv)?;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * head_dim, head_dim)?,
                tape.slice_cols(k, h * head_dim, head_dim)?,
                tape.slice_cols(v, h * head_dim, head_dim)?,
            )
        };
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scores);
        outs.push(tape.matmul(weights, vh)?);
    }
    let joined = if heads == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    let o = tape.matmul(joined, p.wo)?;
    tape.add_row(o, p.bo)
}

/// `y = LN(x + Attn(x))`, `out = LN(y + FFN(y))` with a ReLU FFN.
pub fn encoder_block(tape: &mut Tape, x: Var, p: &EncoderBlockVars, heads: usize) -> Result<Var> {
    let a = attention(tape, x, &p.attn, heads)?;
    let r1 = tape.add(x, a)?;
    let y = tape.layer_norm(r1, p.ln1_gain, p.ln1_bias)?;
    let h = tape.matmul(y, p.w1)?;
    let h = tape.add_row(h, p.b1)?;
    let h = tape.relu(h);
    let f = tape.matmul(h, p.w2)?;
    let f = tape.add_row(f, p.b2)?;
    let r2 = tape.add(y, f)?;
    tape.layer_norm(r2, p.ln2_gain, p.ln2_bias)
}

/// Runs the stack of blocks `prefix.0 .. prefix.{layers-1}`.
pub fn encoder_stack(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    layers: usize,
    x: Var,
    heads: usize,
) -> Result<Var> {
    let mut h = x;
    for l in 0..layers {
        let block = EncoderBlockVars::bind(tape, store, &format!("{prefix}.{l}"))?;
        h = encoder_block(tape, h, &block, heads)?;
    }
    Ok(h)
}

/// Value-level multi-head self-attention with weights read from `store`
/// under `prefix`.
pub fn multi_head_self_attention(
    x: &Matrix,
    store: &ParamStore,
    prefix: &str,
    heads: usize,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let p = AttentionVars::bind(&mut tape, store, prefix)?;
    let out = attention(&mut tape, xv, &p, heads)?;
    Ok(tape.value(out).clone())
}

/// Value-level encoder block with weights read from `store` under `prefix`.
pub fn encoder_block_forward(
    x: &Matrix,
    store: &ParamStore,
    prefix: &str,
    heads: usize,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let p = EncoderBlockVars::bind(&mut tape, store, prefix)?;
    let out = encoder_block(&mut tape, xv, &p, heads)?;
    Ok(tape.value(out).clone())
}
