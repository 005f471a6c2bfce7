//! Frame encoding, prompt assembly and the toy reasoning backbone.
//!
//! The prompt is laid out as
//! `[instruction; query; (visual, SEG) per context frame; visual, TGT; memory]`
//! with context frames oldest first. A bidirectional encoder runs over the
//! whole sequence and the outputs at the anchor positions are read back as
//! the target token `g_t` and the context segmentation tokens.

use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, INSTRUCTION_TOKENS};
use crate::numerics::nn::encoder_stack;
use crate::numerics::{Matrix, ParamStore, Tape, Var};

/// Encoded frame on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FrameVars {
    /// Per-cell features, `HW × d_v`.
    pub grid: Var,
    /// Pooled vector followed by one slot per palette color, `(1+P) × d_v`.
    pub visual: Var,
}

/// Encoded frame as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFeatures {
    pub grid: Matrix,
    pub visual: Matrix,
}

impl SceneFeatures {
    pub fn pooled(&self) -> &[f64] {
        self.visual.row(0)
    }

    pub fn on_tape(&self, tape: &mut Tape) -> FrameVars {
        FrameVars {
            grid: tape.constant(self.grid.clone()),
            visual: tape.constant(self.visual.clone()),
        }
    }

    pub fn from_tape(tape: &Tape, vars: FrameVars) -> Self {
        Self {
            grid: tape.value(vars.grid).clone(),
            visual: tape.value(vars.visual).clone(),
        }
    }
}

/// Raw per-cell channels: one-hot colors `1..=P` (background is all zero)
/// followed by row and column scaled to `[0, 1]`.
pub fn raw_channels(config: &ModelConfig, frame: &Frame) -> Result<Matrix> {
    if (frame.height, frame.width) != (config.height, config.width) {
        return Err(Error::shape(format!(
            "{}x{} frame for a {}x{} model",
            frame.height, frame.width, config.height, config.width
        )));
    }
    let p = config.palette as usize;
    let mut x = Matrix::zeros(frame.height * frame.width, p + 2);
    let scale = |n: usize| if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let (sr, sc) = (scale(frame.height), scale(frame.width));
    for r in 0..frame.height {
        for c in 0..frame.width {
            let i = r * frame.width + c;
            let color = frame.get(r, c) as usize;
            if color > p {
                return Err(Error::shape(format!(
                    "color {color} exceeds the {p}-color palette"
                )));
            }
            if color > 0 {
                x.set(i, color - 1, 1.0);
            }
            x.set(i, p, r as f64 * sr);
            x.set(i, p + 1, c as f64 * sc);
        }
    }
    Ok(x)
}

pub fn encode_frame_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ModelConfig,
    frame: &Frame,
) -> Result<FrameVars> {
    let x = raw_channels(config, frame)?;
    let p = config.palette as usize;
    let channels = x.cols();
    let mut mean = Matrix::zeros(1, channels);
    let mut slot_sum = Matrix::zeros(p, channels);
    let mut counts = vec![0usize; p];
    for i in 0..x.rows() {
        let row = x.row(i);
        mean.row_mut(0).iter_mut().zip(row).for_each(|(m, v)| *m += v);
        if let Some(color) = row[..p].iter().position(|v| *v == 1.0) {
            counts[color] += 1;
            slot_sum.row_mut(color).iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
    }
    let mean = mean.scale(1.0 / x.rows() as f64);
    let mut presence = Matrix::zeros(p, 1);
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            presence.set(c, 0, 1.0);
            for v in slot_sum.row_mut(c) {
                *v /= n as f64;
            }
        }
    }

    let w = tape.param(store, "reasoner.vision.w")?;
    let b = tape.param(store, "reasoner.vision.b")?;
    let xv = tape.constant(x);
    let grid = tape.matmul(xv, w)?;
    let grid = tape.add_row(grid, b)?;
    let mean = tape.constant(mean);
    let pooled = tape.matmul(mean, w)?;
    let pooled = tape.add_row(pooled, b)?;
    let slot_x = tape.constant(slot_sum);
    let presence = tape.constant(presence);
    let slots = tape.matmul(slot_x, w)?;
    let slot_bias = tape.matmul(presence, b)?;
    let slots = tape.add(slots, slot_bias)?;
    let visual = tape.concat_rows(&[pooled, slots])?;
    Ok(FrameVars { grid, visual })
}

/// Value form of [`encode_frame_on_tape`].
pub fn encode_frame(store: &ParamStore, config: &ModelConfig, frame: &Frame) -> Result<SceneFeatures> {
    let mut tape = Tape::new();
    let vars = encode_frame_on_tape(&mut tape, store, config, frame)?;
    Ok(SceneFeatures::from_tape(&tape, vars))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Signed hashed bag of lowercase words, L2-normalised (zero for no words).
pub fn embed_query_text(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for word in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        let h = fnv1a(word.to_lowercase().as_bytes());
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let n = crate::numerics::norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Projects a hashed query embedding into the prompt, `1 × d`.
pub fn query_token(tape: &mut Tape, store: &ParamStore, embedding: &[f64]) -> Result<Var> {
    let e = tape.constant(Matrix::row_vector(embedding));
    let w = tape.param(store, "reasoner.query.w")?;
    let b = tape.param(store, "reasoner.query.b")?;
    let q = tape.matmul(e, w)?;
    tape.add_row(q, b)
}

/// Slot layout of one assembled prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptAssembly {
    pub query_pos: usize,
    /// `(start, len)` of each frame's visual slots, oldest first; the last
    /// entry is the current frame.
    pub visual: Vec<(usize, usize)>,
    /// SEG anchor positions, oldest context frame first.
    pub seg: Vec<usize>,
    pub tgt: usize,
    pub memory_start: usize,
    pub len: usize,
}

impl PromptAssembly {
    pub fn new(window_len: usize, config: &ModelConfig) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::invalid("prompt needs at least the current frame"));
        }
        if window_len > config.context + 1 {
            return Err(Error::invalid(format!(
                "window of {window_len} frames exceeds {} context frames plus the current one",
                config.context
            )));
        }
        let v = config.visual_tokens();
        let mut pos = INSTRUCTION_TOKENS;
        let query_pos = pos;
        pos += 1;
        let mut visual = Vec::with_capacity(window_len);
        let mut seg = Vec::with_capacity(window_len - 1);
        let mut tgt = 0;
        for i in 0..window_len {
            visual.push((pos, v));
            pos += v;
            if i + 1 < window_len {
                seg.push(pos);
            } else {
                tgt = pos;
            }
            pos += 1;
        }
        Ok(Self {
            query_pos,
            visual,
            seg,
            tgt,
            memory_start: pos,
            len: pos + config.memory_tokens,
        })
    }

    pub fn anchors(&self) -> Vec<usize> {
        let mut a = self.seg.clone();
        a.push(self.tgt);
        a
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReasonerVars {
    /// `g_t`, `1 × d`.
    pub target: Var,
    /// Context segmentation tokens, most recent first; `None` at cold start.
    pub context: Option<Var>,
}

/// Builds the prompt sequence for `window` (oldest first, current last).
pub fn assemble_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ModelConfig,
    query: Var,
    window: &[FrameVars],
    memory: Var,
) -> Result<(PromptAssembly, Var)> {
    let layout = PromptAssembly::new(window.len(), config)?;
    if memory.shape() != (config.memory_tokens, config.dim) {
        return Err(Error::shape(format!(
            "memory of shape {:?}, expected {}x{}",
            memory.shape(),
            config.memory_tokens,
            config.dim
        )));
    }
    let inst = tape.param(store, "reasoner.inst")?;
    let vis_w = tape.param(store, "reasoner.vis.w")?;
    let vis_b = tape.param(store, "reasoner.vis.b")?;
    let frame_pos = tape.param(store, "reasoner.frame_pos")?;
    let tgt = tape.param(store, "reasoner.tgt")?;
    let seg = tape.param(store, "reasoner.seg")?;
    let mem_pos = tape.param(store, "reasoner.mem_pos")?;

    let mut parts = vec![inst, query];
    for (i, f) in window.iter().enumerate() {
        let offset = window.len() - 1 - i;
        let fp = tape.slice_rows(frame_pos, offset, 1)?;
        let v = tape.matmul(f.visual, vis_w)?;
        let v = tape.add_row(v, vis_b)?;
        parts.push(tape.add_row(v, fp)?);
        let anchor = if offset == 0 { tgt } else { seg };
        parts.push(tape.add(anchor, fp)?);
    }
    parts.push(tape.add(memory, mem_pos)?);
    let seq = tape.concat_rows(&parts)?;
    debug_assert_eq!(seq.rows(), layout.len);
    Ok((layout, seq))
}

/// Runs the encoder over the assembled prompt and reads the anchors.
pub fn reason_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ModelConfig,
    query: Var,
    window: &[FrameVars],
    memory: Var,
) -> Result<ReasonerVars> {
    let (layout, seq) = assemble_on_tape(tape, store, config, query, window, memory)?;
    let out = encoder_stack(
        tape,
        store,
        "reasoner.enc",
        config.reasoner_layers,
        seq,
        config.reasoner_heads,
    )?;
    let target = tape.slice_rows(out, layout.tgt, 1)?;
    let context = if layout.seg.is_empty() {
        None
    } else {
        let rows = layout
            .seg
            .iter()
            .rev()
            .map(|&p| tape.slice_rows(out, p, 1))
            .collect::<Result<Vec<_>>>()?;
        Some(tape.concat_rows(&rows)?)
    };
    Ok(ReasonerVars { target, context })
}
