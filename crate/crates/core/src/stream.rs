//! The causal per-frame loop and its audit.
//!
//! Each step encodes the incoming frame, assembles the prompt from the
//! sliding window and the current memory, reasons, fuses, decodes the mask,
//! writes the fused token to the reservoir and recomputes the memory for
//! the next step.
//!
//! Segmenters receive frames through a [`FrameFeed`], which records every
//! access. The audit replays each prefix of a video and requires bitwise
//! agreement with the full run.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::aggregator::{aggregate_memory, init_memory};
use crate::dataset::{encode_rle, AnnotatedSample, BinaryMask, Frame, PredictionRecord, QueryAnnotation, QuerySpec};
use crate::error::{Error, Result};
use crate::fusion::fuse_prompt_on_tape;
use crate::mask_head::{answer_logits, decode_mask, project_prompt, threshold};
use crate::model::{AblationArm, ArmRegistry, Model};
use crate::numerics::{Matrix, Tape, Var};
use crate::reasoner::{embed_query_text, encode_frame_on_tape, query_token, reason_on_tape, FrameVars, SceneFeatures};
use crate::reservoir::{DenseToSparse, ReservoirState, RetentionPolicy};

/// Answer class index meaning "a target is present in this frame".
pub const PRESENT: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub mask: BinaryMask,
    /// Scores for (absent, present).
    pub answer: Vec<f64>,
}

impl StepOutput {
    /// Bitwise equality, including the sign of zero and NaN payloads.
    pub fn identical(&self, other: &StepOutput) -> bool {
        self.mask == other.mask
            && self.answer.len() == other.answer.len()
            && self
                .answer
                .iter()
                .zip(&other.answer)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct StepVars {
    pub fused: Var,
    pub answer: Var,
    pub mask_logits: Var,
}

/// One step of the pipeline on a tape. `window` is oldest first and ends
/// with the current frame.
pub(crate) fn forward_step(
    tape: &mut Tape,
    model: &Model,
    fusion: bool,
    query: Var,
    window: &[FrameVars],
    memory: Var,
) -> Result<StepVars> {
    let current = *window.last().ok_or_else(|| Error::invalid("empty window"))?;
    let r = reason_on_tape(tape, &model.params, &model.config, query, window, memory)?;
    let fused = match (fusion, r.context) {
        (true, Some(ctx)) => fuse_prompt_on_tape(tape, r.target, ctx, model.config.lambda)?,
        _ => r.target,
    };
    let z = project_prompt(tape, &model.params, fused)?;
    let mask_logits = decode_mask(tape, &model.params, current.grid, z)?;
    let answer = answer_logits(tape, &model.params, fused)?;
    Ok(StepVars {
        fused,
        answer,
        mask_logits,
    })
}

/// Per-stream state. After step `t` the window holds frames `t−K..t`.
#[derive(Clone, Debug)]
pub struct StreamState {
    t: usize,
    window: VecDeque<(usize, SceneFeatures)>,
    reservoir: ReservoirState,
    memory: Matrix,
    access_log: usize,
    query: Vec<f64>,
}

impl StreamState {
    pub fn step_index(&self) -> usize {
        self.t
    }

    pub fn window_frames(&self) -> Vec<usize> {
        self.window.iter().map(|(t, _)| *t).collect()
    }

    pub fn reservoir(&self) -> &ReservoirState {
        &self.reservoir
    }

    pub fn memory(&self) -> &Matrix {
        &self.memory
    }

    /// Highest frame index handed to the engine so far.
    pub fn access_log(&self) -> usize {
        self.access_log
    }

    pub(crate) fn context_features(&self, k: usize) -> impl Iterator<Item = &SceneFeatures> {
        let skip = self.window.len().saturating_sub(k);
        self.window.iter().skip(skip).map(|(_, f)| f)
    }

    pub(crate) fn query_embedding(&self) -> &[f64] {
        &self.query
    }
}

pub struct StreamEngine {
    model: Arc<Model>,
    arm: Arc<dyn AblationArm>,
    write_policy: Arc<dyn RetentionPolicy>,
    init_memory: Matrix,
}

impl StreamEngine {
    pub fn new(model: Arc<Model>, arm: Arc<dyn AblationArm>) -> Result<Self> {
        let init_memory = init_memory(&model.params, &model.config)?;
        let write_policy = arm.retention().unwrap_or_else(|| Arc::new(DenseToSparse));
        Ok(Self {
            model,
            arm,
            write_policy,
            init_memory,
        })
    }

    pub fn with_arm_name(model: Arc<Model>, arm: &str) -> Result<Self> {
        Self::new(model, ArmRegistry::builtin().get(arm)?)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn arm(&self) -> &dyn AblationArm {
        self.arm.as_ref()
    }

    pub fn init_stream(&self, query: &QuerySpec) -> Result<StreamState> {
        let cfg = &self.model.config;
        Ok(StreamState {
            t: 0,
            window: VecDeque::with_capacity(cfg.context + 1),
            reservoir: ReservoirState::new(cfg.n_max)?.compacted(cfg.compact_reservoir),
            memory: self.init_memory.clone(),
            access_log: 0,
            query: embed_query_text(&query.text, cfg.dim),
        })
    }

    /// Processes the next frame and returns its prediction.
    pub fn step(&self, state: &mut StreamState, frame: &Frame) -> Result<StepOutput> {
        let cfg = &self.model.config;
        let t = state.t + 1;
        let mut tape = Tape::new();
        let current = encode_frame_on_tape(&mut tape, &self.model.params, cfg, frame)?;
        let mut window: Vec<FrameVars> = state
            .context_features(cfg.context)
            .map(|f| f.on_tape(&mut tape))
            .collect();
        window.push(current);
        let query = query_token(&mut tape, &self.model.params, &state.query)?;
        let memory = tape.constant(state.memory.clone());
        let vars = forward_step(&mut tape, &self.model, self.arm.uses_fusion(), query, &window, memory)?;

        let output = StepOutput {
            mask: threshold(tape.value(vars.mask_logits).as_slice(), cfg.height, cfg.width)?,
            answer: tape.value(vars.answer).as_slice().to_vec(),
        };
        state.window.push_back((t, SceneFeatures::from_tape(&tape, current)));
        while state.window.len() > cfg.context + 1 {
            state.window.pop_front();
        }
        state
            .reservoir
            .write(tape.value(vars.fused).as_slice().to_vec(), self.write_policy.as_ref())?;
        if let Some(policy) = self.arm.retention() {
            let history = state.reservoir.read_history(policy.as_ref())?;
            state.memory = aggregate_memory(&self.model.params, cfg, &history)?;
        }
        state.t = t;
        state.access_log = state.access_log.max(t);
        Ok(output)
    }

    pub fn run_stream(&self, frames: &[Frame], query: &QuerySpec) -> Result<Vec<StepOutput>> {
        if frames.is_empty() {
            return Err(Error::invalid("cannot stream an empty video"));
        }
        let mut state = self.init_stream(query)?;
        frames.iter().map(|f| self.step(&mut state, f)).collect()
    }
}

/// Hands frames to a segmenter in order and records what it touched.
pub struct FrameFeed<'a> {
    frames: &'a [Frame],
    current: usize,
    max_access: usize,
    violation: Option<(usize, usize)>,
}

impl<'a> FrameFeed<'a> {
    pub fn new(frames: &'a [Frame]) -> Self {
        Self {
            frames,
            current: 0,
            max_access: 0,
            violation: None,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Moves to the next step and returns its frame.
    pub fn advance(&mut self) -> Option<&'a Frame> {
        let f = self.frames.get(self.current)?;
        self.current += 1;
        self.max_access = self.max_access.max(self.current);
        Some(f)
    }

    /// Reads frame `index` (1-based). Reads beyond the current step are
    /// recorded as violations even when the frame exists.
    pub fn peek(&mut self, index: usize) -> Option<&'a Frame> {
        if index > self.current && self.violation.is_none() {
            self.violation = Some((self.current, index));
        }
        let f = self.frames.get(index.checked_sub(1)?)?;
        self.max_access = self.max_access.max(index);
        Some(f)
    }

    pub fn step(&self) -> usize {
        self.current
    }

    pub fn max_access(&self) -> usize {
        self.max_access
    }

    /// First `(step, frame)` read ahead of the current step.
    pub fn violation(&self) -> Option<(usize, usize)> {
        self.violation
    }
}

/// Anything that produces one prediction per frame from a feed.
pub trait CausalSegmenter {
    fn name(&self) -> &str;
    fn segment(&self, feed: &mut FrameFeed<'_>, query: &QueryAnnotation) -> Result<Vec<StepOutput>>;
}

struct ModelSegmenter {
    engine: StreamEngine,
}

impl CausalSegmenter for ModelSegmenter {
    fn name(&self) -> &str {
        "model"
    }

    fn segment(&self, feed: &mut FrameFeed<'_>, query: &QueryAnnotation) -> Result<Vec<StepOutput>> {
        let mut state = self.engine.init_stream(&query.query)?;
        let mut out = Vec::with_capacity(feed.len());
        while let Some(frame) = feed.advance() {
            out.push(self.engine.step(&mut state, frame)?);
        }
        Ok(out)
    }
}

/// Test-only mutant: from step `from` on it looks one frame ahead whenever
/// that frame exists.
struct LeakFuture {
    engine: StreamEngine,
    from: usize,
}

impl CausalSegmenter for LeakFuture {
    fn name(&self) -> &str {
        "leak-future"
    }

    fn segment(&self, feed: &mut FrameFeed<'_>, query: &QueryAnnotation) -> Result<Vec<StepOutput>> {
        let mut state = self.engine.init_stream(&query.query)?;
        let mut out = Vec::with_capacity(feed.len());
        while let Some(frame) = feed.advance() {
            let t = feed.step();
            let seen = if t >= self.from {
                feed.peek(t + 1).unwrap_or(frame)
            } else {
                frame
            };
            out.push(self.engine.step(&mut state, seen)?);
        }
        Ok(out)
    }
}

/// Emits the annotated mask of each frame as it arrives.
struct Oracle;

impl CausalSegmenter for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn segment(&self, feed: &mut FrameFeed<'_>, query: &QueryAnnotation) -> Result<Vec<StepOutput>> {
        let mut out = Vec::with_capacity(feed.len());
        while feed.advance().is_some() {
            let mask = query
                .masks
                .get(feed.step() - 1)
                .ok_or_else(|| Error::Coverage(format!("{} lacks frame {}", query.query.query_id, feed.step())))?
                .clone();
            let present = !mask.is_empty();
            let answer = if present { vec![0.0, 1.0] } else { vec![1.0, 0.0] };
            out.push(StepOutput { mask, answer });
        }
        Ok(out)
    }
}

/// Inputs available to segmenter factories.
#[derive(Clone)]
pub struct SegmenterOptions {
    pub model: Option<Arc<Model>>,
    pub arm: String,
    /// First step at which the leak-future mutant looks ahead.
    pub leak_from: usize,
}

impl Default for SegmenterOptions {
    fn default() -> Self {
        Self {
            model: None,
            arm: ArmRegistry::FULL.to_string(),
            leak_from: 1,
        }
    }
}

pub type SegmenterFactory = fn(&SegmenterOptions) -> Result<Box<dyn CausalSegmenter>>;

pub struct SegmenterRegistry {
    factories: BTreeMap<&'static str, SegmenterFactory>,
}

fn engine_from(opts: &SegmenterOptions) -> Result<StreamEngine> {
    let model = opts
        .model
        .clone()
        .ok_or_else(|| Error::Config("this segmenter needs model parameters".into()))?;
    StreamEngine::with_arm_name(model, &opts.arm)
}

impl SegmenterRegistry {
    /// `model`, `oracle` and the `leak-future` mutant.
    pub fn builtin() -> Self {
        let mut reg = Self {
            factories: BTreeMap::new(),
        };
        reg.register("model", |o| Ok(Box::new(ModelSegmenter { engine: engine_from(o)? })));
        reg.register("oracle", |_| Ok(Box::new(Oracle)));
        reg.register("leak-future", |o| {
            Ok(Box::new(LeakFuture {
                engine: engine_from(o)?,
                from: o.leak_from.max(1),
            }))
        });
        reg
    }

    pub fn register(&mut self, name: &'static str, factory: SegmenterFactory) {
        self.factories.insert(name, factory);
    }

    pub fn build(&self, name: &str, opts: &SegmenterOptions) -> Result<Box<dyn CausalSegmenter>> {
        let f = self.factories.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown segmenter {name:?} (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        f(opts)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }
}

/// Runs a segmenter over a full video, checking it produced one output per
/// frame and never read ahead.
pub fn segment_video(
    seg: &dyn CausalSegmenter,
    frames: &[Frame],
    query: &QueryAnnotation,
) -> Result<(Vec<StepOutput>, Option<(usize, usize)>)> {
    if frames.is_empty() {
        return Err(Error::invalid("cannot stream an empty video"));
    }
    let mut feed = FrameFeed::new(frames);
    let out = seg.segment(&mut feed, query)?;
    if out.len() != frames.len() {
        return Err(Error::State(format!(
            "{} produced {} outputs for {} frames",
            seg.name(),
            out.len(),
            frames.len()
        )));
    }
    Ok((out, feed.violation()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditReport {
    pub video_id: String,
    pub query_id: String,
    pub steps: usize,
    /// Earliest step whose output differs between a prefix run and the
    /// full run.
    pub first_divergence: Option<usize>,
    /// First `(step, frame)` read ahead of the current step.
    pub read_ahead: Option<(usize, usize)>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.first_divergence.is_none() && self.read_ahead.is_none()
    }
}

/// Replays every prefix `1..t` and compares its outputs with the first `t`
/// outputs of the full run, bitwise.
pub fn causality_audit(
    seg: &dyn CausalSegmenter,
    sample: &AnnotatedSample,
    query: &QueryAnnotation,
) -> Result<AuditReport> {
    let frames = &sample.frames;
    let (full, mut read_ahead) = segment_video(seg, frames, query)?;
    let mut first_divergence: Option<usize> = None;
    for t in 1..=frames.len() {
        let (prefix, ra) = segment_video(seg, &frames[..t], query)?;
        read_ahead = read_ahead.or(ra);
        if let Some(i) = prefix.iter().zip(&full).position(|(a, b)| !a.identical(b)) {
            let step = i + 1;
            first_divergence = Some(first_divergence.map_or(step, |d| d.min(step)));
        }
    }
    Ok(AuditReport {
        video_id: sample.video_id.clone(),
        query_id: query.query.query_id.clone(),
        steps: frames.len(),
        first_divergence,
        read_ahead,
    })
}

/// Prediction records for every (query, frame) of the corpus.
pub fn predict_corpus(seg: &dyn CausalSegmenter, corpus: &[AnnotatedSample]) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::new();
    for sample in corpus {
        for q in &sample.queries {
            let (out, _) = segment_video(seg, &sample.frames, q)?;
            for (i, o) in out.into_iter().enumerate() {
                records.push(PredictionRecord {
                    video_id: sample.video_id.clone(),
                    query_id: q.query.query_id.clone(),
                    frame: i + 1,
                    mask: Some(encode_rle(&o.mask)),
                });
            }
        }
    }
    Ok(records)
}
