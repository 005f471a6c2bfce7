//! AdamW and unrolled training of the streaming pipeline.
//!
//! Each iteration samples one (video, query) pair. Videos longer than the
//! unroll cap start at a random step: the frames before it are streamed
//! without gradient recording and the resulting state enters the tape as
//! constants. The loss of the unrolled window is the sum of the per-step
//! composite losses.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::aggregate_memory_on_tape;
use crate::dataset::{collect_predictions, AnnotatedSample, QueryAnnotation};
use crate::error::{Error, Result};
use crate::mask_head::composite_loss_on_tape;
use crate::metrics::{score_corpus, MetricReport};
use crate::model::{AblationArm, ArmRegistry, Model};
use crate::numerics::{ParamStore, Tape, Var};
use crate::reasoner::{encode_frame_on_tape, query_token, FrameVars};
use crate::reservoir::{DenseToSparse, ReservoirState};
use crate::stream::{forward_step, predict_corpus, CausalSegmenter, SegmenterOptions, SegmenterRegistry, StreamEngine, PRESENT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Longest stretch of steps backpropagated through.
    pub unroll: usize,
    /// Global gradient-norm cap; `0` disables clipping.
    pub clip_norm: f64,
    /// Iterations of linear learning-rate warmup.
    pub warmup: usize,
    pub arm: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            iterations: 200,
            seed: 7,
            unroll: 24,
            clip_norm: 1.0,
            warmup: 0,
            arm: ArmRegistry::FULL.to_string(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.iterations == 0 || self.unroll == 0 {
            return Err(Error::Config(
                "learning rate, iterations and unroll must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("epsilon must be positive and weight decay non-negative".into()));
        }
        ArmRegistry::builtin().get(&self.arm).map(|_| ())
    }

    /// Learning rate of iteration `step` (from 1) under linear warmup.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            self.learning_rate * step as f64 / self.warmup as f64
        } else {
            self.learning_rate
        }
    }
}

/// One decoupled-weight-decay Adam update at `cfg.learning_rate`; `step`
/// counts from 1.
pub fn adamw_step(store: &mut ParamStore, cfg: &TrainConfig, step: usize) -> Result<()> {
    adamw_update(store, cfg, cfg.learning_rate, step)
}

fn adamw_update(store: &mut ParamStore, cfg: &TrainConfig, lr: f64, step: usize) -> Result<()> {
    if step == 0 {
        return Err(Error::invalid("optimizer steps count from 1"));
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for (name, p) in store.iter_mut() {
        let g = p
            .grad
            .as_ref()
            .ok_or_else(|| Error::State(format!("parameter {name:?} has no gradient")))?;
        let value = p.value.as_mut_slice();
        let m = p.first_moment.as_mut_slice();
        let v = p.second_moment.as_mut_slice();
        for (i, &gi) in g.as_slice().iter().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.epsilon);
            value[i] -= lr * (update + cfg.weight_decay * value[i]);
        }
    }
    Ok(())
}

/// Tape nodes of one unrolled window.
pub(crate) struct Unrolled {
    /// Per-step composite losses, in step order.
    pub losses: Vec<Var>,
    /// Fused prompt of each step.
    pub fused: Vec<Var>,
}

/// Streams `frames[..start-1]` without recording, then records steps
/// `start..start+len-1`.
pub(crate) fn unroll(
    tape: &mut Tape,
    model: &Arc<Model>,
    arm: &Arc<dyn AblationArm>,
    frames: &[crate::dataset::Frame],
    query: &QueryAnnotation,
    start: usize,
    len: usize,
) -> Result<Unrolled> {
    let cfg = &model.config;
    let p = &model.params;
    let engine = StreamEngine::new(model.clone(), arm.clone())?;
    let mut state = engine.init_stream(&query.query)?;
    for f in &frames[..start - 1] {
        engine.step(&mut state, f)?;
    }

    let q = query_token(tape, p, state.query_embedding())?;
    let mut window: VecDeque<FrameVars> = state
        .context_features(cfg.context)
        .map(|f| f.on_tape(tape))
        .collect();
    let retention = arm.retention();
    let write_policy = retention.clone().unwrap_or_else(|| Arc::new(DenseToSparse));
    let mut reservoir: ReservoirState<Var> = state
        .reservoir()
        .map_tokens(|v| tape.constant(crate::numerics::Matrix::row_vector(v)));
    // memory that depends on parameters is rebuilt on the tape
    let mut memory = if retention.is_none() || start == 1 {
        aggregate_memory_on_tape(tape, p, cfg, None)?
    } else {
        tape.constant(state.memory().clone())
    };

    let mut out = Unrolled {
        losses: Vec::with_capacity(len),
        fused: Vec::with_capacity(len),
    };
    for t in start..start + len {
        let current = encode_frame_on_tape(tape, p, cfg, &frames[t - 1])?;
        window.push_back(current);
        let vars = forward_step(tape, model, arm.uses_fusion(), q, window.make_contiguous(), memory)?;
        while window.len() > cfg.context {
            window.pop_front();
        }
        let gt = &query.masks[t - 1];
        let target = if gt.is_empty() { 1 - PRESENT } else { PRESENT };
        out.losses
            .push(composite_loss_on_tape(tape, vars.answer, target, vars.mask_logits, gt)?);
        out.fused.push(vars.fused);
        reservoir.write(vars.fused, write_policy.as_ref())?;
        if let Some(policy) = &retention {
            let tokens = reservoir.read_tokens(policy.as_ref())?;
            let history = tape.concat_rows(&tokens)?;
            memory = aggregate_memory_on_tape(tape, p, cfg, Some(history))?;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean per-step loss of each iteration.
    pub losses: Vec<f64>,
}

/// Trains `model` in place on `corpus` under `cfg.arm`.
pub fn train(model: Model, corpus: &[AnnotatedSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, corpus, cfg, |_, _| {})
}

/// As [`train`], calling `progress(iteration, loss)` after each update.
pub fn train_with(
    model: Model,
    corpus: &[AnnotatedSample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pairs: Vec<(usize, usize)> = corpus
        .iter()
        .enumerate()
        .flat_map(|(v, s)| (0..s.queries.len()).map(move |q| (v, q)))
        .filter(|&(v, _)| !corpus[v].frames.is_empty())
        .collect();
    if pairs.is_empty() {
        return Err(Error::invalid("training needs at least one annotated query"));
    }
    let arm = ArmRegistry::builtin().get(&cfg.arm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Arc::new(model);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let (v, q) = pairs[rng.random_range(0..pairs.len())];
        let sample = &corpus[v];
        let total = sample.frames.len();
        let len = total.min(cfg.unroll);
        let start = rng.random_range(1..=total - len + 1);

        let mut tape = Tape::new();
        let u = unroll(&mut tape, &model, &arm, &sample.frames, &sample.queries[q], start, len)?;
        let loss = u
            .losses
            .iter()
            .skip(1)
            .try_fold(u.losses[0], |acc, l| tape.add(acc, *l))?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Evaluation(format!("non-finite loss at iteration {it}")));
        }
        let grads = tape.backward(loss)?;
        let m = Arc::make_mut(&mut model);
        m.params.zero_grad();
        grads.accumulate_into(&tape, &mut m.params)?;
        let norm = m.params.grad_norm();
        if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
            m.params.scale_grads(cfg.clip_norm / norm);
        }
        adamw_update(&mut m.params, cfg, cfg.learning_rate_at(it), it)?;
        let mean = value / len as f64;
        losses.push(mean);
        progress(it, mean);
    }
    let model = Arc::try_unwrap(model).unwrap_or_else(|m| (*m).clone());
    Ok(TrainOutcome { model, losses })
}

pub fn write_loss_curve(path: &Path, losses: &[f64]) -> Result<()> {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{},{l:.9}\n", i + 1));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Runs `seg` over every query of `corpus` and scores the predictions.
pub fn evaluate_segmenter(seg: &dyn CausalSegmenter, corpus: &[AnnotatedSample]) -> Result<MetricReport> {
    let records = predict_corpus(seg, corpus)?;
    let preds = collect_predictions(&records, corpus)?;
    score_corpus(corpus, &preds, None)
}

/// Scores a model under the named ablation arm.
pub fn evaluate_checkpoint(model: Arc<Model>, arm: &str, corpus: &[AnnotatedSample]) -> Result<MetricReport> {
    let seg = SegmenterRegistry::builtin().build(
        "model",
        &SegmenterOptions {
            model: Some(model),
            arm: arm.to_string(),
            ..SegmenterOptions::default()
        },
    )?;
    evaluate_segmenter(seg.as_ref(), corpus)
}

/// Held-out score of one trained arm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRun {
    pub arm: String,
    pub seed: u64,
    pub final_loss: f64,
    pub score: MetricReport,
}

/// Trains a fresh model per (seed, arm) and scores it on `held_out`. The
/// seed drives both initialisation and sampling; every arm of a seed starts
/// from the same parameters.
pub fn run_ablation(
    model: &crate::model::ModelConfig,
    train_cfg: &TrainConfig,
    arms: &[&str],
    seeds: &[u64],
    corpus: &[AnnotatedSample],
    held_out: &[AnnotatedSample],
    mut progress: impl FnMut(&AblationRun),
) -> Result<Vec<AblationRun>> {
    let mut runs = Vec::with_capacity(arms.len() * seeds.len());
    for &seed in seeds {
        for &arm in arms {
            let cfg = TrainConfig {
                arm: arm.to_string(),
                seed,
                ..train_cfg.clone()
            };
            let outcome = train(Model::init(model.clone(), seed)?, corpus, &cfg)?;
            let tail = (outcome.losses.len() / 10).max(1);
            let final_loss = outcome.losses[outcome.losses.len() - tail..].iter().sum::<f64>() / tail as f64;
            let score = evaluate_checkpoint(Arc::new(outcome.model), arm, held_out)?;
            let run = AblationRun {
                arm: arm.to_string(),
                seed,
                final_loss,
                score,
            };
            progress(&run);
            runs.push(run);
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn one_param(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Matrix::filled(1, 1, x)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = one_param(1.5);
        s.zero_grad();
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        adamw_step(&mut s, &cfg, 1).unwrap();
        assert_eq!(s.value("x").unwrap().get(0, 0), 1.5);
    }

    #[test]
    fn decay_alone_shrinks_geometrically() {
        let mut s = one_param(2.0);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..TrainConfig::default()
        };
        for step in 1..=3 {
            s.zero_grad();
            adamw_step(&mut s, &cfg, step).unwrap();
        }
        let expect = 2.0 * (1.0f64 - 0.05).powi(3);
        assert!((s.value("x").unwrap().get(0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        let mut s = one_param(1.0);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut prev = 1.0;
        for step in 1..=100 {
            let x = s.value("x").unwrap().get(0, 0);
            s.zero_grad();
            s.accumulate_grad("x", &Matrix::filled(1, 1, 2.0 * x)).unwrap();
            adamw_step(&mut s, &cfg, step).unwrap();
            let x = s.value("x").unwrap().get(0, 0);
            assert!(x * x < prev);
            prev = x * x;
        }
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut s = one_param(1.0);
        assert!(matches!(adamw_step(&mut s, &TrainConfig::default(), 1), Err(Error::State(_))));
    }

    use crate::dataset::{generate_synthetic, GeneratorConfig};
    use crate::model::ModelConfig;

    fn tiny_model() -> Model {
        let cfg = ModelConfig {
            dim: 8,
            vis_dim: 4,
            context: 2,
            memory_tokens: 2,
            n_max: 3,
            reasoner_heads: 2,
            agg_heads: 2,
            height: 16,
            width: 16,
            ..ModelConfig::default()
        };
        Model::init(cfg, 3).unwrap()
    }

    fn tiny_corpus() -> Vec<AnnotatedSample> {
        let cfg = GeneratorConfig {
            queries: 6,
            height: 16,
            width: 16,
            min_len: 8,
            max_len: 10,
            ..GeneratorConfig::default()
        };
        generate_synthetic(&cfg, 2).unwrap()
    }

    /// A query whose referent is present on at least one frame.
    fn nonempty_query(corpus: &[AnnotatedSample]) -> (&AnnotatedSample, &QueryAnnotation) {
        corpus
            .iter()
            .flat_map(|s| s.queries.iter().map(move |q| (s, q)))
            .find(|(_, q)| q.masks.iter().any(|m| !m.is_empty()))
            .unwrap()
    }

    #[test]
    fn gradient_reaches_every_tensor_under_every_arm() {
        let corpus = tiny_corpus();
        let (sample, query) = nonempty_query(&corpus);
        let model = Arc::new(tiny_model());
        for name in ArmRegistry::ladder() {
            let arm = ArmRegistry::builtin().get(name).unwrap();
            let mut tape = Tape::new();
            let u = unroll(&mut tape, &model, &arm, &sample.frames, query, 1, sample.len()).unwrap();
            let loss = u.losses.iter().skip(1).fold(u.losses[0], |a, l| tape.add(a, *l).unwrap());
            let mut store = model.params.clone();
            store.zero_grad();
            tape.backward(loss).unwrap().accumulate_into(&tape, &mut store).unwrap();
            for (pname, p) in store.iter() {
                let g = p.grad.as_ref().unwrap();
                assert!(g.as_slice().iter().any(|x| *x != 0.0), "{name}: {pname} has no gradient");
            }
        }
    }

    #[test]
    fn gradients_only_flow_backward_in_time() {
        let corpus = tiny_corpus();
        let (sample, query) = nonempty_query(&corpus);
        let model = Arc::new(tiny_model());
        let arm = ArmRegistry::builtin().get(ArmRegistry::FULL).unwrap();
        let mut tape = Tape::new();
        let len = sample.len();
        let u = unroll(&mut tape, &model, &arm, &sample.frames, query, 1, len).unwrap();
        for k in 0..len {
            let g = tape.backward(u.losses[k]).unwrap();
            for j in k + 1..len {
                let later = g.get(u.fused[j]);
                assert!(later.is_none_or(|m| m.as_slice().iter().all(|x| *x == 0.0)), "loss {k} reached step {j}");
            }
            assert!(g.get(u.fused[k]).is_some_and(|m| m.as_slice().iter().any(|x| *x != 0.0)));
        }
        // dropping the losses before step k leaves step k's gradient unchanged
        let k = len / 2;
        let total = u.losses.iter().skip(1).fold(u.losses[0], |a, l| tape.add(a, *l).unwrap());
        let tail = u.losses[k + 1..].iter().fold(u.losses[k], |a, l| tape.add(a, *l).unwrap());
        let a = tape.backward(total).unwrap().get(u.fused[k]).unwrap().clone();
        let b = tape.backward(tail).unwrap().get(u.fused[k]).unwrap().clone();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let corpus = tiny_corpus();
        let cfg = TrainConfig {
            iterations: 60,
            learning_rate: 3e-3,
            unroll: 6,
            ..TrainConfig::default()
        };
        let a = train(tiny_model(), &corpus, &cfg).unwrap();
        let b = train(tiny_model(), &corpus, &cfg).unwrap();
        assert!(a.model.params.values_equal(&b.model.params));
        assert_eq!(a.losses, b.losses);
        assert!(!a.model.params.values_equal(&tiny_model().params));
        let n = cfg.iterations / 10;
        let head: f64 = a.losses[..n].iter().sum();
        let tail: f64 = a.losses[a.losses.len() - n..].iter().sum();
        assert!(tail < head, "first {head}, last {tail}");
    }

    #[test]
    fn warmup_ramps_linearly() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            warmup: 4,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (1..=5).map(|s| cfg.learning_rate_at(s)).collect();
        assert_eq!(lrs, vec![0.25, 0.5, 0.75, 1.0, 1.0]);
    }
}
