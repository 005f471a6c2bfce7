//! Model dimensions, parameter initialisation and the ablation arms.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::DEFAULT_LAMBDA;
use crate::numerics::nn::init_encoder_block;
use crate::numerics::{Matrix, ParamStore};
use crate::reservoir::{RetentionPolicy, RetentionRegistry, DEFAULT_N_MAX};

/// Fixed instruction slots at the head of every prompt.
pub const INSTRUCTION_TOKENS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Reasoner token width `d`.
    pub dim: usize,
    /// Visual feature width `d_v`.
    pub vis_dim: usize,
    /// Context frames `K`.
    pub context: usize,
    /// Memory tokens `L`.
    pub memory_tokens: usize,
    pub n_max: usize,
    pub reasoner_heads: usize,
    pub reasoner_layers: usize,
    pub agg_heads: usize,
    pub agg_layers: usize,
    pub lambda: f64,
    /// Number of object colors the frame encoder distinguishes.
    pub palette: u8,
    pub height: usize,
    pub width: usize,
    /// Drop reservoir entries the retention policy no longer selects.
    pub compact_reservoir: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            vis_dim: 32,
            context: 4,
            memory_tokens: 32,
            n_max: DEFAULT_N_MAX,
            reasoner_heads: 4,
            reasoner_layers: 2,
            agg_heads: 8,
            agg_layers: 2,
            lambda: DEFAULT_LAMBDA,
            palette: 6,
            height: 32,
            width: 32,
            compact_reservoir: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.vis_dim == 0 || self.memory_tokens == 0 {
            return fail("dimensions and memory size must be positive".into());
        }
        if self.dim % 2 != 0 {
            return fail(format!("dim {} must be even for sinusoidal positions", self.dim));
        }
        for (heads, what) in [(self.reasoner_heads, "reasoner"), (self.agg_heads, "aggregator")] {
            if heads == 0 || self.dim % heads != 0 {
                return fail(format!("{what} heads {heads} must divide dim {}", self.dim));
            }
        }
        if self.n_max < 2 {
            return fail(format!("n_max {} must be at least 2", self.n_max));
        }
        if self.palette == 0 || self.palette > crate::dataset::MAX_COLOR {
            return fail(format!("palette {} out of range", self.palette));
        }
        if self.height == 0 || self.width == 0 {
            return fail("frame geometry must be positive".into());
        }
        if !self.lambda.is_finite() {
            return fail("lambda must be finite".into());
        }
        Ok(())
    }

    /// Raw per-cell channels: one-hot colors plus two coordinates.
    pub fn raw_channels(&self) -> usize {
        self.palette as usize + 2
    }

    /// Visual tokens per frame: pooled vector plus one slot per color.
    pub fn visual_tokens(&self) -> usize {
        1 + self.palette as usize
    }
}

/// A trained or freshly initialised model: dimensions plus parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, dv, c) = (config.dim, config.vis_dim, config.raw_channels());
        let mut p = ParamStore::new();
        let normal = |p: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, r: usize, k: usize, std: f64| {
            p.insert_normal(name, r, k, std, rng)
        };
        let fan = |n: usize| (1.0 / n as f64).sqrt();

        normal(&mut p, &mut rng, "reasoner.vision.w", c, dv, fan(c))?;
        p.insert("reasoner.vision.b", Matrix::zeros(1, dv))?;
        normal(&mut p, &mut rng, "reasoner.inst", INSTRUCTION_TOKENS, d, 1.0)?;
        normal(&mut p, &mut rng, "reasoner.query.w", d, d, fan(d))?;
        p.insert("reasoner.query.b", Matrix::zeros(1, d))?;
        normal(&mut p, &mut rng, "reasoner.vis.w", dv, d, fan(dv))?;
        p.insert("reasoner.vis.b", Matrix::zeros(1, d))?;
        normal(&mut p, &mut rng, "reasoner.frame_pos", config.context + 1, d, 1.0)?;
        normal(&mut p, &mut rng, "reasoner.tgt", 1, d, 1.0)?;
        normal(&mut p, &mut rng, "reasoner.seg", 1, d, 1.0)?;
        normal(&mut p, &mut rng, "reasoner.mem_pos", config.memory_tokens, d, 1.0)?;
        for l in 0..config.reasoner_layers {
            init_encoder_block(&mut p, &format!("reasoner.enc.{l}"), d, &mut rng)?;
        }

        normal(&mut p, &mut rng, "agg.queries", config.memory_tokens, d, 0.02)?;
        for l in 0..config.agg_layers {
            init_encoder_block(&mut p, &format!("agg.enc.{l}"), d, &mut rng)?;
        }

        normal(&mut p, &mut rng, "head.answer.w", d, 2, fan(d))?;
        p.insert("head.answer.b", Matrix::zeros(1, 2))?;
        normal(&mut p, &mut rng, "head.proj.w1", d, d, fan(d))?;
        p.insert("head.proj.b1", Matrix::zeros(1, d))?;
        normal(&mut p, &mut rng, "head.proj.w2", d, dv, fan(d))?;
        p.insert("head.proj.b2", Matrix::zeros(1, dv))?;
        p.insert("head.mask.bias", Matrix::zeros(1, 1))?;
        Ok(Self { config, params: p })
    }

    /// Wraps loaded parameters, checking every expected tensor is present
    /// with the right shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::init(config.clone(), 0)?;
        for (name, p) in reference.params.iter() {
            let got = params
                .value(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name:?}")))?;
            if got.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "tensor {name:?} has shape {:?}, config expects {:?}",
                    got.shape(),
                    p.value.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, config expects {}",
                params.len(),
                reference.params.len()
            )));
        }
        Ok(Self { config, params })
    }
}

/// One configuration of the ablation study.
pub trait AblationArm: Send + Sync {
    fn name(&self) -> &'static str;
    /// Whether context segmentation tokens are fused into the prompt.
    fn uses_fusion(&self) -> bool;
    /// Retention policy for the token reservoir; `None` keeps the memory
    /// fixed at its initial value.
    fn retention(&self) -> Option<Arc<dyn RetentionPolicy>>;
}

struct Arm {
    name: &'static str,
    fusion: bool,
    retention: Option<Arc<dyn RetentionPolicy>>,
}

impl AblationArm for Arm {
    fn name(&self) -> &'static str {
        self.name
    }

    fn uses_fusion(&self) -> bool {
        self.fusion
    }

    fn retention(&self) -> Option<Arc<dyn RetentionPolicy>> {
        self.retention.clone()
    }
}

pub struct ArmRegistry {
    arms: BTreeMap<&'static str, Arc<dyn AblationArm>>,
}

impl ArmRegistry {
    /// Name of the full model.
    pub const FULL: &'static str = "cusp_tr_d2s";

    /// `baseline`, `cusp`, `cusp_tr_us` and `cusp_tr_d2s`.
    pub fn builtin() -> Self {
        let policies = RetentionRegistry::builtin();
        let policy = |n: &str| Some(policies.get(n).expect("builtin retention policy"));
        let mut reg = Self {
            arms: BTreeMap::new(),
        };
        for arm in [
            Arm { name: "baseline", fusion: false, retention: None },
            Arm { name: "cusp", fusion: true, retention: None },
            Arm { name: "cusp_tr_us", fusion: true, retention: policy("uniform") },
            Arm { name: Self::FULL, fusion: true, retention: policy("dense_to_sparse") },
        ] {
            reg.register(Arc::new(arm));
        }
        reg
    }

    pub fn register(&mut self, arm: Arc<dyn AblationArm>) {
        self.arms.insert(arm.name(), arm);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn AblationArm>> {
        self.arms.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown ablation arm {name:?} (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.arms.keys().copied()
    }

    /// Arms in ablation order, weakest first.
    pub fn ladder() -> [&'static str; 4] {
        ["baseline", "cusp", "cusp_tr_us", Self::FULL]
    }
}
