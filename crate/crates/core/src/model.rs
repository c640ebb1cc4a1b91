//! The full network: encoder, both prototype streams, projection heads and
//! the semantic projection, with their parameter naming.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::encoder::{encode, feature_constants, EncoderConfig, FeatureMap, FeatureVars, SkeletonSequence};
use crate::error::{Error, Result};
use crate::nn::{uniform, Activation, Mlp, Refiner};
use crate::semantics::SemanticBank;
use crate::spatial::{run_spatial, PhaseSchedule};
use crate::temporal::{run_temporal, GateSet, MemoryMode};
use crate::types::{ClassId, Real, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Spatial attribute count `N_s`.
    pub spatial_attributes: usize,
    /// Temporal attribute count `N_t`.
    pub temporal_attributes: usize,
    pub phases: usize,
    pub alphas: PhaseSchedule,
    /// Semantic embedding dimension `d`; must match the bank.
    pub embed_dim: usize,
    pub refine_hidden: usize,
    pub head_hidden: usize,
    pub activation: Activation,
    pub share_refiners: bool,
    pub share_gates: bool,
    pub share_heads: bool,
    /// Divides every alignment logit.
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            spatial_attributes: 80,
            temporal_attributes: 80,
            phases: 3,
            alphas: PhaseSchedule::default_for(3),
            embed_dim: 32,
            refine_hidden: 16,
            head_hidden: 48,
            activation: Activation::Tanh,
            share_refiners: false,
            share_gates: false,
            share_heads: false,
            temperature: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate(self.phases)?;
        if self.alphas.len() != self.phases {
            return Err(Error::Config(format!(
                "{} alphas for {} phases",
                self.alphas.len(),
                self.phases
            )));
        }
        for (name, v) in [
            ("spatial_attributes", self.spatial_attributes),
            ("temporal_attributes", self.temporal_attributes),
            ("embed_dim", self.embed_dim),
            ("refine_hidden", self.refine_hidden),
            ("head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }

    /// Checks that the bank's phase count and dimension match this model.
    pub fn check_bank(&self, bank: &SemanticBank) -> Result<()> {
        if bank.phases() != self.phases {
            return Err(Error::Config(format!(
                "bank has {} phases, model expects {}",
                bank.phases(),
                self.phases
            )));
        }
        if bank.dim() != self.embed_dim {
            return Err(Error::Config(format!(
                "bank dimension {} differs from model embed_dim {}",
                bank.dim(),
                self.embed_dim
            )));
        }
        Ok(())
    }
}

/// A training or evaluation input: raw skeleton or precomputed features.
#[derive(Debug, Clone)]
pub enum Sample {
    Skeleton(SkeletonSequence),
    Features { map: FeatureMap<f32>, label: ClassId },
}

impl Sample {
    pub fn label(&self) -> ClassId {
        match self {
            Sample::Skeleton(s) => s.label,
            Sample::Features { label, .. } => *label,
        }
    }
}

/// Per-phase prototypes of both streams for one sample.
#[derive(Debug, Clone)]
pub struct StreamOutputs {
    pub features: FeatureVars,
    pub spatial: Vec<Var>,
    pub temporal: Vec<Var>,
}

impl StreamOutputs {
    pub fn stream(&self, stream: Stream) -> &[Var] {
        match stream {
            Stream::Spatial => &self.spatial,
            Stream::Temporal => &self.temporal,
        }
    }
}

pub const SPATIAL_P0: &str = "spatial.p0";
pub const TEMPORAL_P0: &str = "temporal.p0";

#[derive(Debug, Clone, PartialEq)]
pub struct Neuron {
    config: ModelConfig,
    refiners: Vec<Refiner>,
    gates: Vec<GateSet>,
    spatial_heads: Vec<Mlp>,
    temporal_heads: Vec<Mlp>,
    semantic: Mlp,
}

impl Neuron {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let act = config.activation;
        let count = |shared: bool| if shared { 1 } else { config.phases };
        let refiners = (0..count(config.share_refiners))
            .map(|e| Refiner::Mlp(Mlp::new(format!("spatial.refine.{e}"), act)))
            .collect();
        let gates = (0..count(config.share_gates))
            .map(|e| GateSet {
                recall: Refiner::Mlp(Mlp::new(format!("temporal.recall.{e}"), act)),
                remember: Refiner::Mlp(Mlp::new(format!("temporal.remember.{e}"), act)),
                refine: Refiner::Mlp(Mlp::new(format!("temporal.refine.{e}"), act)),
            })
            .collect();
        let heads = |tag: &str| -> Vec<Mlp> {
            (0..count(config.share_heads))
                .map(|e| Mlp::new(format!("head.{tag}.{e}"), act))
                .collect()
        };
        let spatial_heads = heads("s");
        let temporal_heads = heads("t");
        Ok(Self {
            refiners,
            gates,
            spatial_heads,
            temporal_heads,
            // A bias after ψ shifts every class logit equally and never
            // receives gradient.
            semantic: Mlp::new("semantic.proj", act).without_output_bias(),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn phases(&self) -> usize {
        self.config.phases
    }

    /// Fresh parameters for every block.
    pub fn init_params<T: Real>(&self, rng: &mut impl Rng) -> Result<ParamStore<T>> {
        let cfg = &self.config;
        let c = cfg.encoder.channels;
        let mut store = ParamStore::new();
        cfg.encoder.init_params(&mut store, rng)?;
        let bound = 1.0 / (c as f64).sqrt();
        store.insert(SPATIAL_P0, uniform(&[c, cfg.spatial_attributes], bound, rng))?;
        store.insert(TEMPORAL_P0, uniform(&[c, cfg.temporal_attributes], bound, rng))?;
        let refine_dims = (c, cfg.refine_hidden, c);
        for r in &self.refiners {
            if let Refiner::Mlp(m) = r {
                m.init(&mut store, refine_dims, rng)?;
            }
        }
        for gs in &self.gates {
            for r in [&gs.recall, &gs.remember, &gs.refine] {
                if let Refiner::Mlp(m) = r {
                    m.init(&mut store, refine_dims, rng)?;
                }
            }
        }
        let head_dims = (c, cfg.head_hidden, cfg.embed_dim);
        for h in self.spatial_heads.iter().chain(&self.temporal_heads) {
            h.init(&mut store, head_dims, rng)?;
        }
        self.semantic
            .init(&mut store, (cfg.embed_dim, cfg.embed_dim, cfg.embed_dim), rng)?;
        Ok(store)
    }

    fn refiner(&self, phase: usize) -> &Refiner {
        &self.refiners[phase.min(self.refiners.len() - 1)]
    }

    fn gate_set(&self, phase: usize) -> &GateSet {
        &self.gates[phase.min(self.gates.len() - 1)]
    }

    /// Projection head `ϕ_s` or `ϕ_t` used at `phase`.
    pub fn head(&self, stream: Stream, phase: usize) -> &Mlp {
        let heads = match stream {
            Stream::Spatial => &self.spatial_heads,
            Stream::Temporal => &self.temporal_heads,
        };
        &heads[phase.min(heads.len() - 1)]
    }

    /// Semantic projection `ψ`, shared by streams and phases.
    pub fn semantic_projection(&self) -> &Mlp {
        &self.semantic
    }

    /// Encodes the sample (or wraps its precomputed features) and runs
    /// both streams.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, sample: &Sample) -> Result<StreamOutputs> {
        let features = match sample {
            Sample::Skeleton(x) => encode(g, x, &self.config.encoder)?,
            Sample::Features { map, .. } => feature_constants(g, &map.cast())?,
        };
        self.forward_features(g, features, MemoryMode::Gated)
    }

    pub fn forward_features<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        features: FeatureVars,
        mode: MemoryMode,
    ) -> Result<StreamOutputs> {
        let phases = self.config.phases;
        let p_s = g.param(SPATIAL_P0)?;
        let p_t = g.param(TEMPORAL_P0)?;
        let refiners: Vec<&Refiner> = (0..phases).map(|e| self.refiner(e)).collect();
        let spatial = run_spatial(g, features.f_s, p_s, &self.config.alphas, &refiners)?;
        let gates: Vec<&GateSet> = (0..phases).map(|e| self.gate_set(e)).collect();
        let temporal = run_temporal(g, features.f_t, p_t, &gates, mode)?;
        Ok(StreamOutputs {
            features,
            spatial,
            temporal,
        })
    }
}
