//! Self-checks shared by the command line and the acceptance suite: an
//! end-to-end gradient check on a toy batch and the temporal retention probe.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::alignment::sample_loss;
use crate::autodiff::{grad_check, GradCheckReport, Graph, ParamStore, Var};
use crate::encoder::{feature_constants, EncoderConfig, FeatureMap, SkeletonSequence};
use crate::error::Result;
use crate::model::{ModelConfig, Neuron, Sample};
use crate::nn::Activation;
use crate::semantics::{synth_bank, SemanticBank};
use crate::temporal::MemoryMode;
use crate::tensor::Tensor;
use crate::types::ClassId;

/// Small model, two skeleton samples, four classes of which three are seen.
#[derive(Debug, Clone)]
pub struct ToyBatch {
    pub model: Neuron,
    pub params: ParamStore<f64>,
    pub samples: Vec<Sample>,
    pub bank: SemanticBank,
    pub seen: Vec<ClassId>,
}

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            frames: 6,
            t_hat: 3,
            joints: 3,
            persons: 1,
            channels: 4,
            hidden: 5,
            activation: Activation::Tanh,
        },
        spatial_attributes: 5,
        temporal_attributes: 4,
        embed_dim: 3,
        refine_hidden: 3,
        head_hidden: 4,
        ..ModelConfig::default()
    }
}

pub fn toy_batch(seed: u64) -> Result<ToyBatch> {
    let config = toy_config();
    let model = Neuron::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = model.init_params::<f64>(&mut rng)?;
    let enc = &config.encoder;
    let shape = [3, enc.frames, enc.joints, enc.persons];
    let samples = (0..2u32)
        .map(|i| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x = SkeletonSequence::new(Tensor::new(shape.to_vec(), data)?, ClassId(i))?;
            Ok(Sample::Skeleton(x))
        })
        .collect::<Result<Vec<_>>>()?;
    let bank = synth_bank(4, 2, config.embed_dim, seed)?;
    Ok(ToyBatch {
        model,
        params,
        samples,
        bank,
        seen: (0..3).map(ClassId).collect(),
    })
}

/// Mean total loss over the batch.
pub fn batch_loss(g: &mut Graph<'_, f64>, batch: &ToyBatch) -> Result<Var> {
    let mut total = None;
    for s in &batch.samples {
        let l = sample_loss(g, &batch.model, s, &batch.bank, &batch.seen)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let total = total.expect("non-empty batch");
    Ok(g.scale(total, 1.0 / batch.samples.len() as f64))
}

pub const GRADCHECK_STEP: f64 = 1e-4;

/// Compares every parameter gradient of the toy batch loss against
/// central finite differences.
pub fn full_gradcheck(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let batch = toy_batch(seed)?;
    grad_check(&batch.params, eps, |g| batch_loss(g, &batch))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionOutcome {
    /// Cosine between the final and the first-phase temporal prototype.
    pub gated: f64,
    pub ungated: f64,
}

impl RetentionOutcome {
    pub fn gated_retains_more(&self) -> bool {
        self.gated > self.ungated
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(f64::MIN_POSITIVE)
}

/// Writes a constant marker frame into the first temporal segment and
/// unrelated random frames into the rest, then measures how much of the
/// first-phase prototype survives to the last phase with and without the
/// gated memory.
pub fn retention_probe(config: &ModelConfig, seed: u64) -> Result<RetentionOutcome> {
    let model = Neuron::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = model.init_params::<f64>(&mut rng)?;
    let enc = &config.encoder;
    let (t_hat, v_hat, c) = (enc.t_hat, enc.v_hat(), enc.channels);
    let seg = t_hat / config.phases;
    let marker: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut data = Vec::with_capacity(t_hat * v_hat * c);
    for t in 0..t_hat {
        let frame: Vec<f64> = if t < seg {
            marker.clone()
        } else {
            (0..c).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        for _ in 0..v_hat {
            data.extend_from_slice(&frame);
        }
    }
    let map = FeatureMap::from_f(Tensor::new(vec![t_hat, v_hat, c], data)?)?;
    let run = |mode: MemoryMode| -> Result<f64> {
        let mut g = Graph::with_store(&params);
        let fv = feature_constants(&mut g, &map)?;
        let out = model.forward_features(&mut g, fv, mode)?;
        let (first, last) = (out.temporal[0], out.temporal[out.temporal.len() - 1]);
        Ok(cosine(g.value(first).data(), g.value(last).data()))
    };
    Ok(RetentionOutcome {
        gated: run(MemoryMode::Gated)?,
        ungated: run(MemoryMode::Ungated)?,
    })
}
