//! Phase-wise skeleton/semantic alignment losses and the SGD training loop.

use std::collections::HashMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::model::{Neuron, Sample, StreamOutputs};
use crate::semantics::SemanticBank;
use crate::types::{ClassId, Real, Stream};

/// `X = mean of P over attributes`, returned as a `[1, C]` row.
pub fn pool_prototype<T: Real>(g: &mut Graph<'_, T>, p: Var) -> Result<Var> {
    let c = g.shape(p)[0];
    let x = g.mean_pool(p, 1)?;
    g.reshape(x, &[1, c])
}

/// Projected class embeddings `ψ(Ẑ_k)` for a fixed candidate list, one
/// `[K, d]` matrix per (stream, phase).
#[derive(Debug, Clone)]
pub struct SemanticTargets {
    classes: Vec<ClassId>,
    index: HashMap<ClassId, usize>,
    spatial: Vec<Var>,
    temporal: Vec<Var>,
}

impl SemanticTargets {
    pub fn build<T: Real>(
        g: &mut Graph<'_, T>,
        model: &Neuron,
        bank: &SemanticBank,
        classes: &[ClassId],
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Contract("empty candidate class list".into()));
        }
        model.config().check_bank(bank)?;
        let psi = model.semantic_projection();
        let mut per_stream = |stream| -> Result<Vec<Var>> {
            (0..bank.phases())
                .map(|e| {
                    let z = g.constant(bank.pooled_matrix(classes, e, stream)?);
                    psi.forward(g, z)
                })
                .collect()
        };
        let spatial = per_stream(Stream::Spatial)?;
        let temporal = per_stream(Stream::Temporal)?;
        let index = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Ok(Self {
            classes: classes.to_vec(),
            index,
            spatial,
            temporal,
        })
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn position(&self, class: ClassId) -> Option<usize> {
        self.index.get(&class).copied()
    }

    pub fn matrix(&self, stream: Stream, phase: usize) -> Var {
        match stream {
            Stream::Spatial => self.spatial[phase],
            Stream::Temporal => self.temporal[phase],
        }
    }
}

/// Raw affinities `ϕ(X) · ψ(Ẑ_k)ᵀ` over the candidate classes, shape `[1, K]`.
pub fn class_affinities<T: Real>(
    g: &mut Graph<'_, T>,
    model: &Neuron,
    prototype: Var,
    targets: &SemanticTargets,
    stream: Stream,
    phase: usize,
) -> Result<Var> {
    let x = pool_prototype(g, prototype)?;
    let emb = model.head(stream, phase).forward(g, x)?;
    let zt = g.transpose(targets.matrix(stream, phase))?;
    g.matmul(emb, zt)
}

/// Affinities divided by the configured temperature.
pub fn stream_logits<T: Real>(
    g: &mut Graph<'_, T>,
    model: &Neuron,
    prototype: Var,
    targets: &SemanticTargets,
    stream: Stream,
    phase: usize,
) -> Result<Var> {
    let logits = class_affinities(g, model, prototype, targets, stream, phase)?;
    let t = model.config().temperature;
    Ok(if t == 1.0 {
        logits
    } else {
        g.scale(logits, T::from_f64(1.0 / t))
    })
}

/// Cross-entropy of the true class against all seen classes for one phase
/// of one stream.
pub fn phase_loss<T: Real>(
    g: &mut Graph<'_, T>,
    model: &Neuron,
    prototype: Var,
    targets: &SemanticTargets,
    label: ClassId,
    stream: Stream,
    phase: usize,
) -> Result<Var> {
    let target = targets
        .position(label)
        .ok_or_else(|| Error::Contract(format!("class {label} is not a training class")))?;
    let logits = stream_logits(g, model, prototype, targets, stream, phase)?;
    g.cross_entropy(logits, target)
}

/// Sum of the phase losses of the selected streams.
pub fn total_loss<T: Real>(
    g: &mut Graph<'_, T>,
    model: &Neuron,
    outputs: &StreamOutputs,
    targets: &SemanticTargets,
    label: ClassId,
    streams: &[Stream],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &stream in streams {
        let protos = outputs.stream(stream);
        if protos.len() != model.phases() {
            return Err(Error::Contract(format!(
                "{} {stream} phase outputs, expected {}",
                protos.len(),
                model.phases()
            )));
        }
        for (e, &p) in protos.iter().enumerate() {
            let l = phase_loss(g, model, p, targets, label, stream, e)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
    }
    total.ok_or_else(|| Error::Contract("no stream selected for the loss".into()))
}

/// Forward pass plus total loss for one sample on a fresh graph.
pub fn sample_loss<T: Real>(
    g: &mut Graph<'_, T>,
    model: &Neuron,
    sample: &Sample,
    bank: &SemanticBank,
    seen: &[ClassId],
) -> Result<Var> {
    let targets = SemanticTargets::build(g, model, bank, seen)?;
    let outputs = model.forward(g, sample)?;
    total_loss(g, model, &outputs, &targets, sample.label(), &Stream::BOTH)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epochs (zero-based) at which the learning rate is multiplied by
    /// `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            lr_milestones: vec![10, 20],
            lr_decay: 0.1,
            weight_decay: 5e-4,
            batch_size: 64,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be nonnegative", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay {} invalid", self.weight_decay)));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::Config(format!("lr decay {} invalid", self.lr_decay)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.lr_decay.powi(drops as i32)
    }
}

/// `θ ← θ·(1 − lr·wd) − lr·g` for every parameter.
pub fn sgd_step<T: Real>(store: &mut ParamStore<T>, grads: &[Vec<T>], lr: f64, weight_decay: f64) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    let shrink = T::from_f64(1.0 - lr * weight_decay);
    let lr = T::from_f64(lr);
    for ((name, p), g) in store.iter_mut().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::Contract(format!("gradient size mismatch for {name}")));
        }
        for (w, &d) in p.data_mut().iter_mut().zip(g) {
            *w = *w * shrink - lr * d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss over each epoch, measured before each step.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

fn check_labels(samples: &[Sample], seen: &[ClassId]) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| !seen.contains(&s.label())) {
        return Err(Error::Protocol(format!(
            "training sample labelled {} which is not a seen class",
            s.label()
        )));
    }
    Ok(())
}

/// Mean total loss over `samples` without updating anything.
pub fn mean_loss(
    model: &Neuron,
    store: &ParamStore<f32>,
    samples: &[Sample],
    bank: &SemanticBank,
    seen: &[ClassId],
) -> Result<f64> {
    check_labels(samples, seen)?;
    if samples.is_empty() {
        return Err(Error::Input("no samples".into()));
    }
    let mut sum = 0.0;
    for s in samples {
        let mut g = Graph::with_store(store);
        let loss = sample_loss(&mut g, model, s, bank, seen)?;
        sum += g.value(loss).data()[0] as f64;
    }
    Ok(sum / samples.len() as f64)
}

/// Freshly initialised parameters from `config.seed`, then [`fit`].
pub fn train(
    model: &Neuron,
    samples: &[Sample],
    bank: &SemanticBank,
    seen: &[ClassId],
    config: &TrainConfig,
) -> Result<(ParamStore<f32>, TrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = model.init_params(&mut rng)?;
    let report = fit(model, &mut store, samples, bank, seen, config)?;
    Ok((store, report))
}

/// Mini-batch SGD over seeded shuffles. Batch gradients are the mean of
/// per-sample gradients, summed in batch order.
pub fn fit(
    model: &Neuron,
    store: &mut ParamStore<f32>,
    samples: &[Sample],
    bank: &SemanticBank,
    seen: &[ClassId],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    check_labels(samples, seen)?;
    model.config().check_bank(bank)?;
    if samples.is_empty() {
        return Err(Error::Input("no training samples".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(config.epochs),
        steps: 0,
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = config.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Vec<Vec<f32>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            for &i in batch {
                let mut g = Graph::with_store(store);
                let loss = sample_loss(&mut g, model, &samples[i], bank, seen)?;
                epoch_loss += g.value(loss).data()[0] as f64;
                let grads = g.backward(loss)?;
                for (a, (_, gt)) in acc.iter_mut().zip(grads.iter()) {
                    a.iter_mut().zip(gt.data()).for_each(|(x, &y)| *x += y);
                }
            }
            let inv = 1.0 / batch.len() as f32;
            acc.iter_mut().flatten().for_each(|x| *x *= inv);
            sgd_step(store, &acc, lr, config.weight_decay)?;
            report.steps += 1;
        }
        let mean = epoch_loss / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Domain {
                op: "train",
                detail: format!("loss diverged at epoch {epoch}"),
            });
        }
        info!("epoch {epoch:>3}  lr {lr:.4}  loss {mean:.5}");
        report.epoch_losses.push(mean);
    }
    debug!("{} optimizer steps", report.steps);
    Ok(report)
}
