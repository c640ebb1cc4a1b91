//! Spatial micro-prototype evolution through per-phase top-α compression.
//!
//! Each phase scores every joint against every prototype attribute,
//! keeps the `max(1, ⌈α·N_s⌉)` strongest attributes per joint and
//! aggregates joint features into the next prototype.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::Refiner;
use crate::tensor::Tensor;
use crate::types::Real;

/// Retention fractions per phase; nondecreasing, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PhaseSchedule {
    alphas: Vec<f64>,
}

impl PhaseSchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Config("empty alpha schedule".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Config(format!("alpha {a} outside [0, 1]")));
        }
        if alphas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!("alphas must be nondecreasing: {alphas:?}")));
        }
        Ok(Self { alphas })
    }

    /// `[0.3, 0.5, 0.7]` for three phases, evenly spread in `[0.3, 0.7]`
    /// otherwise.
    pub fn default_for(phases: usize) -> Self {
        let alphas = match phases {
            0 => vec![],
            1 => vec![0.5],
            3 => vec![0.3, 0.5, 0.7],
            n => (0..n).map(|e| 0.3 + 0.4 * e as f64 / (n - 1) as f64).collect(),
        };
        Self { alphas }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

impl TryFrom<Vec<f64>> for PhaseSchedule {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PhaseSchedule> for Vec<f64> {
    fn from(s: PhaseSchedule) -> Self {
        s.alphas
    }
}

/// `H = softmax(F_s · P_s)` with the softmax over attributes (per joint row).
pub fn spatial_similarity<T: Real>(g: &mut Graph<'_, T>, f_s: Var, p_s: Var) -> Result<Var> {
    let logits = g.matmul(f_s, p_s)?;
    g.softmax(logits, 1)
}

/// Number of scores kept per row.
pub fn retained_count(alpha: f64, n: usize) -> usize {
    // Guard against products like 0.3·10 = 3.0000000000000004.
    let k = (alpha * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// 0/1 mask selecting the top-k entries of every row; ties keep the lower
/// attribute index.
pub fn topk_support<T: Real>(h: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    let n = *h.shape().last().unwrap_or(&0);
    if h.rank() != 2 {
        return Err(Error::Contract(format!("top-k mask expects [V̂, N_s], got {:?}", h.shape())));
    }
    let k = retained_count(alpha, n);
    let mut mask = vec![T::zero(); h.len()];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for (row, out) in h.data().chunks(n).zip(mask.chunks_mut(n)) {
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        for &i in &order[..k] {
            out[i] = T::one();
        }
    }
    Tensor::new(h.shape().to_vec(), mask)
}

/// Plain-tensor top-α masking (no graph).
pub fn topk_mask_values<T: Real>(h: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    let mask = topk_support(h, alpha)?;
    h.zip_map(&mask, "topk_mask", |a, m| if m > T::zero() { a } else { T::zero() })
}

/// `Ĥ`: kept scores unchanged, the rest zero, no renormalisation. The
/// support is a constant of the forward pass, so gradients flow only
/// through retained entries.
pub fn topk_mask<T: Real>(g: &mut Graph<'_, T>, h: Var, alpha: f64) -> Result<Var> {
    let mask = topk_support(g.value(h), alpha)?;
    let m = g.constant(mask);
    g.mul(h, m)
}

/// `P_s^{e+1} = φ_s(F_sᵀ · Ĥ)`.
pub fn compress_update<T: Real>(g: &mut Graph<'_, T>, f_s: Var, h_hat: Var, refine: &Refiner) -> Result<Var> {
    let ft = g.transpose(f_s)?;
    let agg = g.matmul(ft, h_hat)?;
    refine.apply_columns(g, agg)
}

/// Runs every phase and returns `[P_s^1, …, P_s^{N_e}]`.
pub fn run_spatial<T: Real>(
    g: &mut Graph<'_, T>,
    f_s: Var,
    p0: Var,
    schedule: &PhaseSchedule,
    refiners: &[&Refiner],
) -> Result<Vec<Var>> {
    if refiners.len() != schedule.len() {
        return Err(Error::Config(format!(
            "{} spatial refiners for {} phases",
            refiners.len(),
            schedule.len()
        )));
    }
    let mut p = p0;
    let mut out = Vec::with_capacity(schedule.len());
    for (&alpha, refine) in schedule.alphas().iter().zip(refiners) {
        let h = spatial_similarity(g, f_s, p)?;
        let h_hat = topk_mask(g, h, alpha)?;
        p = compress_update(g, f_s, h_hat, refine)?;
        out.push(p);
    }
    Ok(out)
}
