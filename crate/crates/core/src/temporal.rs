//! Temporal micro-prototype evolution with a recall/remember gated memory.
//!
//! The pooled temporal feature is cut into `N_e` contiguous segments; phase
//! `e` attends over segment `e` only and blends the result into the running
//! prototype through two sigmoid gates.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::Refiner;
use crate::types::Real;

/// Recall gate `ρ_r`, remember gate `ρ_m` and refinement `φ_t` for one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSet {
    pub recall: Refiner,
    pub remember: Refiner,
    pub refine: Refiner,
}

/// How the next prototype is formed from the aggregated evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryMode {
    /// `σ(ρ_r(P̂))⊙P + σ(ρ_m(P̂))⊙φ_t(P̂)`
    Gated,
    /// `φ_t(P̂)`; previous knowledge is overwritten.
    Ungated,
}

/// Splits `F_t: [T̂, C]` into `phases` contiguous `[T̂/N_e, C]` segments.
pub fn segment_temporal<T: Real>(g: &mut Graph<'_, T>, f_t: Var, phases: usize) -> Result<Vec<Var>> {
    let t_hat = g.shape(f_t)[0];
    if phases == 0 || t_hat % phases != 0 {
        return Err(Error::Config(format!(
            "T̂ = {t_hat} not divisible by phase count {phases}"
        )));
    }
    let len = t_hat / phases;
    (0..phases).map(|e| g.slice(f_t, 0, e * len, len)).collect()
}

/// `P̂_t = F_tᵉᵀ · softmax(F_tᵉ · P_t)` with the softmax taken across the
/// segment's frames, so each attribute is a convex combination of frame
/// features.
pub fn temporal_aggregate<T: Real>(g: &mut Graph<'_, T>, f_seg: Var, p_t: Var) -> Result<Var> {
    let logits = g.matmul(f_seg, p_t)?;
    let h = g.softmax(logits, 0)?;
    let ft = g.transpose(f_seg)?;
    g.matmul(ft, h)
}

pub fn memory_update<T: Real>(
    g: &mut Graph<'_, T>,
    p_hat: Var,
    p_prev: Var,
    gates: &GateSet,
    mode: MemoryMode,
) -> Result<Var> {
    let refined = gates.refine.apply_columns(g, p_hat)?;
    if mode == MemoryMode::Ungated {
        return Ok(refined);
    }
    let r = gates.recall.apply_columns(g, p_hat)?;
    let r = g.sigmoid(r);
    let m = gates.remember.apply_columns(g, p_hat)?;
    let m = g.sigmoid(m);
    let recall = g.mul(r, p_prev)?;
    let remember = g.mul(m, refined)?;
    g.add(recall, remember)
}

/// Runs every phase and returns `[P_t^1, …, P_t^{N_e}]`.
pub fn run_temporal<T: Real>(
    g: &mut Graph<'_, T>,
    f_t: Var,
    p0: Var,
    gates: &[&GateSet],
    mode: MemoryMode,
) -> Result<Vec<Var>> {
    let segments = segment_temporal(g, f_t, gates.len())?;
    let mut p = p0;
    let mut out = Vec::with_capacity(gates.len());
    for (seg, gs) in segments.into_iter().zip(gates) {
        let p_hat = temporal_aggregate(g, seg, p)?;
        p = memory_update(g, p_hat, p, gs, mode)?;
        out.push(p);
    }
    Ok(out)
}
