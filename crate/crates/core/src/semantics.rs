//! Per-class, per-phase semantic feature banks.
//!
//! A bank holds `N_a` description embeddings of dimension `d` for every
//! (class, stream, phase) cell. Payload order is
//! `(class, stream s-then-t, phase, description, dim)`, row-major.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;
use crate::types::{ClassId, Real, Stream};

pub const DEFAULT_PHASES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseLabels {
    pub spatial: Vec<String>,
    pub temporal: Vec<String>,
}

impl PhaseLabels {
    /// coarse/mid/fine structure and start/mid/end timing for three phases.
    pub fn for_phases(n: usize) -> Self {
        if n == 3 {
            let v = |xs: [&str; 3]| xs.iter().map(|s| s.to_string()).collect();
            return Self {
                spatial: v(["coarse", "mid", "fine"]),
                temporal: v(["start", "mid", "end"]),
            };
        }
        let v: Vec<String> = (0..n).map(|e| format!("phase-{e}")).collect();
        Self {
            spatial: v.clone(),
            temporal: v,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BankManifest {
    classes: Vec<ClassId>,
    #[serde(rename = "N_e")]
    phases: usize,
    #[serde(rename = "N_a")]
    descriptions: usize,
    d: usize,
    phase_labels: PhaseLabels,
    payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoder: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticBank {
    classes: Vec<ClassId>,
    phases: usize,
    descriptions: usize,
    dim: usize,
    phase_labels: PhaseLabels,
    encoder: Option<String>,
    data: Vec<f32>,
    index: HashMap<ClassId, usize>,
}

impl SemanticBank {
    /// Builds a bank from a flat payload in canonical order.
    pub fn new(
        classes: Vec<ClassId>,
        phases: usize,
        descriptions: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if phases == 0 || descriptions == 0 || dim == 0 || classes.is_empty() {
            return Err(Error::Input(format!(
                "empty bank dimensions: {} classes, N_e={phases}, N_a={descriptions}, d={dim}",
                classes.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, &c) in classes.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(Error::Input(format!("class {c} listed twice in bank")));
            }
        }
        let expected = classes.len() * 2 * phases * descriptions * dim;
        if data.len() != expected {
            return Err(Error::Input(format!(
                "bank payload holds {} values, expected {expected}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite value in semantic bank".into()));
        }
        Ok(Self {
            classes,
            phases,
            descriptions,
            dim,
            phase_labels: PhaseLabels::for_phases(phases),
            encoder: None,
            data,
            index,
        })
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn descriptions(&self) -> usize {
        self.descriptions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phase_labels(&self) -> &PhaseLabels {
        &self.phase_labels
    }

    pub fn encoder(&self) -> Option<&str> {
        self.encoder.as_deref()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.index.contains_key(&class)
    }

    fn cell_size(&self) -> usize {
        self.descriptions * self.dim
    }

    fn cell_offset(&self, ci: usize, stream: Stream, phase: usize) -> usize {
        let s = match stream {
            Stream::Spatial => 0,
            Stream::Temporal => 1,
        };
        ((ci * 2 + s) * self.phases + phase) * self.cell_size()
    }

    /// Raw `N_a × d` rows of one cell.
    pub fn cell(&self, class: ClassId, stream: Stream, phase: usize) -> Result<&[f32]> {
        let ci = *self.index.get(&class).ok_or_else(|| Error::Lookup {
            kind: "class",
            name: class.to_string(),
        })?;
        if phase >= self.phases {
            return Err(Error::Lookup {
                kind: "phase",
                name: phase.to_string(),
            });
        }
        let off = self.cell_offset(ci, stream, phase);
        Ok(&self.data[off..off + self.cell_size()])
    }

    /// Mean over the description axis, `Ẑ_y` for the given phase and stream.
    pub fn pool_class<T: Real>(&self, class: ClassId, phase: usize, stream: Stream) -> Result<Tensor<T>> {
        let rows = self.cell(class, stream, phase)?;
        let mut acc = vec![0f64; self.dim];
        for row in rows.chunks_exact(self.dim) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v as f64;
            }
        }
        let n = self.descriptions as f64;
        Tensor::from_f64(&[self.dim], &acc.iter().map(|a| a / n).collect::<Vec<_>>())
    }

    /// Pooled embeddings of `classes` stacked into a `[K, d]` matrix.
    pub fn pooled_matrix<T: Real>(&self, classes: &[ClassId], phase: usize, stream: Stream) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(classes.len() * self.dim);
        for &c in classes {
            data.extend_from_slice(self.pool_class::<T>(c, phase, stream)?.data());
        }
        Tensor::new(vec![classes.len(), self.dim], data)
    }

    pub fn with_encoder(mut self, name: impl Into<String>) -> Self {
        self.encoder = Some(name.into());
        self
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }
}

pub fn save_bank(path: &Path, bank: &SemanticBank) -> Result<()> {
    let manifest = BankManifest {
        classes: bank.classes.clone(),
        phases: bank.phases,
        descriptions: bank.descriptions,
        d: bank.dim,
        phase_labels: bank.phase_labels.clone(),
        payload: io::payload_name(path),
        encoder: bank.encoder.clone(),
    };
    io::write_bytes(
        &io::sibling(path, &manifest.payload),
        &io::encode_f32(bank.data.iter().copied()),
    )?;
    io::write_json(path, &manifest)
}

pub fn load_bank(path: &Path) -> Result<SemanticBank> {
    let m: BankManifest = io::read_json(path)?;
    let payload_path = io::sibling(path, &m.payload);
    let fmt = |detail: String, start: u64, end: u64| Error::Format {
        path: payload_path.clone(),
        detail,
        start,
        end,
    };
    if m.phases == 0 || m.descriptions == 0 || m.d == 0 || m.classes.is_empty() {
        return Err(fmt("empty bank dimensions in manifest".into(), 0, 0));
    }
    if m.phase_labels.spatial.len() != m.phases || m.phase_labels.temporal.len() != m.phases {
        return Err(fmt(
            format!("phase_labels do not list N_e = {} phases per stream", m.phases),
            0,
            0,
        ));
    }
    let data = io::read_f32_payload_any(&payload_path)?;
    if data.len() % m.d != 0 {
        let whole = (data.len() / m.d * m.d * 4) as u64;
        return Err(fmt(
            format!("payload of {} floats is not a whole number of d = {} rows", data.len(), m.d),
            whole,
            data.len() as u64 * 4,
        ));
    }
    let cell = m.descriptions * m.d;
    let expected = m.classes.len() * 2 * m.phases * cell;
    if data.len() < expected {
        // Cells are laid out in canonical order, so the first absent one is
        // at the truncation point.
        let ci = data.len() / cell;
        let phase = ci % m.phases;
        let stream = if (ci / m.phases) % 2 == 0 {
            Stream::Spatial
        } else {
            Stream::Temporal
        };
        let class = m.classes[ci / (2 * m.phases)];
        return Err(Error::Completeness { class, stream, phase });
    }
    if data.len() > expected {
        return Err(fmt(
            format!("payload has {} trailing floats beyond the declared cells", data.len() - expected),
            expected as u64 * 4,
            data.len() as u64 * 4,
        ));
    }
    io::check_finite(&payload_path, &data)?;
    if m.phases != DEFAULT_PHASES {
        log::warn!(
            "semantic bank {} has N_e = {} phases (default {DEFAULT_PHASES}); pipeline follows the bank",
            path.display(),
            m.phases
        );
    }
    let mut bank = SemanticBank::new(m.classes, m.phases, m.descriptions, m.d, data)?;
    bank.phase_labels = m.phase_labels;
    bank.encoder = m.encoder;
    Ok(bank)
}

/// Magnitude of the phase-specific perturbation; strictly decreasing in
/// `phase` so later phases sit closer to the class base direction.
pub fn phase_perturbation(phase: usize, phases: usize) -> f64 {
    0.3 * (phases - phase) as f64 / phases as f64
}

const DESCRIPTION_NOISE: f64 = 0.01;

/// Seeded orthonormal directions (Gram–Schmidt on Gaussian draws). Beyond
/// `dim` vectors orthogonality is impossible; the extras are only
/// normalised.
pub fn orthonormal_directions(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for i in 0..count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if i < dim {
            for _ in 0..2 {
                for u in &out {
                    let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
                }
            }
        }
        normalize(&mut v);
        out.push(v);
    }
    out
}

pub(crate) fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Builds a bank around per-class base directions: phase `e` vectors are
/// `base + perturbation(e)` with `N_a` noisy copies each.
pub fn bank_from_bases(
    classes: &[ClassId],
    spatial_bases: &[Vec<f64>],
    temporal_bases: &[Vec<f64>],
    phases: usize,
    descriptions: usize,
    seed: u64,
) -> Result<SemanticBank> {
    let dim = spatial_bases.first().map_or(0, Vec::len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(classes.len() * 2 * phases * descriptions * dim);
    for ci in 0..classes.len() {
        for base in [&spatial_bases[ci], &temporal_bases[ci]] {
            if base.len() != dim {
                return Err(Error::dim("bank_from_bases", &[dim], &[base.len()]));
            }
            for phase in 0..phases {
                let mut dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                normalize(&mut dir);
                let mag = phase_perturbation(phase, phases);
                for _ in 0..descriptions {
                    for (b, u) in base.iter().zip(&dir) {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        data.push((b + mag * u + DESCRIPTION_NOISE * noise) as f32);
                    }
                }
            }
        }
    }
    SemanticBank::new(classes.to_vec(), phases, descriptions, dim, data)
}

/// Synthetic bank with orthonormal class directions shared by both streams.
pub fn synth_bank(num_classes: usize, descriptions: usize, dim: usize, seed: u64) -> Result<SemanticBank> {
    synth_bank_with_phases(num_classes, descriptions, dim, DEFAULT_PHASES, seed)
}

pub fn synth_bank_with_phases(
    num_classes: usize,
    descriptions: usize,
    dim: usize,
    phases: usize,
    seed: u64,
) -> Result<SemanticBank> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases = orthonormal_directions(num_classes, dim, &mut rng);
    let classes: Vec<ClassId> = (0..num_classes as u32).map(ClassId).collect();
    bank_from_bases(&classes, &bases, &bases, phases, descriptions, seed.wrapping_add(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bank(rows: &[[f32; 2]]) -> SemanticBank {
        let n_a = rows.len();
        let mut data = Vec::new();
        for _stream in 0..2 {
            for _phase in 0..3 {
                for r in rows {
                    data.extend_from_slice(r);
                }
            }
        }
        SemanticBank::new(vec![ClassId(0)], 3, n_a, 2, data).unwrap()
    }

    #[test]
    fn pool_single_row_unchanged() {
        let b = tiny_bank(&[[0.25, -4.0]]);
        let p = b.pool_class::<f64>(ClassId(0), 1, Stream::Spatial).unwrap();
        assert_eq!(p.data(), &[0.25, -4.0]);
    }

    #[test]
    fn pool_opposite_rows_cancel() {
        let b = tiny_bank(&[[0.5, -1.5], [-0.5, 1.5]]);
        let p = b.pool_class::<f64>(ClassId(0), 0, Stream::Temporal).unwrap();
        assert_eq!(p.data(), &[0.0, 0.0]);
    }

    #[test]
    fn pool_three_rows() {
        let b = tiny_bank(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let p = b.pool_class::<f64>(ClassId(0), 2, Stream::Spatial).unwrap();
        for v in p.data() {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_class_is_lookup_error() {
        let b = tiny_bank(&[[1.0, 0.0]]);
        assert!(matches!(
            b.pool_class::<f64>(ClassId(9), 0, Stream::Spatial),
            Err(Error::Lookup { .. })
        ));
    }

    #[test]
    fn synth_bank_is_deterministic_and_orthogonal() {
        let a = synth_bank(6, 3, 6, 11).unwrap();
        let b = synth_bank(6, 3, 6, 11).unwrap();
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bases = orthonormal_directions(6, 6, &mut rng);
        for i in 0..6 {
            for j in (i + 1)..6 {
                let dot: f64 = bases[i].iter().zip(&bases[j]).map(|(x, y)| x * y).sum();
                assert!(dot.abs() < 1e-6, "{i},{j}: {dot}");
            }
        }
    }

    #[test]
    fn synth_bank_perturbation_decreases_with_phase() {
        let bank = synth_bank(5, 4, 16, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bases = orthonormal_directions(5, 16, &mut rng);
        for (ci, &c) in bank.classes().iter().enumerate() {
            for stream in Stream::BOTH {
                let dist: Vec<f64> = (0..3)
                    .map(|e| {
                        let p = bank.pool_class::<f64>(c, e, stream).unwrap();
                        p.data()
                            .iter()
                            .zip(&bases[ci])
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                assert!(dist[0] > dist[1] && dist[1] > dist[2], "{c} {stream}: {dist:?}");
            }
        }
    }
}
