//! Deterministic class-structured skeleton data with matching semantics.
//!
//! Every seen class is a template of per-joint sinusoids
//! `x(t) = offset + amplitude · sin(2π·f·t/T + phase)`. Each unseen class
//! takes the parameter midpoint of two seen parents, so transfer is possible
//! by construction. Semantic vectors are a fixed random linear image of the
//! centred template parameters, normalised to unit length.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::{save_dataset, SkeletonSequence};
use crate::error::{Error, Result};
use crate::eval::SplitProtocol;
use crate::semantics::{bank_from_bases, normalize, save_bank, SemanticBank, DEFAULT_PHASES};
use crate::tensor::Tensor;
use crate::types::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub seen_fraction: f64,
    pub samples_per_class: usize,
    /// Fraction of each seen class held out for testing.
    pub test_fraction: f64,
    pub frames: usize,
    pub joints: usize,
    pub persons: usize,
    pub noise_std: f64,
    pub embed_dim: usize,
    pub descriptions: usize,
    pub phases: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 12,
            seen_fraction: 2.0 / 3.0,
            samples_per_class: 50,
            test_fraction: 0.2,
            frames: 60,
            joints: 8,
            persons: 1,
            noise_std: 0.05,
            embed_dim: 32,
            descriptions: 4,
            phases: DEFAULT_PHASES,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn seen_count(&self) -> usize {
        (self.seen_fraction * self.num_classes as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 4 {
            return Err(Error::Config(format!(
                "{} classes are too few for a seen/unseen split (need at least 4)",
                self.num_classes
            )));
        }
        let seen = self.seen_count();
        if seen < 2 || seen >= self.num_classes {
            return Err(Error::Config(format!(
                "seen fraction {} leaves {seen} of {} classes seen; need at least 2 seen and 1 unseen",
                self.seen_fraction, self.num_classes
            )));
        }
        if self.samples_per_class < 2 {
            return Err(Error::Config("need at least 2 samples per class".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test fraction {} outside [0, 1)", self.test_fraction)));
        }
        if [self.frames, self.joints, self.persons, self.embed_dim, self.descriptions, self.phases].contains(&0) {
            return Err(Error::Config("synthetic dimensions must be positive".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise_std {} invalid", self.noise_std)));
        }
        Ok(())
    }

    fn test_count(&self) -> usize {
        let n = (self.test_fraction * self.samples_per_class as f64).round() as usize;
        n.min(self.samples_per_class - 1)
    }
}

/// Motion parameters of one class; per-joint arrays are indexed
/// `[joint][axis]` with joints `v + V·m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub class: ClassId,
    pub offset: Vec<[f64; 3]>,
    pub amplitude: Vec<[f64; 3]>,
    pub phase: Vec<f64>,
    /// Cycles per sequence.
    pub frequency: f64,
    /// Seen parents for unseen classes.
    pub parents: Option<(ClassId, ClassId)>,
}

impl ClassTemplate {
    fn random(class: ClassId, joints: usize, rng: &mut ChaCha8Rng) -> Self {
        let triple = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> [f64; 3] {
            [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
        };
        Self {
            class,
            offset: (0..joints).map(|_| triple(rng, -1.0, 1.0)).collect(),
            amplitude: (0..joints).map(|_| triple(rng, 0.1, 0.6)).collect(),
            phase: (0..joints).map(|_| rng.random_range(0.0..TAU)).collect(),
            frequency: rng.random_range(0.5..2.5),
            parents: None,
        }
    }

    /// Parameter-wise midpoint of two templates.
    pub fn midpoint(class: ClassId, a: &Self, b: &Self) -> Self {
        let mid3 = |x: &[[f64; 3]], y: &[[f64; 3]]| -> Vec<[f64; 3]> {
            x.iter()
                .zip(y)
                .map(|(p, q)| [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])])
                .collect()
        };
        Self {
            class,
            offset: mid3(&a.offset, &b.offset),
            amplitude: mid3(&a.amplitude, &b.amplitude),
            phase: a.phase.iter().zip(&b.phase).map(|(p, q)| 0.5 * (p + q)).collect(),
            frequency: 0.5 * (a.frequency + b.frequency),
            parents: Some((a.class, b.class)),
        }
    }

    /// Noise-free trajectory `[3, T, V, M]`.
    pub fn trajectory(&self, frames: usize, joints: usize, persons: usize) -> Vec<f64> {
        let mut out = vec![0.0; 3 * frames * joints * persons];
        for axis in 0..3 {
            for t in 0..frames {
                let arg = TAU * self.frequency * t as f64 / frames as f64;
                for v in 0..joints {
                    for m in 0..persons {
                        let j = v + joints * m;
                        let x = self.offset[j][axis] + self.amplitude[j][axis] * (arg + self.phase[j]).sin();
                        out[((axis * frames + t) * joints + v) * persons + m] = x;
                    }
                }
            }
        }
        out
    }

    fn spatial_params(&self) -> Vec<f64> {
        self.offset.iter().flatten().copied().collect()
    }

    fn temporal_params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.amplitude.iter().flatten().copied().collect();
        p.extend(&self.phase);
        p.push(self.frequency);
        p
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: Vec<SkeletonSequence>,
    pub test: Vec<SkeletonSequence>,
    pub bank: SemanticBank,
    pub protocol: SplitProtocol,
    pub templates: Vec<ClassTemplate>,
}

/// Centres each parameter vector on the class mean and maps it through a
/// seeded Gaussian matrix, then normalises.
fn embed(params: &[Vec<f64>], dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = params[0].len();
    let mean: Vec<f64> = (0..n)
        .map(|i| params.iter().map(|p| p[i]).sum::<f64>() / params.len() as f64)
        .collect();
    let scale = 1.0 / (n as f64).sqrt();
    let matrix: Vec<f64> = (0..dim * n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    params
        .iter()
        .map(|p| {
            let mut v: Vec<f64> = (0..dim)
                .map(|r| (0..n).map(|i| matrix[r * n + i] * (p[i] - mean[i])).sum())
                .collect();
            normalize(&mut v);
            v
        })
        .collect()
}

/// Parent pairs for the unseen classes: disjoint pairs while seen classes
/// last, then arbitrary distinct pairs.
fn parent_pairs(seen: &[ClassId], unseen: usize, rng: &mut ChaCha8Rng) -> Vec<(ClassId, ClassId)> {
    let mut pool = seen.to_vec();
    pool.shuffle(rng);
    let mut pairs: Vec<(ClassId, ClassId)> = pool.chunks_exact(2).map(|c| (c[0], c[1])).take(unseen).collect();
    while pairs.len() < unseen {
        let a = seen[rng.random_range(0..seen.len())];
        let b = seen[rng.random_range(0..seen.len())];
        let key = (a.min(b), a.max(b));
        if a != b && !pairs.iter().any(|&(x, y)| (x.min(y), x.max(y)) == key) {
            pairs.push((a, b));
        } else if seen.len() * (seen.len() - 1) / 2 <= pairs.len() {
            pairs.push((a, if a == seen[0] { seen[1] } else { seen[0] }));
        }
    }
    pairs
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ids: Vec<ClassId> = (0..spec.num_classes as u32).map(ClassId).collect();
    ids.shuffle(&mut rng);
    let n_seen = spec.seen_count();
    let mut seen = ids[..n_seen].to_vec();
    let mut unseen = ids[n_seen..].to_vec();
    seen.sort();
    unseen.sort();
    let joints = spec.joints * spec.persons;

    let mut templates: Vec<Option<ClassTemplate>> = vec![None; spec.num_classes];
    for &c in &seen {
        templates[c.0 as usize] = Some(ClassTemplate::random(c, joints, &mut rng));
    }
    let pairs = parent_pairs(&seen, unseen.len(), &mut rng);
    for (&c, &(a, b)) in unseen.iter().zip(&pairs) {
        let (ta, tb) = (
            templates[a.0 as usize].clone().expect("seen template"),
            templates[b.0 as usize].clone().expect("seen template"),
        );
        templates[c.0 as usize] = Some(ClassTemplate::midpoint(c, &ta, &tb));
    }
    let templates: Vec<ClassTemplate> = templates.into_iter().map(|t| t.expect("every class templated")).collect();

    let spatial = embed(
        &templates.iter().map(ClassTemplate::spatial_params).collect::<Vec<_>>(),
        spec.embed_dim,
        &mut rng,
    );
    let temporal = embed(
        &templates.iter().map(ClassTemplate::temporal_params).collect::<Vec<_>>(),
        spec.embed_dim,
        &mut rng,
    );
    let classes: Vec<ClassId> = templates.iter().map(|t| t.class).collect();
    let bank = bank_from_bases(
        &classes,
        &spatial,
        &temporal,
        spec.phases,
        spec.descriptions,
        rng.random(),
    )?;

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let shape = vec![3, spec.frames, spec.joints, spec.persons];
    let n_test = spec.test_count();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for t in &templates {
        let mut class_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        class_rng.set_stream(1 + t.class.0 as u64);
        let clean = t.trajectory(spec.frames, spec.joints, spec.persons);
        let is_seen = seen.contains(&t.class);
        for i in 0..spec.samples_per_class {
            let data: Vec<f32> = clean
                .iter()
                .map(|&x| (x + noise.sample(&mut class_rng)) as f32)
                .collect();
            let s = SkeletonSequence::new(Tensor::new(shape.clone(), data)?, t.class)?;
            if is_seen && i < spec.samples_per_class - n_test {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }
    Ok(SynthData {
        train,
        test,
        bank,
        protocol: SplitProtocol::new(seen, unseen)?,
        templates,
    })
}

/// Paths of the files written by [`write_synth`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthFiles {
    pub train: PathBuf,
    pub test: PathBuf,
    pub bank: PathBuf,
    pub protocol: PathBuf,
    pub templates: PathBuf,
}

pub fn write_synth(dir: &Path, data: &SynthData) -> Result<SynthFiles> {
    let files = SynthFiles {
        train: dir.join("train.json"),
        test: dir.join("test.json"),
        bank: dir.join("bank.json"),
        protocol: dir.join("protocol.json"),
        templates: dir.join("templates.json"),
    };
    save_dataset(&files.train, &data.train)?;
    save_dataset(&files.test, &data.test)?;
    save_bank(&files.bank, &data.bank)?;
    data.protocol.save(&files.protocol)?;
    crate::io::write_json(&files.templates, &data.templates)?;
    Ok(files)
}
