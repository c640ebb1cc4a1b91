//! Skeleton sequences, the desk-scale encoder, and the feature/dataset file
//! formats.
//!
//! The encoder folds persons into the joint axis (`V̂ = V·M`), lifts each
//! joint's 3D coordinates to `C` channels with a joint-specific affine map,
//! average-pools time by stride `T/T̂`, and runs one shared two-layer MLP
//! over every (frame, joint) cell.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::io;
use crate::nn::{uniform, weight_bound, Activation, Mlp};
use crate::tensor::Tensor;
use crate::types::{ClassId, Real};

/// Raw joint positions `[3, T, V, M]` for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    coords: Tensor<f32>,
    pub label: ClassId,
}

impl SkeletonSequence {
    pub fn new(coords: Tensor<f32>, label: ClassId) -> Result<Self> {
        if coords.rank() != 4 || coords.shape()[0] != 3 {
            return Err(Error::Input(format!(
                "skeleton coordinates must be [3, T, V, M], got {:?}",
                coords.shape()
            )));
        }
        if !coords.is_finite() {
            return Err(Error::Input("non-finite joint coordinate".into()));
        }
        Ok(Self { coords, label })
    }

    pub fn coords(&self) -> &Tensor<f32> {
        &self.coords
    }

    pub fn frames(&self) -> usize {
        self.coords.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.coords.shape()[2]
    }

    pub fn persons(&self) -> usize {
        self.coords.shape()[3]
    }

    #[inline]
    pub fn at(&self, axis: usize, t: usize, v: usize, m: usize) -> f32 {
        let s = self.coords.shape();
        self.coords.data()[((axis * s[1] + t) * s[2] + v) * s[3] + m]
    }
}

/// Uniform temporal resampling by linear interpolation of frame indices.
pub fn resample(x: &SkeletonSequence, target_frames: usize) -> Result<SkeletonSequence> {
    if target_frames == 0 {
        return Err(Error::Input("target frame count must be at least 1".into()));
    }
    let (t, v, m) = (x.frames(), x.joints(), x.persons());
    if t == target_frames {
        return Ok(x.clone());
    }
    let mut data = Vec::with_capacity(3 * target_frames * v * m);
    for axis in 0..3 {
        for i in 0..target_frames {
            let pos = if target_frames == 1 {
                (t - 1) as f64 / 2.0
            } else {
                i as f64 * (t - 1) as f64 / (target_frames - 1) as f64
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(t - 1);
            let w = (pos - lo as f64) as f32;
            for jv in 0..v {
                for jm in 0..m {
                    let a = x.at(axis, lo, jv, jm);
                    let b = x.at(axis, hi, jv, jm);
                    data.push(a + (b - a) * w);
                }
            }
        }
    }
    SkeletonSequence::new(Tensor::new(vec![3, target_frames, v, m], data)?, x.label)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Input frame count `T` after resampling.
    pub frames: usize,
    /// Output temporal length `T̂`.
    pub t_hat: usize,
    pub joints: usize,
    pub persons: usize,
    pub channels: usize,
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            frames: 60,
            t_hat: 12,
            joints: 8,
            persons: 1,
            channels: 48,
            hidden: 48,
            activation: Activation::Tanh,
        }
    }
}

impl EncoderConfig {
    pub fn v_hat(&self) -> usize {
        self.joints * self.persons
    }

    pub fn validate(&self, phases: usize) -> Result<()> {
        let dims = [
            self.frames,
            self.t_hat,
            self.joints,
            self.persons,
            self.channels,
            self.hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("encoder dimensions must be positive: {self:?}")));
        }
        if self.frames % self.t_hat != 0 {
            return Err(Error::Config(format!(
                "frame count {} not divisible by T̂ = {}",
                self.frames, self.t_hat
            )));
        }
        if phases == 0 || self.t_hat % phases != 0 {
            return Err(Error::Config(format!(
                "T̂ = {} not divisible by phase count {phases}",
                self.t_hat
            )));
        }
        Ok(())
    }

    fn lift_names(j: usize) -> (String, String) {
        (format!("encoder.lift.{j}.w"), format!("encoder.lift.{j}.b"))
    }

    fn mlp(&self) -> Mlp {
        Mlp::new("encoder.mlp", self.activation)
    }

    pub fn init_params<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<()> {
        for j in 0..self.v_hat() {
            let (w, b) = Self::lift_names(j);
            store.insert(w, uniform(&[3, self.channels], weight_bound(3), rng))?;
            store.insert(b, Tensor::zeros(&[self.channels]))?;
        }
        self.mlp()
            .init(store, (self.channels, self.hidden, self.channels), rng)
    }
}

/// Encoded representation `F: [T̂, V̂, C]` with pooled views
/// `F_s: [V̂, C]` (mean over time) and `F_t: [T̂, C]` (mean over joints).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub f: Tensor<T>,
    pub f_s: Tensor<T>,
    pub f_t: Tensor<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn from_f(f: Tensor<T>) -> Result<Self> {
        if f.rank() != 3 {
            return Err(Error::Input(format!(
                "feature map must be [T̂, V̂, C], got {:?}",
                f.shape()
            )));
        }
        let f_s = f.mean_axis(0)?;
        let f_t = f.mean_axis(1)?;
        Ok(Self { f, f_s, f_t })
    }

    pub fn t_hat(&self) -> usize {
        self.f.shape()[0]
    }

    pub fn v_hat(&self) -> usize {
        self.f.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.f.shape()[2]
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            f: self.f.cast(),
            f_s: self.f_s.cast(),
            f_t: self.f_t.cast(),
        }
    }
}

/// Graph handles for an encoded sample.
#[derive(Debug, Clone, Copy)]
pub struct FeatureVars {
    pub f: Var,
    pub f_s: Var,
    pub f_t: Var,
}

impl FeatureVars {
    pub fn to_feature_map<T: Real>(&self, g: &Graph<'_, T>) -> FeatureMap<T> {
        FeatureMap {
            f: g.value(self.f).clone(),
            f_s: g.value(self.f_s).clone(),
            f_t: g.value(self.f_t).clone(),
        }
    }
}

/// Runs the encoder on one (already resampled) sequence.
pub fn encode<T: Real>(
    g: &mut Graph<'_, T>,
    x: &SkeletonSequence,
    cfg: &EncoderConfig,
) -> Result<FeatureVars> {
    if cfg.t_hat == 0 || cfg.frames % cfg.t_hat != 0 {
        return Err(Error::Config(format!(
            "frame count {} not divisible by T̂ = {}",
            cfg.frames, cfg.t_hat
        )));
    }
    if x.frames() != cfg.frames {
        return Err(Error::Config(format!(
            "sequence has {} frames, encoder expects {} (resample first)",
            x.frames(),
            cfg.frames
        )));
    }
    if x.joints() != cfg.joints || x.persons() != cfg.persons {
        return Err(Error::Config(format!(
            "sequence has V={}, M={}, encoder expects V={}, M={}",
            x.joints(),
            x.persons(),
            cfg.joints,
            cfg.persons
        )));
    }
    let (t_hat, c) = (cfg.t_hat, cfg.channels);
    let stride = cfg.frames / t_hat;
    let inv = 1.0 / stride as f64;

    let mut lifted = Vec::with_capacity(cfg.v_hat());
    for m in 0..cfg.persons {
        for v in 0..cfg.joints {
            let j = m * cfg.joints + v;
            // Pooling commutes with the affine lift, so pool coordinates first.
            let mut pooled = Vec::with_capacity(t_hat * 3);
            for tw in 0..t_hat {
                for axis in 0..3 {
                    let s: f64 = (tw * stride..(tw + 1) * stride)
                        .map(|t| x.at(axis, t, v, m) as f64)
                        .sum();
                    pooled.push(s * inv);
                }
            }
            let xin = g.constant(Tensor::from_f64(&[t_hat, 3], &pooled)?);
            let (wn, bn) = EncoderConfig::lift_names(j);
            let (w, b) = (g.param(&wn)?, g.param(&bn)?);
            let h = g.affine(xin, w, b)?;
            lifted.push(g.reshape(h, &[t_hat, 1, c])?);
        }
    }
    let cells = g.concat(&lifted, 1)?;
    let flat = g.reshape(cells, &[t_hat * cfg.v_hat(), c])?;
    let out = cfg.mlp().forward(g, flat)?;
    let f = g.reshape(out, &[t_hat, cfg.v_hat(), c])?;
    pooled_views(g, f)
}

/// Wraps a precomputed feature map as graph constants.
pub fn feature_constants<T: Real>(g: &mut Graph<'_, T>, fm: &FeatureMap<T>) -> Result<FeatureVars> {
    let f = g.constant(fm.f.clone());
    pooled_views(g, f)
}

fn pooled_views<T: Real>(g: &mut Graph<'_, T>, f: Var) -> Result<FeatureVars> {
    let f_s = g.mean_pool(f, 0)?;
    let f_t = g.mean_pool(f, 1)?;
    Ok(FeatureVars { f, f_s, f_t })
}

// ---------------------------------------------------------------------------
// Feature files

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub count: usize,
    #[serde(rename = "T_hat")]
    pub t_hat: usize,
    #[serde(rename = "V_hat")]
    pub v_hat: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    pub labels: Vec<ClassId>,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub map: FeatureMap<f32>,
    pub label: ClassId,
}

pub fn save_features(path: &Path, items: &[LabeledFeatures]) -> Result<()> {
    let first = items
        .first()
        .ok_or_else(|| Error::Input("no feature maps to write".into()))?;
    let shape = first.map.f.shape().to_vec();
    if let Some(bad) = items.iter().find(|i| i.map.f.shape() != shape.as_slice()) {
        return Err(Error::dim("save_features", &shape, bad.map.f.shape()));
    }
    let manifest = FeatureManifest {
        count: items.len(),
        t_hat: shape[0],
        v_hat: shape[1],
        channels: shape[2],
        labels: items.iter().map(|i| i.label).collect(),
        payload: io::payload_name(path),
    };
    let bytes = io::encode_f32(items.iter().flat_map(|i| i.map.f.data().iter().copied()));
    io::write_bytes(&io::sibling(path, &manifest.payload), &bytes)?;
    io::write_json(path, &manifest)
}

/// Iterator over the samples of a validated feature file.
#[derive(Debug)]
pub struct FeatureStream {
    payload: Vec<f32>,
    labels: std::vec::IntoIter<ClassId>,
    shape: [usize; 3],
    next: usize,
}

impl FeatureStream {
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }
}

impl Iterator for FeatureStream {
    type Item = LabeledFeatures;

    fn next(&mut self) -> Option<Self::Item> {
        let label = self.labels.next()?;
        let n: usize = self.shape.iter().product();
        let chunk = self.payload[self.next * n..(self.next + 1) * n].to_vec();
        self.next += 1;
        let f = Tensor::new(self.shape.to_vec(), chunk).expect("validated at load");
        let map = FeatureMap::from_f(f).expect("rank-3 feature map");
        Some(LabeledFeatures { map, label })
    }
}

/// Loads a feature file, rejecting maps whose `T̂` is not divisible by
/// `phases`.
pub fn load_features(path: &Path, phases: usize) -> Result<FeatureStream> {
    let m: FeatureManifest = io::read_json(path)?;
    let format_err = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
        start: 0,
        end: 0,
    };
    if m.labels.len() != m.count {
        return Err(format_err(format!(
            "manifest lists {} labels for {} samples",
            m.labels.len(),
            m.count
        )));
    }
    if m.t_hat == 0 || m.v_hat == 0 || m.channels == 0 {
        return Err(format_err("zero feature dimension in header".into()));
    }
    if phases == 0 || m.t_hat % phases != 0 {
        return Err(Error::Config(format!(
            "feature file T̂ = {} is not divisible by phase count {phases}",
            m.t_hat
        )));
    }
    let payload_path = io::sibling(path, &m.payload);
    let payload =
        io::read_f32_payload(&payload_path, m.count * m.t_hat * m.v_hat * m.channels)?;
    io::check_finite(&payload_path, &payload)?;
    Ok(FeatureStream {
        payload,
        labels: m.labels.into_iter(),
        shape: [m.t_hat, m.v_hat, m.channels],
        next: 0,
    })
}

// ---------------------------------------------------------------------------
// Skeleton dataset files

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub count: usize,
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "V")]
    pub joints: usize,
    #[serde(rename = "M")]
    pub persons: usize,
    pub labels: Vec<ClassId>,
    pub payload: String,
}

pub fn save_dataset(path: &Path, samples: &[SkeletonSequence]) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Input("no sequences to write".into()))?;
    let shape = first.coords().shape().to_vec();
    if let Some(bad) = samples.iter().find(|s| s.coords().shape() != shape.as_slice()) {
        return Err(Error::dim("save_dataset", &shape, bad.coords().shape()));
    }
    let manifest = DatasetManifest {
        count: samples.len(),
        frames: shape[1],
        joints: shape[2],
        persons: shape[3],
        labels: samples.iter().map(|s| s.label).collect(),
        payload: io::payload_name(path),
    };
    let bytes = io::encode_f32(samples.iter().flat_map(|s| s.coords().data().iter().copied()));
    io::write_bytes(&io::sibling(path, &manifest.payload), &bytes)?;
    io::write_json(path, &manifest)
}

pub fn load_dataset(path: &Path) -> Result<Vec<SkeletonSequence>> {
    let m: DatasetManifest = io::read_json(path)?;
    if m.labels.len() != m.count {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("manifest lists {} labels for {} samples", m.labels.len(), m.count),
            start: 0,
            end: 0,
        });
    }
    if m.count == 0 || m.frames == 0 || m.joints == 0 || m.persons == 0 {
        return Err(Error::Input(format!("empty skeleton dataset {}", path.display())));
    }
    let per = 3 * m.frames * m.joints * m.persons;
    let payload_path = io::sibling(path, &m.payload);
    let payload = io::read_f32_payload(&payload_path, m.count * per)?;
    io::check_finite(&payload_path, &payload)?;
    payload
        .chunks_exact(per)
        .zip(m.labels)
        .map(|(chunk, label)| {
            let coords = Tensor::new(vec![3, m.frames, m.joints, m.persons], chunk.to_vec())?;
            SkeletonSequence::new(coords, label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(frames: usize, joints: usize, persons: usize, f: impl Fn(usize, usize, usize, usize) -> f32) -> SkeletonSequence {
        let mut data = Vec::new();
        for a in 0..3 {
            for t in 0..frames {
                for v in 0..joints {
                    for m in 0..persons {
                        data.push(f(a, t, v, m));
                    }
                }
            }
        }
        SkeletonSequence::new(Tensor::new(vec![3, frames, joints, persons], data).unwrap(), ClassId(0)).unwrap()
    }

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            frames: 12,
            t_hat: 6,
            joints: 3,
            persons: 2,
            channels: 5,
            hidden: 4,
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn resample_identity_and_constant() {
        let x = seq(64, 2, 1, |a, t, v, _| (a + t * 3 + v) as f32 * 0.1);
        assert_eq!(resample(&x, 64).unwrap(), x);

        let c = seq(17, 3, 1, |a, _, v, _| 0.37 + a as f32 - v as f32);
        for target in [1, 5, 17, 40] {
            let r = resample(&c, target).unwrap();
            assert_eq!(r.frames(), target);
            for a in 0..3 {
                for t in 0..target {
                    for v in 0..3 {
                        assert_eq!(r.at(a, t, v, 0), c.at(a, 0, v, 0));
                    }
                }
            }
        }
    }

    #[test]
    fn resample_two_frames_to_three_gives_midpoint() {
        let x = seq(2, 1, 1, |a, t, _, _| if t == 0 { a as f32 } else { 10.0 + a as f32 * 3.0 });
        let r = resample(&x, 3).unwrap();
        for a in 0..3 {
            let expect = (x.at(a, 0, 0, 0) + x.at(a, 1, 0, 0)) / 2.0;
            assert!((r.at(a, 1, 0, 0) - expect).abs() < 1e-6);
        }
        assert!(resample(&x, 0).is_err());
    }

    #[test]
    fn divisibility_contract() {
        let mut cfg = EncoderConfig {
            frames: 64,
            t_hat: 12,
            ..EncoderConfig::default()
        };
        assert!(matches!(cfg.validate(3), Err(Error::Config(_))));
        cfg.frames = 60;
        assert!(cfg.validate(3).is_ok());
        cfg.frames = 64;
        cfg.t_hat = 16;
        assert!(matches!(cfg.validate(3), Err(Error::Config(_))));
        assert!(cfg.validate(4).is_ok());
    }

    #[test]
    fn encode_rejects_unresampled_input() {
        let cfg = small_cfg();
        let mut store = ParamStore::<f64>::new();
        cfg.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut g = Graph::with_store(&store);
        let x = seq(10, 3, 2, |_, _, _, _| 0.0);
        assert!(matches!(encode(&mut g, &x, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_input_with_zero_lift_bias_is_constant() {
        let cfg = small_cfg();
        let mut store = ParamStore::<f64>::new();
        cfg.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for j in 0..cfg.v_hat() {
            let b = store.get_mut(&format!("encoder.lift.{j}.b")).unwrap();
            b.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut g = Graph::with_store(&store);
        let x = seq(12, 3, 2, |_, _, _, _| 0.0);
        let fv = encode(&mut g, &x, &cfg).unwrap();
        let f = g.value(fv.f);
        assert_eq!(f.shape(), &[6, 6, 5]);
        let first = &f.data()[..5];
        for cell in f.data().chunks(5) {
            assert_eq!(cell, first);
        }
    }

    #[test]
    fn encode_is_deterministic_and_pools_correctly() {
        let cfg = small_cfg();
        let mut store = ParamStore::<f64>::new();
        cfg.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = seq(12, 3, 2, |a, t, v, m| ((a * 7 + t * 3 + v + m * 5) as f32).sin());
        let run = || {
            let mut g = Graph::with_store(&store);
            let fv = encode(&mut g, &x, &cfg).unwrap();
            fv.to_feature_map(&g)
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let recomputed = FeatureMap::from_f(a.f.clone()).unwrap();
        for (p, q) in a.f_s.data().iter().zip(recomputed.f_s.data()) {
            assert!((p - q).abs() < 1e-6);
        }
        for (p, q) in a.f_t.data().iter().zip(recomputed.f_t.data()) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_persons_swap_invariant() {
        let cfg = small_cfg();
        let mut store = ParamStore::<f64>::new();
        cfg.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = seq(12, 3, 2, |a, t, v, _| ((a + t + 2 * v) as f32 * 0.3).cos());
        // Swap person 0 and 1 (identical content).
        let y = seq(12, 3, 2, |a, t, v, m| x.at(a, t, v, 1 - m));
        let enc = |s: &SkeletonSequence| {
            let mut g = Graph::with_store(&store);
            let fv = encode(&mut g, s, &cfg).unwrap();
            g.value(fv.f).clone()
        };
        assert_eq!(enc(&x), enc(&y));
    }

    #[test]
    fn feature_file_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feats.json");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let items: Vec<_> = (0..3)
            .map(|i| LabeledFeatures {
                map: FeatureMap::from_f(uniform::<f32>(&[6, 4, 3], 1.0, &mut rng)).unwrap(),
                label: ClassId(i),
            })
            .collect();
        save_features(&path, &items).unwrap();
        let back: Vec<_> = load_features(&path, 3).unwrap().collect();
        assert_eq!(back, items);

        assert!(matches!(load_features(&path, 4), Err(Error::Config(_))));

        let bin = dir.path().join("feats.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 10]).unwrap();
        match load_features(&path, 3) {
            Err(Error::Format { start, end, .. }) => {
                assert_eq!(end as usize, bytes.len());
                assert_eq!(start as usize, bytes.len() - 10);
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.json");
        let xs = vec![
            seq(4, 2, 1, |a, t, v, _| (a + t + v) as f32),
            seq(4, 2, 1, |a, t, v, _| -((a * t + v) as f32)),
        ];
        save_dataset(&path, &xs).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), xs);
    }
}
