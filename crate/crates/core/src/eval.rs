//! Calibrated-stacking prediction and the Acc / S / U / H metrics.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{class_affinities, SemanticTargets};
use crate::autodiff::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::model::{Neuron, Sample};
use crate::semantics::SemanticBank;
use crate::types::{ClassId, Stream};

/// Disjoint seen/unseen class partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawProtocol", into = "RawProtocol")]
pub struct SplitProtocol {
    seen: BTreeSet<ClassId>,
    unseen: BTreeSet<ClassId>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    seen: Vec<ClassId>,
    unseen: Vec<ClassId>,
}

impl TryFrom<RawProtocol> for SplitProtocol {
    type Error = Error;
    fn try_from(r: RawProtocol) -> Result<Self> {
        Self::new(r.seen, r.unseen)
    }
}

impl From<SplitProtocol> for RawProtocol {
    fn from(p: SplitProtocol) -> Self {
        RawProtocol {
            seen: p.seen.into_iter().collect(),
            unseen: p.unseen.into_iter().collect(),
        }
    }
}

impl SplitProtocol {
    pub fn new(seen: impl IntoIterator<Item = ClassId>, unseen: impl IntoIterator<Item = ClassId>) -> Result<Self> {
        let seen: BTreeSet<ClassId> = seen.into_iter().collect();
        let unseen: BTreeSet<ClassId> = unseen.into_iter().collect();
        if seen.is_empty() || unseen.is_empty() {
            return Err(Error::Protocol("seen and unseen sets must both be nonempty".into()));
        }
        if let Some(c) = seen.intersection(&unseen).next() {
            return Err(Error::Protocol(format!("class {c} is both seen and unseen")));
        }
        Ok(Self { seen, unseen })
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Seen classes in ascending id order.
    pub fn seen(&self) -> Vec<ClassId> {
        self.seen.iter().copied().collect()
    }

    pub fn unseen(&self) -> Vec<ClassId> {
        self.unseen.iter().copied().collect()
    }

    /// All classes in ascending id order.
    pub fn all(&self) -> Vec<ClassId> {
        self.seen.union(&self.unseen).copied().collect()
    }

    pub fn is_seen(&self, c: ClassId) -> bool {
        self.seen.contains(&c)
    }

    pub fn contains(&self, c: ClassId) -> bool {
        self.seen.contains(&c) || self.unseen.contains(&c)
    }

    /// The same partition with roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            seen: self.unseen.clone(),
            unseen: self.seen.clone(),
        }
    }

    fn candidates(&self, mode: EvalMode) -> Vec<ClassId> {
        match mode {
            EvalMode::Zsl => self.unseen(),
            EvalMode::Gzsl => self.all(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Unseen candidates only, unseen test samples only.
    Zsl,
    /// All candidates; seen and unseen test samples reported separately.
    Gzsl,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Zsl => "zsl",
            EvalMode::Gzsl => "gzsl",
        })
    }
}

/// Penalties subtracted from seen-class scores in GZSL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub gamma_s: f64,
    pub gamma_t: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            gamma_s: 0.0003,
            gamma_t: 0.0002,
        }
    }
}

impl CalibrationConfig {
    pub fn gamma(&self, stream: Stream) -> f64 {
        match stream {
            Stream::Spatial => self.gamma_s,
            Stream::Temporal => self.gamma_t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_s.is_finite() && self.gamma_t.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("calibration must be finite: {self:?}")))
        }
    }
}

/// Final-phase scores of one sample against a candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub classes: Vec<ClassId>,
    pub spatial: Vec<f64>,
    pub temporal: Vec<f64>,
}

impl ClassScores {
    pub fn stream(&self, stream: Stream) -> &[f64] {
        match stream {
            Stream::Spatial => &self.spatial,
            Stream::Temporal => &self.temporal,
        }
    }
}

/// `score(y) = ϕ(X)ᵀ ψ(Ẑ_y)` for every candidate, using the last phase of
/// each stream.
pub fn class_scores(
    model: &Neuron,
    store: &ParamStore<f32>,
    sample: &Sample,
    bank: &SemanticBank,
    candidates: &[ClassId],
) -> Result<ClassScores> {
    let mut g = Graph::with_store(store);
    let targets = SemanticTargets::build(&mut g, model, bank, candidates)?;
    let outputs = model.forward(&mut g, sample)?;
    let last = model.phases() - 1;
    let mut per_stream = |stream: Stream| -> Result<Vec<f64>> {
        let proto = outputs.stream(stream)[last];
        let a = class_affinities(&mut g, model, proto, &targets, stream, last)?;
        Ok(g.value(a).to_f64_vec())
    };
    let spatial = per_stream(Stream::Spatial)?;
    let temporal = per_stream(Stream::Temporal)?;
    Ok(ClassScores {
        classes: candidates.to_vec(),
        spatial,
        temporal,
    })
}

/// Scores every sample against the candidates of `mode`.
pub fn score_samples(
    model: &Neuron,
    store: &ParamStore<f32>,
    samples: &[Sample],
    bank: &SemanticBank,
    protocol: &SplitProtocol,
    mode: EvalMode,
) -> Result<Vec<ClassScores>> {
    let candidates = protocol.candidates(mode);
    samples
        .iter()
        .map(|s| class_scores(model, store, s, bank, &candidates))
        .collect()
}

/// One- or two-element prediction set, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet(Vec<ClassId>);

impl PredictionSet {
    pub fn pair(a: ClassId, b: ClassId) -> Self {
        if a == b {
            Self(vec![a])
        } else {
            Self(vec![a.min(b), a.max(b)])
        }
    }

    pub fn single(a: ClassId) -> Self {
        Self(vec![a])
    }

    pub fn contains(&self, c: ClassId) -> bool {
        self.0.contains(&c)
    }

    pub fn members(&self) -> &[ClassId] {
        &self.0
    }
}

/// Argmax of `scores` over the candidates admitted by `mode`, after
/// subtracting `gamma` from seen classes in GZSL. Ties go to the lower id.
pub fn calibrated_argmax(
    classes: &[ClassId],
    scores: &[f64],
    protocol: &SplitProtocol,
    mode: EvalMode,
    gamma: f64,
) -> Result<ClassId> {
    if classes.len() != scores.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} classes",
            scores.len(),
            classes.len()
        )));
    }
    let mut best: Option<(ClassId, f64)> = None;
    for (&c, &s) in classes.iter().zip(scores) {
        let adjusted = match mode {
            EvalMode::Zsl if protocol.is_seen(c) => continue,
            EvalMode::Gzsl if protocol.is_seen(c) => s - gamma,
            _ => s,
        };
        best = match best {
            Some((bc, bs)) if bs > adjusted || (bs == adjusted && bc < c) => Some((bc, bs)),
            _ => Some((c, adjusted)),
        };
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::Contract("no admissible candidate classes".into()))
}

/// `{ŷ_s, ŷ_t}`: per-stream calibrated argmax.
pub fn calibrated_predict(
    scores: &ClassScores,
    protocol: &SplitProtocol,
    mode: EvalMode,
    calib: &CalibrationConfig,
) -> Result<PredictionSet> {
    let s = calibrated_argmax(&scores.classes, &scores.spatial, protocol, mode, calib.gamma_s)?;
    let t = calibrated_argmax(&scores.classes, &scores.temporal, protocol, mode, calib.gamma_t)?;
    Ok(PredictionSet::pair(s, t))
}

/// Single prediction from the sum of calibrated stream scores.
pub fn fused_predict(
    scores: &ClassScores,
    protocol: &SplitProtocol,
    mode: EvalMode,
    calib: &CalibrationConfig,
) -> Result<PredictionSet> {
    let fused: Vec<f64> = scores
        .classes
        .iter()
        .zip(scores.spatial.iter().zip(&scores.temporal))
        .map(|(&c, (s, t))| {
            if protocol.is_seen(c) && mode == EvalMode::Gzsl {
                (s - calib.gamma_s) + (t - calib.gamma_t)
            } else {
                s + t
            }
        })
        .collect();
    calibrated_argmax(&scores.classes, &fused, protocol, mode, 0.0).map(PredictionSet::single)
}

/// Fraction of samples whose label lies in its prediction set.
pub fn top1_accuracy(predictions: &[PredictionSet], labels: &[ClassId]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Input("accuracy over zero samples".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, &y)| p.contains(y)).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `2SU / (S + U)`, zero when both are zero.
pub fn harmonic_mean(seen: f64, unseen: f64) -> f64 {
    if seen + unseen == 0.0 {
        0.0
    } else {
        2.0 * seen * unseen / (seen + unseen)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: EvalMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seen: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub harmonic: Option<f64>,
    pub n_samples: usize,
    pub protocol: SplitProtocol,
    pub calib: CalibrationConfig,
    pub strict: bool,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
        writeln!(f, "mode     {}{}", self.mode, if self.strict { " (strict)" } else { "" })?;
        writeln!(f, "samples  {}", self.n_samples)?;
        writeln!(f, "gamma    s={} t={}", self.calib.gamma_s, self.calib.gamma_t)?;
        match self.mode {
            EvalMode::Zsl => writeln!(f, "Acc      {}", pct(self.acc)),
            EvalMode::Gzsl => {
                writeln!(f, "S        {}", pct(self.seen))?;
                writeln!(f, "U        {}", pct(self.unseen))?;
                writeln!(f, "H        {}", pct(self.harmonic))
            }
        }
    }
}

/// Evaluation settings beyond the protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub calib: CalibrationConfig,
    /// Use the fused single prediction instead of the two-element set.
    pub strict: bool,
}

/// Metrics from precomputed scores. In ZSL only unseen-labelled samples
/// count; in GZSL seen and unseen samples give S and U.
pub fn report_from_scores(
    scores: &[ClassScores],
    labels: &[ClassId],
    protocol: &SplitProtocol,
    opts: &EvalOptions,
) -> Result<Report> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    opts.calib.validate()?;
    if let Some(y) = labels.iter().find(|&&y| !protocol.contains(y)) {
        return Err(Error::Protocol(format!("label {y} is outside the protocol")));
    }
    let predict = |s: &ClassScores| {
        if opts.strict {
            fused_predict(s, protocol, opts.mode, &opts.calib)
        } else {
            calibrated_predict(s, protocol, opts.mode, &opts.calib)
        }
    };
    let accuracy_over = |want_seen: bool| -> Result<(f64, usize)> {
        let mut preds = Vec::new();
        let mut ys = Vec::new();
        for (s, &y) in scores.iter().zip(labels) {
            if protocol.is_seen(y) == want_seen {
                preds.push(predict(s)?);
                ys.push(y);
            }
        }
        if ys.is_empty() {
            let which = if want_seen { "seen" } else { "unseen" };
            return Err(Error::Input(format!("no {which} test samples")));
        }
        Ok((top1_accuracy(&preds, &ys)?, ys.len()))
    };
    let mut report = Report {
        mode: opts.mode,
        acc: None,
        seen: None,
        unseen: None,
        harmonic: None,
        n_samples: 0,
        protocol: protocol.clone(),
        calib: opts.calib,
        strict: opts.strict,
    };
    match opts.mode {
        EvalMode::Zsl => {
            let (acc, n) = accuracy_over(false)?;
            report.acc = Some(acc);
            report.n_samples = n;
        }
        EvalMode::Gzsl => {
            let (s, ns) = accuracy_over(true)?;
            let (u, nu) = accuracy_over(false)?;
            report.seen = Some(s);
            report.unseen = Some(u);
            report.harmonic = Some(harmonic_mean(s, u));
            report.n_samples = ns + nu;
        }
    }
    Ok(report)
}

/// Scores the relevant samples and computes the report.
pub fn evaluate(
    model: &Neuron,
    store: &ParamStore<f32>,
    samples: &[Sample],
    bank: &SemanticBank,
    protocol: &SplitProtocol,
    opts: &EvalOptions,
) -> Result<Report> {
    if let Some(s) = samples.iter().find(|s| !protocol.contains(s.label())) {
        return Err(Error::Protocol(format!("label {} is outside the protocol", s.label())));
    }
    let used: Vec<Sample> = match opts.mode {
        EvalMode::Zsl => samples
            .iter()
            .filter(|s| !protocol.is_seen(s.label()))
            .cloned()
            .collect(),
        EvalMode::Gzsl => samples.to_vec(),
    };
    let scores = score_samples(model, store, &used, bank, protocol, opts.mode)?;
    let labels: Vec<ClassId> = used.iter().map(Sample::label).collect();
    report_from_scores(&scores, &labels, protocol, opts)
}

/// Number of samples whose `stream` prediction is a seen class.
pub fn seen_prediction_count(
    scores: &[ClassScores],
    protocol: &SplitProtocol,
    stream: Stream,
    gamma: f64,
) -> Result<usize> {
    let mut n = 0;
    for s in scores {
        let c = calibrated_argmax(&s.classes, s.stream(stream), protocol, EvalMode::Gzsl, gamma)?;
        n += usize::from(protocol.is_seen(c));
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<ClassId> {
        v.iter().map(|&i| ClassId(i)).collect()
    }

    fn proto() -> SplitProtocol {
        SplitProtocol::new(ids(&[0, 1]), ids(&[2, 3])).unwrap()
    }

    #[test]
    fn protocol_rejects_overlap() {
        assert!(matches!(
            SplitProtocol::new(ids(&[0, 1]), ids(&[1, 2])),
            Err(Error::Protocol(_))
        ));
        let p: std::result::Result<SplitProtocol, _> = serde_json::from_str(r#"{"seen":[1],"unseen":[1]}"#);
        assert!(p.is_err());
        let p: SplitProtocol = serde_json::from_str(r#"{"seen":[3,1],"unseen":[2]}"#).unwrap();
        assert_eq!(p.seen(), ids(&[1, 3]));
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"seen":[1,3],"unseen":[2]}"#);
    }

    #[test]
    fn null_calibration_is_plain_argmax() {
        let c = ids(&[0, 1, 2, 3]);
        let s = [0.1, 0.9, 0.3, 0.2];
        let calib = CalibrationConfig { gamma_s: 0.0, gamma_t: 0.0 };
        let got = calibrated_argmax(&c, &s, &proto(), EvalMode::Gzsl, calib.gamma_s).unwrap();
        assert_eq!(got, ClassId(1));
    }

    #[test]
    fn penalty_flips_to_unseen() {
        let c = ids(&[0, 2]);
        let s = [0.9, 0.85];
        assert_eq!(calibrated_argmax(&c, &s, &proto(), EvalMode::Gzsl, 0.1).unwrap(), ClassId(2));
        assert_eq!(calibrated_argmax(&c, &s, &proto(), EvalMode::Gzsl, 0.0).unwrap(), ClassId(0));
    }

    #[test]
    fn zsl_excludes_seen_whatever_gamma() {
        let c = ids(&[0, 1, 2, 3]);
        let s = [5.0, 4.0, 0.1, 0.2];
        for gamma in [-10.0, 0.0, 10.0] {
            let got = calibrated_argmax(&c, &s, &proto(), EvalMode::Zsl, gamma).unwrap();
            assert_eq!(got, ClassId(3));
        }
        let only_seen = ids(&[0, 1]);
        assert!(calibrated_argmax(&only_seen, &[1.0, 2.0], &proto(), EvalMode::Zsl, 0.0).is_err());
    }

    #[test]
    fn ties_go_to_lower_id() {
        let c = ids(&[3, 2]);
        assert_eq!(calibrated_argmax(&c, &[1.0, 1.0], &proto(), EvalMode::Gzsl, 0.0).unwrap(), ClassId(2));
    }

    #[test]
    fn prediction_set_and_fusion() {
        let scores = ClassScores {
            classes: ids(&[0, 1, 2, 3]),
            spatial: vec![1.0, 0.0, 0.9, 0.0],
            temporal: vec![0.0, 0.0, 0.5, 0.8],
        };
        let calib = CalibrationConfig { gamma_s: 0.0, gamma_t: 0.0 };
        let set = calibrated_predict(&scores, &proto(), EvalMode::Gzsl, &calib).unwrap();
        assert_eq!(set.members(), &ids(&[0, 3])[..]);
        let fused = fused_predict(&scores, &proto(), EvalMode::Gzsl, &calib).unwrap();
        assert_eq!(fused.members(), &ids(&[2])[..]);
    }

    #[test]
    fn accuracy_counts() {
        let p = |v: &[u32]| PredictionSet(ids(v));
        let labels = ids(&[0, 1, 2, 3]);
        let all = vec![p(&[0]), p(&[1, 2]), p(&[2]), p(&[0, 3])];
        assert_eq!(top1_accuracy(&all, &labels).unwrap(), 1.0);
        let none = vec![p(&[1]), p(&[0]), p(&[3]), p(&[2])];
        assert_eq!(top1_accuracy(&none, &labels).unwrap(), 0.0);
        let three = vec![p(&[0]), p(&[1]), p(&[2]), p(&[2])];
        assert_eq!(top1_accuracy(&three, &labels).unwrap(), 0.75);
        assert!(matches!(top1_accuracy(&three, &labels[..3]), Err(Error::Contract(_))));
    }

    #[test]
    fn harmonic_mean_cases() {
        assert!((harmonic_mean(69.1, 73.8) - 71.4).abs() < 0.05);
        assert!((harmonic_mean(67.6, 59.5) - 63.3).abs() < 0.05);
        assert!((harmonic_mean(0.4, 0.4) - 0.4).abs() < 1e-15);
        assert_eq!(harmonic_mean(0.0, 0.7), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    fn scores_for(labels: &[u32]) -> Vec<ClassScores> {
        // spatial picks the label, temporal always picks class 0
        labels
            .iter()
            .map(|&y| {
                let mut s = vec![0.0; 4];
                s[y as usize] = 1.0;
                ClassScores {
                    classes: ids(&[0, 1, 2, 3]),
                    spatial: s,
                    temporal: vec![1.0, 0.0, 0.0, 0.0],
                }
            })
            .collect()
    }

    #[test]
    fn report_modes_and_swap() {
        let labels = ids(&[0, 1, 2, 3, 3]);
        let scores = scores_for(&[0, 1, 2, 3, 0]);
        let opts = EvalOptions {
            mode: EvalMode::Gzsl,
            calib: CalibrationConfig { gamma_s: 0.0, gamma_t: 0.0 },
            strict: false,
        };
        let r = report_from_scores(&scores, &labels, &proto(), &opts).unwrap();
        assert_eq!(r.seen, Some(1.0));
        assert!((r.unseen.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.n_samples, 5);
        let sw = report_from_scores(&scores, &labels, &proto().swapped(), &opts).unwrap();
        assert_eq!(sw.seen, r.unseen);
        assert_eq!(sw.unseen, r.seen);

        let zsl = EvalOptions {
            mode: EvalMode::Zsl,
            ..opts
        };
        let z = report_from_scores(&scores, &labels, &proto(), &zsl).unwrap();
        assert_eq!(z.n_samples, 3);
        assert!(z.harmonic.is_none());
        let json = serde_json::to_value(&z).unwrap();
        assert!(json.get("seen").is_none());
        assert_eq!(json["mode"], "zsl");
    }

    #[test]
    fn report_rejects_foreign_labels() {
        let opts = EvalOptions {
            mode: EvalMode::Gzsl,
            calib: CalibrationConfig::default(),
            strict: false,
        };
        let err = report_from_scores(&scores_for(&[0]), &ids(&[7]), &proto(), &opts);
        assert!(matches!(err, Err(Error::Protocol(_))));
    }

    #[test]
    fn calibration_monotone_on_fixed_scores() {
        let scores: Vec<ClassScores> = (0..20)
            .map(|i| {
                let x = i as f64 * 0.37;
                ClassScores {
                    classes: ids(&[0, 1, 2, 3]),
                    spatial: vec![x.sin(), (2.0 * x).cos(), (3.0 * x).sin(), 0.1 * x.cos()],
                    temporal: vec![0.0; 4],
                }
            })
            .collect();
        let mut last = usize::MAX;
        for gamma in [0.0, 0.05, 0.1, 0.2, 0.5, 2.0] {
            let n = seen_prediction_count(&scores, &proto(), Stream::Spatial, gamma).unwrap();
            assert!(n <= last);
            last = n;
        }
        assert_eq!(last, 0);
    }
}
