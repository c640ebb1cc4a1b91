//! Run configuration: defaults, then a JSON file, then command-line flags.

use std::path::Path;

use clap::Args;
use neuron_core::alignment::TrainConfig;
use neuron_core::eval::CalibrationConfig;
use neuron_core::model::ModelConfig;
use neuron_core::spatial::PhaseSchedule;
use neuron_core::synth::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run depends on. The top-level seed overrides the seeds of
/// the data generator and the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub calib: CalibrationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            calib: CalibrationConfig::default(),
        }
    }
}

/// Flags that override configuration fields.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Global seed; falls back to NEURON_SEED, then the file.
    #[arg(long, global = true, env = "NEURON_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub spatial_attributes: Option<usize>,
    #[arg(long, global = true)]
    pub temporal_attributes: Option<usize>,
    /// Phase count; resets alphas to the default schedule unless --alphas
    /// is also given.
    #[arg(long, global = true)]
    pub phases: Option<usize>,
    /// Comma-separated top-k ratios, one per phase.
    #[arg(long, global = true, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    #[arg(long, global = true)]
    pub t_hat: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub weight_decay: Option<f64>,
    #[arg(long, global = true)]
    pub num_classes: Option<usize>,
    #[arg(long, global = true)]
    pub samples_per_class: Option<usize>,
    #[arg(long, global = true)]
    pub noise_std: Option<f64>,
    #[arg(long, global = true)]
    pub gamma_s: Option<f64>,
    #[arg(long, global = true)]
    pub gamma_t: Option<f64>,
}

/// Resolved configuration plus the `field=value` overrides applied on top
/// of the file.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub overrides: Vec<String>,
}

fn read_file(path: &Path) -> Result<RunConfig, CliError> {
    Ok(neuron_core::io::read_json(path)?)
}

impl Overrides {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let mut c = match &self.config {
            Some(p) => read_file(p)?,
            None => RunConfig::default(),
        };
        let mut log = Vec::new();
        macro_rules! set {
            ($flag:ident, $field:expr, $name:literal) => {
                if let Some(v) = self.$flag.clone() {
                    log.push(format!("{}={:?}", $name, v));
                    $field = v;
                }
            };
        }
        set!(seed, c.seed, "seed");
        set!(spatial_attributes, c.model.spatial_attributes, "model.spatial_attributes");
        set!(temporal_attributes, c.model.temporal_attributes, "model.temporal_attributes");
        if let Some(p) = self.phases {
            log.push(format!("model.phases={p}"));
            c.model.phases = p;
            c.synth.phases = p;
            c.model.alphas = PhaseSchedule::default_for(p);
        }
        if let Some(a) = &self.alphas {
            log.push(format!("model.alphas={a:?}"));
            c.model.alphas = PhaseSchedule::new(a.clone()).map_err(CliError::usage)?;
        }
        set!(channels, c.model.encoder.channels, "model.encoder.channels");
        set!(t_hat, c.model.encoder.t_hat, "model.encoder.t_hat");
        set!(epochs, c.train.epochs, "train.epochs");
        set!(lr, c.train.lr, "train.lr");
        set!(batch_size, c.train.batch_size, "train.batch_size");
        set!(weight_decay, c.train.weight_decay, "train.weight_decay");
        set!(num_classes, c.synth.num_classes, "synth.num_classes");
        set!(samples_per_class, c.synth.samples_per_class, "synth.samples_per_class");
        set!(noise_std, c.synth.noise_std, "synth.noise_std");
        set!(gamma_s, c.calib.gamma_s, "calib.gamma_s");
        set!(gamma_t, c.calib.gamma_t, "calib.gamma_t");
        c.synth.seed = c.seed;
        c.train.seed = c.seed;
        c.synth.frames = c.model.encoder.frames;
        c.synth.joints = c.model.encoder.joints;
        c.synth.persons = c.model.encoder.persons;
        c.synth.embed_dim = c.model.embed_dim;
        c.synth.phases = c.model.phases;
        c.validate()?;
        Ok(Resolved {
            config: c,
            overrides: log,
        })
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(CliError::usage)?;
        self.train.validate().map_err(CliError::usage)?;
        self.synth.validate().map_err(CliError::usage)?;
        self.calib.validate().map_err(CliError::usage)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 5, "train": {"epochs": 7, "lr": 0.5}}"#).unwrap();
        let o = Overrides {
            config: Some(path),
            epochs: Some(2),
            ..Overrides::default()
        };
        let r = o.resolve().unwrap();
        assert_eq!(r.config.train.epochs, 2);
        assert_eq!(r.config.train.lr, 0.5);
        assert_eq!(r.config.seed, 5);
        assert_eq!(r.config.train.seed, 5);
        assert_eq!(r.config.synth.seed, 5);
        assert_eq!(r.config.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(r.overrides, vec!["train.epochs=2".to_string()]);
    }

    #[test]
    fn unknown_file_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"sed": 5}"#).unwrap();
        let o = Overrides {
            config: Some(path),
            ..Overrides::default()
        };
        assert!(matches!(o.resolve(), Err(CliError::File(_))));
    }

    #[test]
    fn phases_override_resets_alphas() {
        let o = Overrides {
            phases: Some(2),
            t_hat: Some(12),
            ..Overrides::default()
        };
        let r = o.resolve().unwrap();
        assert_eq!(r.config.model.alphas.len(), 2);
        assert_eq!(r.config.synth.phases, 2);
    }

    #[test]
    fn invalid_value_is_usage_error() {
        let o = Overrides {
            alphas: Some(vec![0.9, 0.1, 0.5]),
            ..Overrides::default()
        };
        assert!(matches!(o.resolve(), Err(CliError::Usage(_))));
    }
}
