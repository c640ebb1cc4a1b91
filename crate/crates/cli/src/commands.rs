//! Subcommand bodies. Each returns after writing its outputs and run
//! manifest under the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use neuron_core::alignment::train;
use neuron_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use neuron_core::diagnostics::full_gradcheck;
use neuron_core::encoder::{load_dataset, load_features};
use neuron_core::eval::{evaluate, EvalMode, EvalOptions, Report, SplitProtocol};
use neuron_core::model::{Neuron, Sample};
use neuron_core::semantics::{load_bank, SemanticBank};
use neuron_core::synth::{generate, write_synth};
use neuron_core::ClassId;
use serde::Serialize;

use crate::config::Resolved;
use crate::error::CliError;
use crate::manifest::RunManifest;

/// File names inside a data directory.
pub const TRAIN_FILE: &str = "train.json";
pub const TEST_FILE: &str = "test.json";
pub const BANK_FILE: &str = "bank.json";
pub const PROTOCOL_FILE: &str = "protocol.json";
pub const CHECKPOINT_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.json";

/// Where to read a split, its semantics and its protocol from.
#[derive(Debug, Clone)]
pub struct DataSource {
    pub dir: PathBuf,
    /// Overrides `<dir>/bank.json`.
    pub bank: Option<PathBuf>,
    /// Split files hold precomputed feature maps instead of skeletons.
    pub features: bool,
}

pub struct LoadedSplit {
    pub samples: Vec<Sample>,
    pub bank: SemanticBank,
    pub protocol: SplitProtocol,
}

impl DataSource {
    fn bank_path(&self) -> PathBuf {
        self.bank.clone().unwrap_or_else(|| self.dir.join(BANK_FILE))
    }

    pub fn load(&self, split: &str, phases: usize, manifest: &mut RunManifest) -> Result<LoadedSplit, CliError> {
        let split_path = self.dir.join(split);
        let bank_path = self.bank_path();
        let protocol_path = self.dir.join(PROTOCOL_FILE);
        let samples = if self.features {
            load_features(&split_path, phases)?
                .map(|f| Sample::Features {
                    map: f.map,
                    label: f.label,
                })
                .collect()
        } else {
            load_dataset(&split_path)?.into_iter().map(Sample::Skeleton).collect()
        };
        let bank = load_bank(&bank_path)?;
        let protocol = SplitProtocol::load(&protocol_path)?;
        for p in [&split_path, &bank_path, &protocol_path] {
            manifest.input(p)?;
        }
        Ok(LoadedSplit {
            samples,
            bank,
            protocol,
        })
    }
}

pub fn gen_data(resolved: &Resolved, out: &Path) -> Result<PathBuf, CliError> {
    let data = generate(&resolved.config.synth)?;
    let files = write_synth(out, &data)?;
    println!(
        "wrote {} train and {} test sequences, {} classes ({} seen) to {}",
        data.train.len(),
        data.test.len(),
        data.bank.classes().len(),
        data.protocol.seen().len(),
        out.display()
    );
    log::debug!("{files:?}");
    RunManifest::new("gen-data", resolved).write(out)
}

pub fn train_cmd(resolved: &Resolved, data: Option<&DataSource>, out: &Path) -> Result<PathBuf, CliError> {
    let cfg = &resolved.config;
    let mut manifest = RunManifest::new("train", resolved);
    let split = match data {
        Some(src) => src.load(TRAIN_FILE, cfg.model.phases, &mut manifest)?,
        None => {
            let data = generate(&cfg.synth)?;
            write_synth(&out.join("data"), &data)?;
            LoadedSplit {
                samples: data.train.into_iter().map(Sample::Skeleton).collect(),
                bank: data.bank,
                protocol: data.protocol,
            }
        }
    };
    let model = Neuron::new(cfg.model.clone())?;
    let seen: Vec<ClassId> = split.protocol.seen();
    let start = Instant::now();
    let (params, report) = train(&model, &split.samples, &split.bank, &seen, &cfg.train)?;
    let secs = start.elapsed().as_secs_f64();
    for (e, l) in report.epoch_losses.iter().enumerate() {
        log::info!("epoch {:>3}  loss {l:.6}", e + 1);
    }
    save_checkpoint(
        &out.join(CHECKPOINT_FILE),
        &Checkpoint {
            model: cfg.model.clone(),
            train: cfg.train.clone(),
            params,
        },
    )?;
    neuron_core::io::write_json(&out.join("train_report.json"), &report)?;
    println!(
        "trained {} steps over {} samples in {secs:.1}s; final epoch loss {:.6}",
        report.steps,
        split.samples.len(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    manifest.write(out)
}

pub fn eval_cmd(
    resolved: &Resolved,
    ckpt: &Path,
    data: &DataSource,
    mode: EvalMode,
    strict: bool,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let mut manifest = RunManifest::new("eval", resolved);
    let checkpoint = load_checkpoint(ckpt)?;
    manifest.input(ckpt)?;
    let model = checkpoint.neuron()?;
    let split = data.load(TEST_FILE, model.phases(), &mut manifest)?;
    let opts = EvalOptions {
        mode,
        calib: resolved.config.calib,
        strict,
    };
    let report = evaluate(&model, &checkpoint.params, &split.samples, &split.bank, &split.protocol, &opts)?;
    neuron_core::io::write_json(&out.join(REPORT_FILE), &report)?;
    print!("{report}");
    manifest.write(out)
}

#[derive(Debug, Serialize)]
struct GradcheckOutcome {
    fixture_seed: u64,
    step: f64,
    max_rel_error: f64,
    coordinates: usize,
    worst: Option<(String, usize)>,
    seconds: f64,
    pass: bool,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

pub fn gradcheck_cmd(resolved: &Resolved, fixture_seed: u64, step: f64, out: &Path) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let r = full_gradcheck(fixture_seed, step)?;
    let outcome = GradcheckOutcome {
        fixture_seed,
        step,
        max_rel_error: r.max_rel_error,
        coordinates: r.coordinates,
        worst: r.worst,
        seconds: start.elapsed().as_secs_f64(),
        pass: r.max_rel_error < GRADCHECK_TOLERANCE,
    };
    neuron_core::io::write_json(&out.join("gradcheck.json"), &outcome)?;
    println!(
        "max relative error {:.3e} over {} coordinates ({:.2}s): {}",
        outcome.max_rel_error,
        outcome.coordinates,
        outcome.seconds,
        if outcome.pass { "PASS" } else { "FAIL" }
    );
    let path = RunManifest::new("gradcheck", resolved).write(out)?;
    if outcome.pass {
        Ok(path)
    } else {
        Err(CliError::Check(format!(
            "max relative error {:.3e} ≥ {GRADCHECK_TOLERANCE:e}",
            outcome.max_rel_error
        )))
    }
}

#[derive(Debug, Serialize)]
struct SweepRow {
    spatial_attributes: usize,
    temporal_attributes: usize,
    zsl_acc: f64,
    gzsl_seen: f64,
    gzsl_unseen: f64,
    gzsl_harmonic: f64,
    train_seconds: f64,
}

pub fn sweep_cmd(resolved: &Resolved, grid: &[usize], out: &Path) -> Result<PathBuf, CliError> {
    let cfg = &resolved.config;
    let data = generate(&cfg.synth)?;
    let train_samples: Vec<Sample> = data.train.iter().cloned().map(Sample::Skeleton).collect();
    let test_samples: Vec<Sample> = data.test.iter().cloned().map(Sample::Skeleton).collect();
    let seen = data.protocol.seen();
    let csv_path = out.join("sweep.csv");
    std::fs::create_dir_all(out).map_err(|source| neuron_core::Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let csv_err = |e: csv::Error| {
        CliError::File(neuron_core::Error::Io {
            path: csv_path.clone(),
            source: e.into(),
        })
    };
    let mut writer = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    for &n_s in grid {
        for &n_t in grid {
            let mut model_cfg = cfg.model.clone();
            model_cfg.spatial_attributes = n_s;
            model_cfg.temporal_attributes = n_t;
            let model = Neuron::new(model_cfg)?;
            let start = Instant::now();
            let (params, _) = train(&model, &train_samples, &data.bank, &seen, &cfg.train)?;
            let train_seconds = start.elapsed().as_secs_f64();
            let run = |mode| -> Result<Report, CliError> {
                let opts = EvalOptions {
                    mode,
                    calib: cfg.calib,
                    strict: false,
                };
                Ok(evaluate(&model, &params, &test_samples, &data.bank, &data.protocol, &opts)?)
            };
            let (zsl, gzsl) = (run(EvalMode::Zsl)?, run(EvalMode::Gzsl)?);
            let row = SweepRow {
                spatial_attributes: n_s,
                temporal_attributes: n_t,
                zsl_acc: zsl.acc.unwrap_or(f64::NAN),
                gzsl_seen: gzsl.seen.unwrap_or(f64::NAN),
                gzsl_unseen: gzsl.unseen.unwrap_or(f64::NAN),
                gzsl_harmonic: gzsl.harmonic.unwrap_or(f64::NAN),
                train_seconds,
            };
            println!(
                "N_s={n_s:>3} N_t={n_t:>3}  ZSL {:.3}  S {:.3} U {:.3} H {:.3}  ({train_seconds:.1}s)",
                row.zsl_acc, row.gzsl_seen, row.gzsl_unseen, row.gzsl_harmonic
            );
            writer.serialize(&row).map_err(csv_err)?;
            writer.flush().map_err(|e| csv_err(e.into()))?;
        }
    }
    drop(writer);
    RunManifest::new("sweep", resolved).write(out)
}
