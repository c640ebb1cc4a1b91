//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use neuron_core::alignment::{sample_loss, train, TrainConfig};
use neuron_core::autodiff::{Graph, ParamStore};
use neuron_core::checkpoint::{save_checkpoint, Checkpoint};
use neuron_core::diagnostics::{full_gradcheck, retention_probe, GRADCHECK_STEP};
use neuron_core::eval::{
    evaluate, harmonic_mean, score_samples, seen_prediction_count, CalibrationConfig, EvalMode,
    EvalOptions, Report,
};
use neuron_core::model::{ModelConfig, Neuron, Sample};
use neuron_core::spatial::{retained_count, topk_mask_values, topk_support};
use neuron_core::synth::{generate, SynthData, SynthSpec};
use neuron_core::{ClassId, Stream, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let r = full_gradcheck(0, GRADCHECK_STEP).expect("gradcheck runs");
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r.max_rel_error < 1e-5 && secs < 60.0,
        format!(
            "max relative error {:.3e} over {} coordinates (worst {:?}), {secs:.2}s",
            r.max_rel_error, r.coordinates, r.worst
        ),
    )
}

fn metric_arithmetic() -> Outcome {
    let a = 100.0 * harmonic_mean(0.691, 0.738);
    let b = 100.0 * harmonic_mean(0.676, 0.595);
    outcome(
        (a - 71.4).abs() <= 0.05 && (b - 63.3).abs() <= 0.05,
        format!("H(69.1, 73.8) = {a:.3}, H(67.6, 59.5) = {b:.3}"),
    )
}

fn uniform_logit_loss() -> Outcome {
    let data = generate(&SynthSpec {
        samples_per_class: 2,
        ..SynthSpec::default()
    })
    .expect("synthetic data");
    let model = Neuron::new(ModelConfig::default()).expect("model");
    let mut store: ParamStore<f64> = model
        .init_params(&mut ChaCha8Rng::seed_from_u64(0))
        .expect("params");
    for (name, t) in store.iter_mut() {
        if name.starts_with("head.") {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let seen: Vec<ClassId> = data.protocol.seen().into_iter().collect();
    let sample = Sample::Skeleton(data.train[0].clone());
    let mut g = Graph::with_store(&store);
    let loss = sample_loss(&mut g, &model, &sample, &data.bank, &seen).expect("loss");
    let value = g.value(loss).data()[0];
    let expect = 6.0 * 8f64.ln();
    outcome(
        seen.len() == 8 && (value - expect).abs() < 1e-6,
        format!("|Y^s| = {}, loss {value:.9} vs 6·ln 8 = {expect:.9}", seen.len()),
    )
}

fn masking_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    for row in 0..1000 {
        let n = rng.random_range(1..=40);
        // Coarse values make ties common.
        let values: Vec<f64> = (0..n).map(|_| (rng.random_range(0..12) as f64) / 11.0).collect();
        let h = Tensor::new(vec![1, n], values.clone()).expect("row");
        let a1: f64 = rng.random_range(0.0..=1.0);
        let a2: f64 = rng.random_range(a1..=1.0);
        let masked = topk_mask_values(&h, a1).expect("mask");
        let support = topk_support(&h, a1).expect("support");
        let k = retained_count(a1, n);
        let nonzero = support.data().iter().filter(|&&m| m > 0.0).count();
        if nonzero != k || k != ((a1 * n as f64).ceil() as usize).clamp(1, n) {
            failures.push(format!("row {row}: {nonzero} kept, want {k}"));
        }
        for i in 0..n {
            let kept = support.data()[i] > 0.0;
            let want = if kept { values[i] } else { 0.0 };
            if masked.data()[i].to_bits() != want.to_bits() {
                failures.push(format!("row {row}: value {i} altered"));
            }
        }
        if topk_mask_values(&masked, a1).expect("mask twice") != masked {
            failures.push(format!("row {row}: not idempotent"));
        }
        let wider = topk_support(&h, a2).expect("support");
        if support.data().iter().zip(wider.data()).any(|(&s, &w)| s > 0.0 && w == 0.0) {
            failures.push(format!("row {row}: support at α={a1:.3} not within α={a2:.3}"));
        }
    }
    let detail = match failures.first() {
        Some(f) => format!("{} violations, first: {f}", failures.len()),
        None => "1000 rows: counts, values, idempotence, monotonicity".into(),
    };
    outcome(failures.is_empty(), detail)
}

fn memory_retention() -> Outcome {
    let config = ModelConfig::default();
    let mut wins = 0;
    for seed in 0..100 {
        let r = retention_probe(&config, seed).expect("probe");
        wins += usize::from(r.gated_retains_more());
    }
    outcome(wins >= 95, format!("gated > ungated on {wins}/100 seeds"))
}

struct TransferRun {
    data: SynthData,
    model: Neuron,
    store: ParamStore<f32>,
    zsl: Report,
    gzsl: Report,
    epoch_losses: Vec<f64>,
}

fn samples(xs: &[neuron_core::encoder::SkeletonSequence]) -> Vec<Sample> {
    xs.iter().cloned().map(Sample::Skeleton).collect()
}

fn transfer_run(seed: u64) -> TransferRun {
    let data = generate(&SynthSpec {
        seed,
        ..SynthSpec::default()
    })
    .expect("synthetic data");
    let model = Neuron::new(ModelConfig::default()).expect("model");
    let seen: Vec<ClassId> = data.protocol.seen().into_iter().collect();
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let (store, report) = train(&model, &samples(&data.train), &data.bank, &seen, &cfg).expect("train");
    let test = samples(&data.test);
    let opts = |mode| EvalOptions {
        mode,
        calib: CalibrationConfig::default(),
        strict: false,
    };
    let zsl = evaluate(&model, &store, &test, &data.bank, &data.protocol, &opts(EvalMode::Zsl)).expect("zsl");
    let gzsl = evaluate(&model, &store, &test, &data.bank, &data.protocol, &opts(EvalMode::Gzsl)).expect("gzsl");
    TransferRun {
        data,
        model,
        store,
        zsl,
        gzsl,
        epoch_losses: report.epoch_losses,
    }
}

fn synthetic_transfer() -> (Outcome, Vec<TransferRun>, Duration) {
    let start = Instant::now();
    let mut runs = Vec::new();
    let mut good = 0;
    let mut lines = Vec::new();
    for seed in 0..10 {
        let run = transfer_run(seed);
        let acc = run.zsl.acc.unwrap_or(0.0);
        let h = run.gzsl.harmonic.unwrap_or(0.0);
        good += usize::from(acc >= 0.70 && h >= 0.60);
        lines.push(format!("{seed}:{acc:.2}/{h:.2}"));
        runs.push(run);
    }
    let elapsed = start.elapsed();
    let o = outcome(
        good >= 8 && elapsed < Duration::from_secs(600),
        format!(
            "{good}/10 seeds with ZSL Acc ≥ 0.70 and H ≥ 0.60 [seed:Acc/H {}], {:.0}s",
            lines.join(" "),
            elapsed.as_secs_f64()
        ),
    );
    (o, runs, elapsed)
}

fn calibration_monotonicity(run: &TransferRun) -> Outcome {
    let test = samples(&run.data.test);
    let scores = score_samples(&run.model, &run.store, &test, &run.data.bank, &run.data.protocol, EvalMode::Gzsl)
        .expect("scores");
    let counts: Vec<usize> = [0.0, 0.05, 0.1, 0.2]
        .iter()
        .map(|&g| seen_prediction_count(&scores, &run.data.protocol, Stream::Spatial, g).expect("count"))
        .collect();
    outcome(
        counts.windows(2).all(|w| w[1] <= w[0]),
        format!("seen predictions at γ_s = 0, 0.05, 0.1, 0.2: {counts:?}"),
    )
}

fn artifact_bytes(seed: u64) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let data = generate(&SynthSpec {
        seed,
        samples_per_class: 10,
        ..SynthSpec::default()
    })
    .expect("synthetic data");
    let model_cfg = ModelConfig::default();
    let model = Neuron::new(model_cfg.clone()).expect("model");
    let seen: Vec<ClassId> = data.protocol.seen().into_iter().collect();
    let train_cfg = TrainConfig {
        seed,
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (store, _) = train(&model, &samples(&data.train), &data.bank, &seen, &train_cfg).expect("train");
    let opts = EvalOptions {
        mode: EvalMode::Gzsl,
        calib: CalibrationConfig::default(),
        strict: false,
    };
    let report = evaluate(&model, &store, &samples(&data.test), &data.bank, &data.protocol, &opts).expect("eval");
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("model.json");
    let ckpt = Checkpoint {
        model: model_cfg,
        train: train_cfg,
        params: store,
    };
    save_checkpoint(&path, &ckpt).expect("save");
    (
        std::fs::read(&path).expect("manifest"),
        std::fs::read(dir.path().join("model.bin")).expect("payload"),
        serde_json::to_vec_pretty(&report).expect("report"),
    )
}

fn determinism() -> Outcome {
    let a = artifact_bytes(3);
    let b = artifact_bytes(3);
    let c = artifact_bytes(4);
    outcome(
        a == b && a.1 != c.1,
        format!(
            "checkpoint {} + {} bytes and report {} bytes identical across reruns; different seed differs: {}",
            a.0.len(),
            a.1.len(),
            a.2.len(),
            a.1 != c.1
        ),
    )
}

fn report(name: &str, o: &Outcome, failed: &mut usize) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{tag} {name}: {}", o.detail);
    *failed += usize::from(!o.pass);
}

fn main() -> ExitCode {
    let mut failed = 0;
    report("gradient-fidelity", &gradient_fidelity(), &mut failed);
    report("metric-arithmetic", &metric_arithmetic(), &mut failed);
    report("uniform-logit-loss", &uniform_logit_loss(), &mut failed);
    report("masking-suite", &masking_suite(), &mut failed);
    report("memory-retention", &memory_retention(), &mut failed);
    let (transfer, runs, _) = synthetic_transfer();
    report("synthetic-transfer", &transfer, &mut failed);
    report("calibration-monotonicity", &calibration_monotonicity(&runs[0]), &mut failed);
    report("determinism", &determinism(), &mut failed);

    let steady = runs
        .iter()
        .filter(|r| r.epoch_losses.iter().take(5).collect::<Vec<_>>().windows(2).all(|w| w[1] <= w[0]))
        .count();
    println!("INFO loss nonincreasing over the first 5 epochs on {steady}/10 seeds");

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
