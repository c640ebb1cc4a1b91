//! Stream recurrences against scripted loop oracles, and end-to-end wiring
//! of the encoder, banks and training loop.

use neuron_core::alignment::{sample_loss, train, TrainConfig};
use neuron_core::autodiff::{Graph, ParamStore};
use neuron_core::diagnostics::{batch_loss, toy_batch, toy_config};
use neuron_core::model::{ModelConfig, Neuron, Sample};
use neuron_core::nn::Refiner;
use neuron_core::semantics::{load_bank, save_bank, synth_bank_with_phases};
use neuron_core::spatial::{run_spatial, PhaseSchedule};
use neuron_core::synth::{generate, SynthSpec};
use neuron_core::temporal::{run_temporal, GateSet, MemoryMode};
use neuron_core::{ClassId, Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Matrix = Vec<Vec<f64>>;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn tensor(m: &Matrix) -> Tensor<f64> {
    Tensor::from_rows(m).unwrap()
}

fn product(a: &Matrix, b: &Matrix) -> Matrix {
    (0..a.len())
        .map(|i| (0..b[0].len()).map(|j| (0..b.len()).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

fn transposed(a: &Matrix) -> Matrix {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn assert_close(got: &Tensor<f64>, want: &Matrix) {
    let flat: Vec<f64> = want.iter().flatten().copied().collect();
    assert_eq!(got.len(), flat.len());
    for (a, b) in got.data().iter().zip(&flat) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn spatial_phases_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (v, c, n) = (5, 4, 6);
    let f_s = random_matrix(v, c, &mut rng);
    let p0 = random_matrix(c, n, &mut rng);
    let schedule = PhaseSchedule::new(vec![0.2, 0.5, 1.0]).unwrap();

    let mut want = Vec::new();
    let mut p = p0.clone();
    for &alpha in schedule.alphas() {
        let k = ((alpha * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        let h: Matrix = product(&f_s, &p).iter().map(|row| softmax(row)).collect();
        let masked: Matrix = h
            .iter()
            .map(|row| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
                let mut out = vec![0.0; n];
                for &i in &idx[..k] {
                    out[i] = row[i];
                }
                out
            })
            .collect();
        p = product(&transposed(&f_s), &masked);
        want.push(p.clone());
    }

    let mut g = Graph::<f64>::new();
    let fv = g.constant(tensor(&f_s));
    let pv = g.constant(tensor(&p0));
    let refiners = vec![&Refiner::Identity; 3];
    let got = run_spatial(&mut g, fv, pv, &schedule, &refiners).unwrap();
    for (e, w) in got.iter().zip(&want) {
        assert_close(g.value(*e), w);
    }
}

#[test]
fn temporal_phases_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (t, c, n) = (6, 3, 4);
    let f_t = random_matrix(t, c, &mut rng);
    let p0 = random_matrix(c, n, &mut rng);
    let gates = GateSet {
        recall: Refiner::Identity,
        remember: Refiner::Identity,
        refine: Refiner::Identity,
    };

    for mode in [MemoryMode::Gated, MemoryMode::Ungated] {
        let mut want = Vec::new();
        let mut p = p0.clone();
        for seg in f_t.chunks(t / 3) {
            let seg: Matrix = seg.to_vec();
            let logits = product(&seg, &p);
            let h: Matrix = transposed(&transposed(&logits).iter().map(|col| softmax(col)).collect());
            let p_hat = product(&transposed(&seg), &h);
            p = match mode {
                MemoryMode::Ungated => p_hat,
                MemoryMode::Gated => (0..c)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                let x = p_hat[i][j];
                                sigmoid(x) * p[i][j] + sigmoid(x) * x
                            })
                            .collect()
                    })
                    .collect(),
            };
            want.push(p.clone());
        }

        let mut g = Graph::<f64>::new();
        let fv = g.constant(tensor(&f_t));
        let pv = g.constant(tensor(&p0));
        let got = run_temporal(&mut g, fv, pv, &[&gates, &gates, &gates], mode).unwrap();
        for (e, w) in got.iter().zip(&want) {
            assert_close(g.value(*e), w);
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let batch = toy_batch(0).unwrap();
    let mut g = Graph::with_store(&batch.params);
    let loss = batch_loss(&mut g, &batch).unwrap();
    let grads = g.backward(loss).unwrap();
    for (name, t) in grads.iter() {
        let norm: f64 = t.data().iter().map(|x| x * x).sum();
        assert!(norm > 0.0, "{name} has zero gradient");
    }
    assert!(grads.iter().any(|(n, _)| n.starts_with("encoder.lift.")));
    assert!(grads.iter().any(|(n, _)| n.starts_with("encoder.mlp.")));
}

#[test]
fn two_phase_bank_round_trips_and_trains() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.json");
    let bank = synth_bank_with_phases(4, 2, 3, 2, 9).unwrap();
    save_bank(&path, &bank).unwrap();
    let bank = load_bank(&path).unwrap();
    assert_eq!(bank.phases(), 2);

    let mut config = toy_config();
    config.phases = 2;
    config.alphas = PhaseSchedule::default_for(2);
    config.encoder.t_hat = 2;
    let model = Neuron::new(config).unwrap();
    let store: ParamStore<f64> = model.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let sample = toy_batch(0).unwrap().samples[0].clone();
    let seen = [ClassId(0), ClassId(1), ClassId(2)];
    let mut g = Graph::with_store(&store);
    let loss = sample_loss(&mut g, &model, &sample, &bank, &seen).unwrap();
    assert!(g.value(loss).data()[0].is_finite());

    let three = synth_bank_with_phases(4, 2, 3, 3, 9).unwrap();
    let mut g = Graph::with_store(&store);
    assert!(matches!(
        sample_loss(&mut g, &model, &sample, &three, &seen),
        Err(Error::Config(_))
    ));
}

#[test]
fn training_reduces_loss_on_synthetic_data() {
    let data = generate(&SynthSpec {
        samples_per_class: 8,
        ..SynthSpec::default()
    })
    .unwrap();
    let model = Neuron::new(ModelConfig::default()).unwrap();
    let seen: Vec<ClassId> = data.protocol.seen().into_iter().collect();
    let samples: Vec<Sample> = data.train.iter().cloned().map(Sample::Skeleton).collect();
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (store, report) = train(&model, &samples, &data.bank, &seen, &cfg).unwrap();
    assert_eq!(report.epoch_losses.len(), 4);
    assert!(report.epoch_losses[3] < report.epoch_losses[0], "{:?}", report.epoch_losses);
    assert!(store.iter().all(|(_, t)| t.is_finite()));
}
