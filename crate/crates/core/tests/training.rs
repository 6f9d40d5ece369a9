//! Training-loop contracts: step counts, early stopping, determinism,
//! restoration of the best parameters, and evaluation fixtures.

use gmvae::data::synth::{synth_gmm, SynthParams};
use gmvae::data::Dataset;
use gmvae::rng::{RngStream, ZeroNoise};
use gmvae::training::trainer::{dataset_loss, streams};
use gmvae::training::{evaluate, train, Estimator, KlSchedule, TrainConfig};
use gmvae::{Error, Gmvae, GmvaeConfig, Likelihood, Tensor};

fn binary(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed);
    let t = Tensor::new(vec![n, d], (0..n * d).map(|_| (rng.uniform() < 0.3) as u8 as f64).collect()).unwrap();
    Dataset::new("binary", t, None).unwrap()
}

fn small_model(seed: u64, d: usize) -> Gmvae {
    Gmvae::new(GmvaeConfig::tiny(3, d, 2, 8), &mut RngStream::new(seed)).unwrap()
}

fn config(estimator: Estimator, max_epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        estimator,
        max_epochs,
        batch_size,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn one_epoch_takes_ceil_n_over_batch_steps() {
    for (n, batch) in [(50, 16), (48, 16), (7, 64), (10, 1)] {
        let mut model = small_model(1, 5);
        let report = train(&mut model, &binary(n, 5, 2), &binary(5, 5, 3), &config(Estimator::Concrete, 1, batch), |_| {}).unwrap();
        assert_eq!(report.total_steps as usize, n.div_ceil(batch), "n = {n}, batch = {batch}");
        assert_eq!(report.epochs.len(), 1);
        assert_eq!(report.epochs[0].step, report.total_steps);
        assert!(!report.stopped_early);
    }
}

#[test]
fn patience_one_stops_after_the_first_worse_epoch() {
    // fitting all-zero rows makes all-one rows steadily less likely
    let d = 6;
    let zeros = Dataset::new("zeros", Tensor::zeros(&[64, d]), None).unwrap();
    let ones = Dataset::new("ones", Tensor::full(&[16, d], 1.0), None).unwrap();
    let mut model = small_model(5, d);
    let cfg = TrainConfig {
        patience: 1,
        learning_rate: 1e-2,
        ..config(Estimator::Marginal, 50, 16)
    };
    let report = train(&mut model, &zeros, &ones, &cfg, |_| {}).unwrap();
    assert!(report.epochs[1].val_loss > report.epochs[0].val_loss);
    assert_eq!(report.stopping_epoch, 2);
    assert_eq!(report.best_epoch, 1);
    assert!(report.stopped_early);
}

#[test]
fn same_seed_same_report_and_parameters() {
    for estimator in [Estimator::Concrete, Estimator::Marginal] {
        let run = || {
            let mut model = small_model(8, 5);
            let report = train(&mut model, &binary(40, 5, 2), &binary(10, 5, 3), &config(estimator, 4, 8), |_| {}).unwrap();
            (report.without_timings(), model)
        };
        let (ra, ma) = run();
        let (rb, mb) = run();
        assert_eq!(ra, rb);
        assert_eq!(
            serde_json::to_string(&ra).unwrap(),
            serde_json::to_string(&rb).unwrap()
        );
        for (a, b) in ma.params().iter().zip(mb.params().iter()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value), "{}", a.name);
        }
    }
}

#[test]
fn different_seeds_diverge() {
    let run = |seed| {
        let mut model = small_model(8, 5);
        let cfg = TrainConfig { seed, ..config(Estimator::Concrete, 2, 8) };
        train(&mut model, &binary(40, 5, 2), &binary(10, 5, 3), &cfg, |_| {}).unwrap().without_timings()
    };
    assert_ne!(run(1).epochs, run(2).epochs);
}

#[test]
fn best_parameters_are_restored() {
    let data = synth_gmm(&SynthParams { k: 3, n_per_cluster: 30, d: 6, separation: 10.0, sigma: 1.0, seed: 4 }).unwrap();
    let (tr, va) = data.dataset.split_tail(0.2).unwrap();
    let mut cfg = GmvaeConfig::tiny(3, 6, 2, 8);
    cfg.likelihood = Likelihood::DiagGaussian;
    let mut model = Gmvae::new(cfg, &mut RngStream::new(3)).unwrap();
    let tc = TrainConfig {
        patience: 2,
        learning_rate: 3e-2,
        ..config(Estimator::Concrete, 40, 16)
    };
    let report = train(&mut model, &tr, &va, &tc, |_| {}).unwrap();
    let best = &report.epochs[report.best_epoch - 1];
    let min = report.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(best.val_loss, min);
    let mut noise = RngStream::derive(tc.seed, streams::VALIDATION, report.best_epoch as u64);
    let (loss, _) = dataset_loss(&model, &va, tc.estimator, tc.batch_size, tc.shared_noise, &mut noise).unwrap();
    assert_eq!(loss.to_bits(), best.val_loss.to_bits());
}

#[test]
fn epoch_callback_sees_every_record() {
    let mut seen = Vec::new();
    let mut model = small_model(2, 4);
    let report = train(&mut model, &binary(20, 4, 2), &binary(5, 4, 3), &config(Estimator::Concrete, 3, 8), |r| seen.push(r.clone())).unwrap();
    assert_eq!(seen, report.epochs);
    assert_eq!(seen.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
    // increasing default schedule, sampled at each epoch end
    assert!(seen.windows(2).all(|w| w[0].w_t <= w[1].w_t));
}

#[test]
fn constant_schedule_is_reported_each_epoch() {
    let mut model = small_model(2, 4);
    let cfg = TrainConfig { schedule: KlSchedule::constant(1.0), ..config(Estimator::Marginal, 2, 8) };
    let report = train(&mut model, &binary(20, 4, 2), &binary(5, 4, 3), &cfg, |_| {}).unwrap();
    assert!(report.epochs.iter().all(|r| r.w_t == 1.0));
}

#[test]
fn splits_that_would_be_empty_are_configuration_errors() {
    let one = binary(1, 4, 1);
    assert!(matches!(one.split_tail(0.1), Err(Error::Config(_))));
    assert!(matches!(binary(10, 4, 1).split_tail(0.01), Err(Error::Config(_))));
}

#[test]
fn invalid_config_is_rejected_before_training() {
    let mut model = small_model(1, 4);
    let cfg = TrainConfig { learning_rate: 0.0, ..config(Estimator::Concrete, 1, 4) };
    let err = train(&mut model, &binary(8, 4, 1), &binary(4, 4, 2), &cfg, |_| {}).unwrap_err();
    assert!(err.to_string().contains("learning_rate"), "{err}");
}

/// Sets a named parameter from a row-major closure over (row, col).
fn set(model: &mut Gmvae, name: &str, f: impl Fn(usize, usize) -> f64) {
    let p = model.params_mut().iter_mut().find(|p| p.name == name).unwrap_or_else(|| panic!("{name}"));
    let cols = if p.value.rank() == 2 { p.value.cols() } else { p.value.numel() };
    for (i, v) in p.value.data_mut().iter_mut().enumerate() {
        *v = f(i / cols, i % cols);
    }
}

#[test]
fn perfect_autoencoder_reconstructs_exactly() {
    // identity encoder, z = 100x − 50 with negligible spread, identity decoder:
    // logits are ±50 matching every pixel
    let (d, k) = (5, 2);
    let cfg = GmvaeConfig {
        z_dim: d,
        hidden_shared: d,
        hidden_y: [2, 2],
        hidden_z: [d, d],
        hidden_decoder: vec![],
        ..GmvaeConfig::new(k, d)
    };
    let mut model = Gmvae::zeros(cfg).unwrap();
    let eye = |r: usize, c: usize| (r == c) as u8 as f64;
    set(&mut model, "shared.0.weight", eye);
    set(&mut model, "z_head.0.weight", eye);
    set(&mut model, "z_head.1.weight", eye);
    set(&mut model, "z_head.2.weight", |r, c| if r == c { 100.0 } else { 0.0 });
    set(&mut model, "z_head.2.bias", |_, c| if c < d { -50.0 } else { -20.0 });
    set(&mut model, "decoder.0.weight", eye);
    let data = binary(64, d, 9);
    let m = evaluate(&model, &data, 3, &mut RngStream::new(2)).unwrap();
    assert!(m.reconstruction_ll <= 0.0 && m.reconstruction_ll > -1e-18, "{}", m.reconstruction_ll);
    let pinned = evaluate(&model, &data, 1, &mut ZeroNoise).unwrap();
    assert!(pinned.reconstruction_ll > -1e-18);
}

#[test]
fn aligned_assignments_have_unit_purity() {
    // y-head logits read the first feature: clusters follow the label exactly
    let d = 3;
    let cfg = GmvaeConfig {
        hidden_shared: d,
        hidden_y: [d, d],
        likelihood: Likelihood::DiagGaussian,
        ..GmvaeConfig::tiny(2, d, 1, 2)
    };
    let mut model = Gmvae::zeros(cfg).unwrap();
    let eye = |r: usize, c: usize| (r == c) as u8 as f64;
    set(&mut model, "shared.0.weight", eye);
    set(&mut model, "y_head.0.weight", eye);
    set(&mut model, "y_head.1.weight", eye);
    set(&mut model, "y_head.2.weight", |r, c| if r == 0 && c == 1 { 10.0 } else { 0.0 });
    let mut rng = RngStream::new(6);
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 2) as f64, rng.uniform(), rng.uniform()]).collect();
    let labels = (0..40).map(|i| i % 2).collect();
    let data = Dataset::new("aligned", Tensor::from_rows(&rows).unwrap(), Some(labels)).unwrap();
    let m = evaluate(&model, &data, 1, &mut ZeroNoise).unwrap();
    assert_eq!(m.purity, Some(1.0));
    assert_eq!(m.cluster_counts, vec![20, 20]);
    assert!((m.usage_entropy - 2f64.ln()).abs() < 1e-15);
}
