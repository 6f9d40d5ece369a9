//! Per-step wall time of each estimator as the cluster count grows.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use gmvae::data::batches;
use gmvae::data::synth::{synth_gmm, SynthParams};
use gmvae::param::backward;
use gmvae::rng::RngStream;
use gmvae::tape::Tape;
use gmvae::training::trainer::streams;
use gmvae::training::{adam_step, objective, AdamState, Estimator};
use gmvae::{Gmvae, Tensor};

use crate::config::{BenchConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{bench_csv, BenchRow, Staged};
use crate::commands::BENCH_FILE;

const LEARNING_RATE: f64 = 1e-3;

/// Median (mean of the middle pair for even counts) and nearest-rank p10/p90.
pub fn percentiles(samples: &[f64]) -> (f64, f64, f64) {
    assert!(!samples.is_empty());
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let rank = |p: f64| s[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    (median, rank(0.1), rank(0.9))
}

/// Times `warmup + timed` optimizer steps of one (estimator, K) cell.
pub fn time_cell(bench: &BenchConfig, estimator: Estimator, k: usize) -> CliResult<BenchRow> {
    let cfg = bench.model_config(k);
    let mut model = Gmvae::new(cfg, &mut RngStream::derive(bench.seed, streams::INIT, k as u64))
        .map_err(|e| CliError::Config(format!("bench: {e}")))?;
    let data = synth_gmm(&SynthParams {
        k: 4,
        n_per_cluster: bench.batch_size * 4,
        d: bench.x_dim,
        separation: 10.0,
        sigma: 1.0,
        seed: bench.seed,
    })
    .map_err(|e| CliError::data("bench data", e))?
    .dataset;
    let mut shuffle = RngStream::derive(bench.seed, streams::SHUFFLE, k as u64);
    let mut noise = RngStream::derive(bench.seed, streams::TRAIN_NOISE, k as u64);
    let blocks: Vec<Tensor> = batches(data.len(), bench.batch_size, true, &mut shuffle)
        .into_iter()
        .filter(|b| b.len() == bench.batch_size)
        .map(|b| data.rows(&b))
        .collect();
    let mut adam = AdamState::new(model.params());
    let mut times = Vec::with_capacity(bench.timed_steps);
    for step in 0..bench.warmup_steps + bench.timed_steps {
        let x = blocks[step % blocks.len()].clone();
        let start = Instant::now();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let xv = tape.constant(x);
        let terms = objective(estimator, &model, &mut tape, &b, xv, &mut noise, 1.0, false)
            .map_err(|e| CliError::runtime("bench step", e))?;
        backward(tape, terms.loss, model.params_mut(), &b).map_err(|e| CliError::runtime("bench step", e))?;
        adam_step(model.params_mut(), &mut adam, LEARNING_RATE);
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if step >= bench.warmup_steps {
            times.push(ms);
        }
    }
    let (median_ms, p10_ms, p90_ms) = percentiles(&times);
    Ok(BenchRow {
        estimator,
        k,
        median_ms,
        p10_ms,
        p90_ms,
        steps: times.len(),
    })
}

/// Runs every cell sequentially and writes the CSV.
pub fn cmd_bench(cfg: &RunConfig, out: &Path, log: &mut dyn Write) -> CliResult<Vec<BenchRow>> {
    let bench = &cfg.bench;
    bench.validate()?;
    let mut rows = Vec::new();
    for &estimator in &bench.estimators {
        for &k in &bench.ks {
            let row = time_cell(bench, estimator, k)?;
            let _ = writeln!(
                log,
                "{:<8}  K {:>3}  median {:>9.3} ms  p10 {:>9.3} ms  p90 {:>9.3} ms  ({} steps)",
                row.estimator.name(),
                row.k,
                row.median_ms,
                row.p10_ms,
                row.p90_ms,
                row.steps
            );
            rows.push(row);
        }
    }
    let mut staged = Staged::new(out)?;
    staged.add(BENCH_FILE, bench_csv(&rows).as_bytes())?;
    staged.commit()?;
    Ok(rows)
}
