use std::io::Write;
use std::path::{Path, PathBuf};

use gmvae::checkpoint;
use gmvae::data::synth::synth_gmm;
use gmvae::rng::RngStream;
use gmvae::training::trainer::streams;
use gmvae::training::{evaluate, train, EpochRecord, TrainReport};
use gmvae::Gmvae;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{metrics_csv, EvalReport, Staged};

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const EVAL_FILE: &str = "eval.json";
pub const BENCH_FILE: &str = "bench.csv";
pub const DATASET_FILE: &str = "dataset.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Replaces every seed the command consumes.
pub fn override_seed(cfg: &mut RunConfig, seed: u64, generating: bool) {
    cfg.train.seed = seed;
    cfg.bench.seed = seed;
    if generating {
        if let DataSource::Synthetic(p) = &mut cfg.data {
            p.seed = seed;
        }
    }
}

pub fn epoch_line(r: &EpochRecord) -> String {
    format!(
        "epoch {:>3}  step {:>6}  train_loss {:.4}  val_loss {:.4}  w_t {:.4}  kl_y {:.4}  {:.2}s",
        r.epoch, r.step, r.train_loss, r.val_loss, r.w_t, r.kl_y, r.wall_seconds
    )
}

/// Trains on the configured data and writes the report, the per-epoch CSV and
/// the best-validation checkpoint.
pub fn cmd_train(cfg: &RunConfig, out: &Path, log: &mut dyn Write) -> CliResult<(TrainReport, Gmvae)> {
    let data = cfg.load_data()?;
    let model_cfg = cfg.model_config(&data)?;
    let splits = cfg.splits(&data)?;
    let tc = &cfg.train;
    let mut model = Gmvae::new(model_cfg, &mut RngStream::derive(tc.seed, streams::INIT, 0))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut report = train(&mut model, &splits.train, &splits.validation, tc, |r| {
        let _ = writeln!(log, "{}", epoch_line(r));
    })
    .map_err(|e| CliError::runtime("training", e))?;
    let mut noise = RngStream::derive(tc.seed, streams::EVALUATION, 0);
    let metrics = evaluate(&model, &splits.test, tc.eval_z_samples, &mut noise)
        .map_err(|e| CliError::runtime("evaluation", e))?;
    report.final_metrics = Some(metrics);

    let mut staged = Staged::new(out)?;
    staged.add_json(REPORT_FILE, &report)?;
    staged.add(METRICS_FILE, metrics_csv(&report.epochs).as_bytes())?;
    staged.add(CHECKPOINT_FILE, &checkpoint::encode(&model))?;
    staged.commit()?;
    let _ = writeln!(
        log,
        "best epoch {} of {}; wrote {}, {}, {} to {}",
        report.best_epoch,
        report.stopping_epoch,
        REPORT_FILE,
        METRICS_FILE,
        CHECKPOINT_FILE,
        out.display()
    );
    Ok((report, model))
}

/// Evaluates a checkpoint on the configured split.
pub fn cmd_eval(cfg: &RunConfig, out: &Path, log: &mut dyn Write) -> CliResult<EvalReport> {
    let path: PathBuf = cfg.eval.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let model = checkpoint::load(&path)
        .map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
    let data = cfg.load_data()?;
    let expected = cfg.model_config(&data)?;
    let found = model.config();
    if *found != expected {
        return Err(CliError::Checkpoint(format!(
            "{} does not match the configured model: checkpoint has K = {}, x_dim = {}, z_dim = {}; \
             config has K = {}, x_dim = {}, z_dim = {} (all architecture fields must agree)",
            path.display(),
            found.k,
            found.x_dim,
            found.z_dim,
            expected.k,
            expected.x_dim,
            expected.z_dim
        )));
    }
    let splits = cfg.splits(&data)?;
    let subset = splits.get(cfg.eval.split, &data);
    let z_samples = cfg.eval.z_samples.unwrap_or(cfg.train.eval_z_samples);
    let mut noise = RngStream::derive(cfg.train.seed, streams::EVALUATION, 0);
    let metrics =
        evaluate(&model, &subset, z_samples, &mut noise).map_err(|e| CliError::runtime("evaluation", e))?;
    let report = EvalReport {
        split: cfg.eval.split,
        checkpoint: path.display().to_string(),
        metrics,
    };
    let mut staged = Staged::new(out)?;
    staged.add_json(EVAL_FILE, &report)?;
    staged.commit()?;
    let m = &report.metrics;
    let _ = writeln!(
        log,
        "examples {}  reconstruction_ll {:.4}  kl_y {:.4}  usage_entropy {:.4}  purity {}",
        m.examples,
        m.reconstruction_ll,
        m.kl_y,
        m.usage_entropy,
        m.purity.map_or("n/a".to_string(), |p| format!("{p:.4}"))
    );
    Ok(report)
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub params: gmvae::data::synth::SynthParams,
    pub rows: usize,
    pub features: usize,
    /// Raw coordinate mapped to feature value 0.
    pub raw_min: f64,
    /// Raw coordinate mapped to feature value 1.
    pub raw_max: f64,
    pub label_column: bool,
    pub file: String,
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path, log: &mut dyn Write) -> CliResult<Manifest> {
    let DataSource::Synthetic(params) = &cfg.data else {
        return Err(CliError::Config("data: gen-data needs a synthetic source".into()));
    };
    let synth = synth_gmm(params).map_err(|e| CliError::data("data.synthetic", e))?;
    let mut csv = Vec::new();
    synth.dataset.write_csv(&mut csv).map_err(|e| CliError::Runtime(e.to_string()))?;
    let manifest = Manifest {
        generator: "synth_gmm".into(),
        params: params.clone(),
        rows: synth.dataset.len(),
        features: synth.dataset.dim(),
        raw_min: synth.min,
        raw_max: synth.max,
        label_column: true,
        file: DATASET_FILE.into(),
    };
    let mut staged = Staged::new(out)?;
    staged.add(DATASET_FILE, &csv)?;
    staged.add_json(MANIFEST_FILE, &manifest)?;
    staged.commit()?;
    let _ = writeln!(log, "wrote {} rows to {}", manifest.rows, out.join(DATASET_FILE).display());
    Ok(manifest)
}
