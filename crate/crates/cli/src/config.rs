//! The JSON run configuration shared by every command.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use gmvae::data::idx::{load_idx_images, load_idx_labels};
use gmvae::data::synth::{synth_gmm, SynthParams};
use gmvae::data::{binarize, BinarizeMode, Dataset};
use gmvae::rng::RngStream;
use gmvae::training::TrainConfig;
use gmvae::{GmvaeConfig, Likelihood};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitConfig,
    /// A `GmvaeConfig`; `x_dim` may be omitted and is then taken from the data.
    #[serde(default)]
    pub model: Option<Value>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic(SynthParams),
    Idx(IdxSource),
    Csv(CsvSource),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub images: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Keep only the first `limit` examples.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub binarize: Option<BinarizeConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinarizeConfig {
    #[serde(default = "threshold_mode")]
    pub mode: BinarizeMode,
    #[serde(default = "half")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

fn threshold_mode() -> BinarizeMode {
    BinarizeMode::Threshold
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// Whether the last column holds an integer label.
    #[serde(default = "yes")]
    pub labelled: bool,
}

fn yes() -> bool {
    true
}

/// Test rows are the last `test_fraction` of the data; validation rows are the
/// last `validation_fraction` of what remains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_validation_fraction() -> f64 {
    0.1
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: default_test_fraction(),
            validation_fraction: default_validation_fraction(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSplit {
    Test,
    Validation,
    Train,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Defaults to `checkpoint.bin` in the output directory.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "test_split")]
    pub split: EvalSplit,
    /// Defaults to `train.eval_z_samples`.
    #[serde(default)]
    pub z_samples: Option<usize>,
}

fn test_split() -> EvalSplit {
    EvalSplit::Test
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            checkpoint: None,
            split: EvalSplit::Test,
            z_samples: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "both_estimators")]
    pub estimators: Vec<gmvae::training::Estimator>,
    #[serde(default = "ten")]
    pub warmup_steps: usize,
    #[serde(default = "thirty")]
    pub timed_steps: usize,
    #[serde(default = "sixty_four")]
    pub x_dim: usize,
    #[serde(default = "sixteen")]
    pub z_dim: usize,
    #[serde(default = "sixty_four")]
    pub batch_size: usize,
    /// Network widths; the model defaults apply when absent.
    #[serde(default)]
    pub hidden: Option<BenchWidths>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchWidths {
    pub shared: usize,
    pub head: [usize; 2],
    pub decoder: Vec<usize>,
}

fn default_ks() -> Vec<usize> {
    vec![2, 5, 10, 20, 40]
}

fn both_estimators() -> Vec<gmvae::training::Estimator> {
    vec![gmvae::training::Estimator::Marginal, gmvae::training::Estimator::Concrete]
}

fn ten() -> usize {
    10
}

fn thirty() -> usize {
    30
}

fn sixty_four() -> usize {
    64
}

fn sixteen() -> usize {
    16
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            ks: default_ks(),
            estimators: both_estimators(),
            warmup_steps: 10,
            timed_steps: 30,
            x_dim: 64,
            z_dim: 16,
            batch_size: 64,
            hidden: None,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, why: &str| Err(CliError::Config(format!("bench.{field}: {why}")));
        let mut distinct = self.ks.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return bad("ks", "at least two distinct cluster counts are required");
        }
        if distinct[0] < 1 {
            return bad("ks", "cluster counts must be at least 1");
        }
        if self.estimators.is_empty() {
            return bad("estimators", "list at least one estimator");
        }
        if self.timed_steps < 30 {
            return bad("timed_steps", "at least 30 timed steps are required");
        }
        if self.x_dim < 1 || self.z_dim < 1 || self.batch_size < 1 {
            return bad("x_dim", "x_dim, z_dim and batch_size must be at least 1");
        }
        Ok(())
    }

    pub fn model_config(&self, k: usize) -> GmvaeConfig {
        let mut cfg = GmvaeConfig {
            z_dim: self.z_dim,
            likelihood: Likelihood::DiagGaussian,
            ..GmvaeConfig::new(k, self.x_dim)
        };
        if let Some(h) = &self.hidden {
            cfg.hidden_shared = h.shared;
            cfg.hidden_y = h.head;
            cfg.hidden_z = h.head;
            cfg.hidden_decoder = h.decoder.clone();
        }
        cfg
    }
}

/// The three disjoint row blocks every command agrees on.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn get(&self, which: EvalSplit, all: &Dataset) -> Dataset {
        match which {
            EvalSplit::Train => self.train.clone(),
            EvalSplit::Validation => self.validation.clone(),
            EvalSplit::Test => self.test.clone(),
            EvalSplit::All => all.clone(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let file = File::open(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> CliResult<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load_data(&self) -> CliResult<Dataset> {
        match &self.data {
            DataSource::Synthetic(p) => synth_gmm(p)
                .map(|s| s.dataset)
                .map_err(|e| CliError::data("data.synthetic", e)),
            DataSource::Csv(src) => {
                let file = File::open(&src.path)
                    .map_err(|e| CliError::Data(format!("cannot open {}: {e}", src.path.display())))?;
                let name = src.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Dataset::read_csv(&name, BufReader::new(file), src.labelled)
                    .map_err(|e| CliError::data(&src.path.display().to_string(), e))
            }
            DataSource::Idx(src) => load_idx(src),
        }
    }

    pub fn splits(&self, data: &Dataset) -> CliResult<Splits> {
        let s = self.split;
        let (rest, test) = data
            .split_tail(s.test_fraction)
            .map_err(|e| CliError::Config(format!("split.test_fraction: {e}")))?;
        let (train, validation) = rest
            .split_tail(s.validation_fraction)
            .map_err(|e| CliError::Config(format!("split.validation_fraction: {e}")))?;
        Ok(Splits { train, validation, test })
    }

    /// The model section with `x_dim` filled in from `data`, validated against it.
    pub fn model_config(&self, data: &Dataset) -> CliResult<GmvaeConfig> {
        let mut section = match &self.model {
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(CliError::Config("model: expected an object".into())),
            None => return Err(CliError::Config("model: section is required".into())),
        };
        match section.get("x_dim").and_then(Value::as_u64) {
            Some(d) if d as usize != data.dim() => {
                return Err(CliError::Config(format!(
                    "model.x_dim: {d} does not match the data dimension {}",
                    data.dim()
                )))
            }
            _ => {
                section.insert("x_dim".into(), Value::from(data.dim()));
            }
        }
        let cfg: GmvaeConfig =
            serde_json::from_value(Value::Object(section)).map_err(|e| CliError::Config(format!("model: {e}")))?;
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.k < 2 {
            return Err(CliError::Config("model.k: a mixture needs at least 2 clusters".into()));
        }
        if cfg.likelihood == Likelihood::Bernoulli && !data.is_binary() {
            return Err(CliError::Config(
                "model.likelihood: bernoulli needs binary data; use diag-gaussian or binarize".into(),
            ));
        }
        Ok(cfg)
    }
}

fn load_idx(src: &IdxSource) -> CliResult<Dataset> {
    let ctx = |p: &Path| p.display().to_string();
    let mut features = load_idx_images(&src.images).map_err(|e| CliError::data(&ctx(&src.images), e))?;
    let mut labels = match &src.labels {
        Some(p) => Some(load_idx_labels(p).map_err(|e| CliError::data(&ctx(p), e))?),
        None => None,
    };
    if let Some(b) = src.binarize {
        features = binarize(&features, b.mode, b.threshold, &mut RngStream::new(b.seed));
    }
    let name = src.images.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut data =
        Dataset::new(name, features, labels.take()).map_err(|e| CliError::data(&ctx(&src.images), e))?;
    if let Some(n) = src.limit {
        if n == 0 {
            return Err(CliError::Config("data.idx.limit: must be at least 1".into()));
        }
        data = data.take(n);
    }
    Ok(data)
}
