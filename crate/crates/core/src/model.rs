//! The GMVAE networks: q(y|x), q(z|x,y), p(z|y) and p(x|z), built from
//! fully-connected layers.
//!
//! Layer weights are stored `[fan_in × fan_out]` and applied as `x·W + b`.
//! A shared encoder feeds both inference heads. The y-head emits K logits;
//! the z-head sees the shared features concatenated with y and emits
//! `2·z_dim` values (mean, then log-variance), as does the single-layer prior
//! network on y alone. The decoder reads z (and y when `decoder_uses_y` is
//! set).

use serde::{Deserialize, Serialize};

use crate::distributions::{bernoulli_log_likelihood, CategoricalParams, DiagGaussianParams};
use crate::error::{Error, Result};
use crate::param::{glorot_uniform, Bound, ParamId, ParamStore};
use crate::rng::RngStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Floor added to the decoder variance of the Gaussian likelihood.
pub const GAUSSIAN_VARIANCE_FLOOR: f64 = 1e-4;

const SIMPLEX_TOL: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Likelihood {
    Bernoulli,
    DiagGaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmvaeConfig {
    /// Number of clusters.
    pub k: usize,
    pub x_dim: usize,
    #[serde(default = "defaults::z_dim")]
    pub z_dim: usize,
    #[serde(default = "defaults::hidden_shared")]
    pub hidden_shared: usize,
    #[serde(default = "defaults::head")]
    pub hidden_y: [usize; 2],
    #[serde(default = "defaults::head")]
    pub hidden_z: [usize; 2],
    #[serde(default = "defaults::hidden_decoder")]
    pub hidden_decoder: Vec<usize>,
    #[serde(default = "defaults::likelihood")]
    pub likelihood: Likelihood,
    /// Concrete relaxation temperature τ.
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub decoder_uses_y: bool,
}

mod defaults {
    use super::Likelihood;

    pub fn z_dim() -> usize {
        16
    }
    pub fn hidden_shared() -> usize {
        512
    }
    pub fn head() -> [usize; 2] {
        [512, 256]
    }
    pub fn hidden_decoder() -> Vec<usize> {
        vec![256, 512]
    }
    pub fn likelihood() -> Likelihood {
        Likelihood::Bernoulli
    }
    pub fn temperature() -> f64 {
        0.3
    }
}

impl GmvaeConfig {
    /// Default widths for the given cluster count and input size.
    pub fn new(k: usize, x_dim: usize) -> Self {
        GmvaeConfig {
            k,
            x_dim,
            z_dim: defaults::z_dim(),
            hidden_shared: defaults::hidden_shared(),
            hidden_y: defaults::head(),
            hidden_z: defaults::head(),
            hidden_decoder: defaults::hidden_decoder(),
            likelihood: defaults::likelihood(),
            temperature: defaults::temperature(),
            decoder_uses_y: false,
        }
    }

    /// Small widths for tests and desk-scale experiments.
    pub fn tiny(k: usize, x_dim: usize, z_dim: usize, width: usize) -> Self {
        GmvaeConfig {
            k,
            x_dim,
            z_dim,
            hidden_shared: width,
            hidden_y: [width, width],
            hidden_z: [width, width],
            hidden_decoder: vec![width],
            ..Self::new(k, x_dim)
        }
    }

    /// Structural checks. A single cluster is accepted so the degenerate
    /// mixture (a plain VAE) can be built; callers wanting a real mixture
    /// should also require `k >= 2`.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("model.{field}: {why}")));
        if self.k == 0 {
            return bad("k", "must be at least 1");
        }
        if self.x_dim == 0 {
            return bad("x_dim", "must be at least 1");
        }
        if self.z_dim == 0 {
            return bad("z_dim", "must be at least 1");
        }
        if self.hidden_shared == 0 {
            return bad("hidden_shared", "must be at least 1");
        }
        if self.hidden_y.contains(&0) {
            return bad("hidden_y", "widths must be at least 1");
        }
        if self.hidden_z.contains(&0) {
            return bad("hidden_z", "widths must be at least 1");
        }
        if self.hidden_decoder.contains(&0) {
            return bad("hidden_decoder", "widths must be at least 1");
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad("temperature", "must be positive and finite");
        }
        Ok(())
    }

    fn decoder_out(&self) -> usize {
        match self.likelihood {
            Likelihood::Bernoulli => self.x_dim,
            Likelihood::DiagGaussian => 2 * self.x_dim,
        }
    }

    /// (group, [widths...]) for every network, input first.
    fn layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let dec_in = self.z_dim + if self.decoder_uses_y { self.k } else { 0 };
        let mut decoder = vec![dec_in];
        decoder.extend(&self.hidden_decoder);
        decoder.push(self.decoder_out());
        vec![
            ("shared", vec![self.x_dim, self.hidden_shared]),
            (
                "y_head",
                vec![self.hidden_shared, self.hidden_y[0], self.hidden_y[1], self.k],
            ),
            (
                "z_head",
                vec![
                    self.hidden_shared + self.k,
                    self.hidden_z[0],
                    self.hidden_z[1],
                    2 * self.z_dim,
                ],
            ),
            ("prior", vec![self.k, 2 * self.z_dim]),
            ("decoder", decoder),
        ]
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug, Default)]
struct Layers {
    shared: Vec<Linear>,
    y_head: Vec<Linear>,
    z_head: Vec<Linear>,
    prior: Vec<Linear>,
    decoder: Vec<Linear>,
}

impl Layers {
    fn group_mut(&mut self, name: &str) -> &mut Vec<Linear> {
        match name {
            "shared" => &mut self.shared,
            "y_head" => &mut self.y_head,
            "z_head" => &mut self.z_head,
            "prior" => &mut self.prior,
            _ => &mut self.decoder,
        }
    }
}

/// Parameters of p(x|z) for a batch.
#[derive(Clone, Copy, Debug)]
pub enum LikelihoodParams {
    Bernoulli { logits: Var },
    /// Variance is `exp(raw_log_variance) + GAUSSIAN_VARIANCE_FLOOR`.
    Gaussian { mean: Var, raw_log_variance: Var },
}

#[derive(Clone, Debug)]
pub struct Gmvae {
    config: GmvaeConfig,
    params: ParamStore,
    layers: Layers,
}

impl Gmvae {
    fn build(config: GmvaeConfig, mut init: impl FnMut(usize, usize) -> Tensor) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut layers = Layers::default();
        for (group, widths) in config.layout() {
            for (i, pair) in widths.windows(2).enumerate() {
                let weight = params.push(format!("{group}.{i}.weight"), init(pair[0], pair[1]));
                let bias = params.push(format!("{group}.{i}.bias"), Tensor::zeros(&[pair[1]]));
                layers.group_mut(group).push(Linear { weight, bias });
            }
        }
        Ok(Gmvae {
            config,
            params,
            layers,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new(config: GmvaeConfig, rng: &mut RngStream) -> Result<Self> {
        Self::build(config, |i, o| glorot_uniform(i, o, rng))
    }

    /// Every weight and bias zero.
    pub fn zeros(config: GmvaeConfig) -> Result<Self> {
        Self::build(config, |i, o| Tensor::zeros(&[i, o]))
    }

    /// Rebuilds a model from stored parameters, checking every name and shape
    /// against the layout `config` implies.
    pub fn from_params(config: GmvaeConfig, stored: ParamStore) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        if model.params.len() != stored.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                stored.len()
            )));
        }
        for (want, got) in model.params.iter().zip(stored.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {} {:?} does not match stored {} {:?}",
                    want.name,
                    want.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        model.params = stored;
        Ok(model)
    }

    pub fn config(&self) -> &GmvaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Binds all parameters as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape)
    }

    fn linear(&self, tape: &mut Tape, b: &Bound, layer: Linear, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, b.var(layer.weight))?;
        tape.add_row(xw, b.var(layer.bias))
    }

    /// Affine layers with relu between them (and after the last when `relu_last`).
    fn mlp(&self, tape: &mut Tape, b: &Bound, layers: &[Linear], x: Var, relu_last: bool) -> Result<Var> {
        let mut h = x;
        for (i, &layer) in layers.iter().enumerate() {
            h = self.linear(tape, b, layer, h)?;
            if relu_last || i + 1 < layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    fn split_gaussian(&self, tape: &mut Tape, out: Var) -> Result<DiagGaussianParams> {
        let d = self.config.z_dim;
        Ok(DiagGaussianParams {
            mean: tape.narrow(out, 1, 0, d)?,
            log_variance: tape.narrow(out, 1, d, d)?,
        })
    }

    fn check_simplex(&self, tape: &Tape, y: Var) -> Result<()> {
        let t = tape.value(y);
        if t.rank() != 2 || t.cols() != self.config.k {
            return Err(Error::dim("y", t.shape(), &[t.rows(), self.config.k]));
        }
        for (r, row) in t.data().chunks(self.config.k).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&v| v < 0.0) {
                return Err(Error::Contract(format!(
                    "row {r} of y is not on the simplex (sum {s})"
                )));
            }
        }
        Ok(())
    }

    /// h(x) = relu(x·W + b), shape `[B × hidden_shared]`.
    pub fn encode_shared(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.config.x_dim {
            return Err(Error::dim("encode_shared", shape, &[shape[0], self.config.x_dim]));
        }
        self.mlp(tape, b, &self.layers.shared, x, true)
    }

    /// q(y|x): K logits per row.
    pub fn posterior_y(&self, tape: &mut Tape, b: &Bound, h: Var) -> Result<CategoricalParams> {
        let logits = self.mlp(tape, b, &self.layers.y_head, h, false)?;
        Ok(CategoricalParams::new(logits))
    }

    /// q(z|x,y) from shared features and a one-hot or relaxed `y` `[B × K]`.
    pub fn posterior_z(&self, tape: &mut Tape, b: &Bound, h: Var, y: Var) -> Result<DiagGaussianParams> {
        self.check_simplex(tape, y)?;
        let hy = tape.concat(&[h, y], 1)?;
        let out = self.mlp(tape, b, &self.layers.z_head, hy, false)?;
        self.split_gaussian(tape, out)
    }

    /// p(z|y): a single affine layer of y.
    pub fn prior_z(&self, tape: &mut Tape, b: &Bound, y: Var) -> Result<DiagGaussianParams> {
        self.check_simplex(tape, y)?;
        let out = self.mlp(tape, b, &self.layers.prior, y, false)?;
        self.split_gaussian(tape, out)
    }

    /// p(x|z). `y` is only read when the config routes it into the decoder.
    pub fn decode(&self, tape: &mut Tape, b: &Bound, z: Var, y: Option<Var>) -> Result<LikelihoodParams> {
        let input = match (self.config.decoder_uses_y, y) {
            (true, Some(y)) => tape.concat(&[z, y], 1)?,
            (true, None) => {
                return Err(Error::Contract("decoder_uses_y is set but no y was given".into()))
            }
            (false, _) => z,
        };
        let out = self.mlp(tape, b, &self.layers.decoder, input, false)?;
        Ok(match self.config.likelihood {
            Likelihood::Bernoulli => LikelihoodParams::Bernoulli { logits: out },
            Likelihood::DiagGaussian => {
                let d = self.config.x_dim;
                LikelihoodParams::Gaussian {
                    mean: tape.narrow(out, 1, 0, d)?,
                    raw_log_variance: tape.narrow(out, 1, d, d)?,
                }
            }
        })
    }

    /// ln p(x|z) per row, `[B]`.
    pub fn log_likelihood(&self, tape: &mut Tape, x: Var, p: &LikelihoodParams) -> Result<Var> {
        match *p {
            LikelihoodParams::Bernoulli { logits } => bernoulli_log_likelihood(tape, x, logits),
            LikelihoodParams::Gaussian {
                mean,
                raw_log_variance,
            } => gaussian_log_likelihood(tape, x, mean, raw_log_variance),
        }
    }
}

/// Σ_d ln N(x_d; μ_d, exp(raw_d) + floor), per row.
fn gaussian_log_likelihood(tape: &mut Tape, x: Var, mean: Var, raw_log_variance: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(mean) {
        return Err(Error::dim("gaussian_log_likelihood", tape.shape(x), tape.shape(mean)));
    }
    let e = tape.exp(raw_log_variance)?;
    let var = tape.add_scalar(e, GAUSSIAN_VARIANCE_FLOOR);
    let log_var = tape.log(var)?;
    let diff = tape.sub(x, mean)?;
    let sq = tape.mul(diff, diff)?;
    let quad = tape.div(sq, var)?;
    let inner = tape.add(quad, log_var)?;
    let scaled = tape.mul_scalar(inner, -0.5);
    let per_dim = tape.add_scalar(scaled, -HALF_LN_2PI);
    tape.sum_axis(per_dim, 1)
}

/// One-hot rows at the argmax of each row of `logits`; ties go to the lowest index.
pub fn discretize_y(logits: &Tensor) -> Tensor {
    let k = *logits.shape().last().unwrap_or(&1);
    let mut out = Tensor::zeros(logits.shape());
    for (row, chunk) in logits.data().chunks(k).enumerate() {
        let mut best = 0;
        for (i, &v) in chunk.iter().enumerate() {
            if v > chunk[best] {
                best = i;
            }
        }
        out.data_mut()[row * k + best] = 1.0;
    }
    out
}
