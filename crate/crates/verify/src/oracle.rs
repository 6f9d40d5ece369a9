//! A plain-f64 evaluation of the summed bound that shares no code with the tape.

use gmvae::model::{Gmvae, GmvaeConfig, Likelihood};
use gmvae::rng::{Noise, RecordingNoise, RngStream, ScriptedNoise};
use gmvae::tape::Tape;
use gmvae::training::objective::component_path;
use gmvae::training::{elbo_concrete, objective, Estimator};
use gmvae::{Error, Result, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Rows of the oracle batches.
pub const ROWS: usize = 4;
/// Features of the oracle models.
pub const X_DIM: usize = 6;
pub const Z_DIM: usize = 2;

struct Dense {
    /// `[fan_in][fan_out]`
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (i, xi) in x.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += xi * self.w[i][j];
            }
        }
        out
    }
}

fn relu_all(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// The networks of a model, read back by parameter name.
pub struct Oracle {
    shared: Vec<Dense>,
    y_head: Vec<Dense>,
    z_head: Vec<Dense>,
    prior: Vec<Dense>,
    decoder: Vec<Dense>,
    k: usize,
    z_dim: usize,
    gaussian: bool,
    decoder_uses_y: bool,
}

impl Oracle {
    pub fn new(model: &Gmvae) -> Oracle {
        let group = |name: &str| {
            let mut layers = Vec::new();
            for i in 0.. {
                let Some(w) = model.params().by_name(&format!("{name}.{i}.weight")) else { break };
                let Some(b) = model.params().by_name(&format!("{name}.{i}.bias")) else { break };
                let (fan_in, fan_out) = (w.value.shape()[0], w.value.shape()[1]);
                layers.push(Dense {
                    w: (0..fan_in)
                        .map(|r| w.value.data()[r * fan_out..(r + 1) * fan_out].to_vec())
                        .collect(),
                    b: b.value.data().to_vec(),
                });
            }
            layers
        };
        let cfg = model.config();
        Oracle {
            shared: group("shared"),
            y_head: group("y_head"),
            z_head: group("z_head"),
            prior: group("prior"),
            decoder: group("decoder"),
            k: cfg.k,
            z_dim: cfg.z_dim,
            gaussian: cfg.likelihood == Likelihood::DiagGaussian,
            decoder_uses_y: cfg.decoder_uses_y,
        }
    }

    fn mlp(layers: &[Dense], x: &[f64], relu_last: bool) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            h = layer.apply(&h);
            if relu_last || i + 1 < layers.len() {
                h = relu_all(h);
            }
        }
        h
    }

    fn log_normal(z: &[f64], mean: &[f64], log_var: &[f64]) -> f64 {
        (0..z.len())
            .map(|d| -0.5 * (LN_2PI + log_var[d] + (z[d] - mean[d]).powi(2) / log_var[d].exp()))
            .sum()
    }

    fn log_likelihood(&self, x: &[f64], out: &[f64]) -> f64 {
        if self.gaussian {
            let n = x.len();
            (0..n)
                .map(|d| {
                    let var = out[n + d].exp() + 1e-4;
                    -0.5 * (LN_2PI + var.ln() + (x[d] - out[d]).powi(2) / var)
                })
                .sum()
        } else {
            x.iter()
                .zip(out)
                .map(|(&xd, &l)| {
                    let p = 1.0 / (1.0 + (-l).exp());
                    if xd == 1.0 {
                        p.ln()
                    } else {
                        (1.0 - p).ln()
                    }
                })
                .sum()
        }
    }

    /// (q(y|x), KL(q ‖ uniform), h) for one row.
    pub fn posterior_y(&self, x: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
        let h = Self::mlp(&self.shared, x, true);
        let logits = Self::mlp(&self.y_head, &h, false);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let q: Vec<f64> = logits.iter().map(|l| (l - m).exp() / norm).collect();
        let kl = (self.k as f64).ln() + q.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        (q, kl, h)
    }

    /// ln p(z|y) − ln q(z|x,y) + ln p(x|z) with z = μ + σ·eps.
    pub fn path(&self, x: &[f64], h: &[f64], y: &[f64], eps: &[f64]) -> f64 {
        let mut input = h.to_vec();
        input.extend_from_slice(y);
        let q = Self::mlp(&self.z_head, &input, false);
        let (qm, qlv) = q.split_at(self.z_dim);
        let z: Vec<f64> = (0..self.z_dim).map(|d| qm[d] + (0.5 * qlv[d]).exp() * eps[d]).collect();
        let p = Self::mlp(&self.prior, y, false);
        let (pm, plv) = p.split_at(self.z_dim);
        let mut dec_in = z.clone();
        if self.decoder_uses_y {
            dec_in.extend_from_slice(y);
        }
        let out = Self::mlp(&self.decoder, &dec_in, false);
        Self::log_normal(&z, pm, plv) - Self::log_normal(&z, qm, qlv) + self.log_likelihood(x, &out)
    }

    /// Negative batch mean of Σ_k q_k·path_k − w·KL, one noise tensor per k.
    pub fn marginal_loss(&self, x: &Tensor, normals: &[Tensor], w: f64) -> f64 {
        let rows = x.rows();
        let mut total = 0.0;
        for r in 0..rows {
            let xr = x.row(r);
            let (q, kl, h) = self.posterior_y(xr);
            let mut elbo = -w * kl;
            for c in 0..self.k {
                let mut y = vec![0.0; self.k];
                y[c] = 1.0;
                elbo += q[c] * self.path(xr, &h, &y, normals[c].row(r));
            }
            total += elbo;
        }
        -total / rows as f64
    }
}

/// A model of at most 500 parameters with random biases of ±0.2.
pub fn tiny(likelihood: Likelihood, k: usize, seed: u64) -> Result<Gmvae> {
    tiny_with(likelihood, k, seed, false)
}

pub fn tiny_with(likelihood: Likelihood, k: usize, seed: u64, decoder_uses_y: bool) -> Result<Gmvae> {
    let mut cfg = GmvaeConfig::tiny(k, X_DIM, Z_DIM, 5);
    cfg.likelihood = likelihood;
    cfg.decoder_uses_y = decoder_uses_y;
    let mut rng = RngStream::new(seed);
    let mut model = Gmvae::new(cfg, &mut rng)?;
    for p in model.params_mut().iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.value = p.value.map(|_| 0.4 * rng.uniform() - 0.2);
    }
    if model.params().numel() > 500 {
        return Err(Error::Config(format!("{} parameters", model.params().numel())));
    }
    Ok(model)
}

/// Binary rows for Bernoulli models, uniform rows otherwise.
pub fn batch(likelihood: Likelihood, rows: usize, seed: u64) -> Result<Tensor> {
    let mut rng = RngStream::new(seed);
    let data = (0..rows * X_DIM)
        .map(|_| {
            let u = rng.uniform();
            match likelihood {
                Likelihood::Bernoulli => (u < 0.5) as u8 as f64,
                Likelihood::DiagGaussian => u,
            }
        })
        .collect();
    Tensor::new(vec![rows, X_DIM], data)
}

pub fn loss_of(estimator: Estimator, model: &Gmvae, x: &Tensor, noise: &mut dyn Noise, w: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let terms = objective(estimator, model, &mut tape, &b, xv, noise, w, false)?;
    tape.value(terms.loss).item()
}

/// Largest |tape − oracle| of the marginal loss over both likelihoods, both
/// decoder inputs, five models each and w ∈ {0, 0.35, 1}, under recorded
/// common random numbers.
pub fn marginal_discrepancy() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (likelihood, dec_y) in [
        (Likelihood::Bernoulli, false),
        (Likelihood::DiagGaussian, false),
        (Likelihood::Bernoulli, true),
    ] {
        for seed in 0..5 {
            let model = tiny_with(likelihood, 3, seed, dec_y)?;
            let x = batch(likelihood, ROWS, 50 + seed)?;
            let oracle = Oracle::new(&model);
            for w in [0.0, 0.35, 1.0] {
                let mut rec = RecordingNoise::new(RngStream::new(900 + seed));
                let got = loss_of(Estimator::Marginal, &model, &x, &mut rec, w)?;
                let mut script = rec.into_script();
                let normals = (0..3)
                    .map(|_| script.standard_normal(&[ROWS, Z_DIM]))
                    .collect::<Result<Vec<_>>>()?;
                worst = worst.max((got - oracle.marginal_loss(&x, &normals, w)).abs());
            }
        }
    }
    Ok(worst)
}

/// Gumbel noise that puts every row of the relaxation on vertex `c`.
pub fn selecting(rows: usize, k: usize, c: usize) -> Result<Tensor> {
    Ok(Tensor::one_hot_rows(c, k, rows)?.map(|v| 30.0 * v))
}

/// Largest |concrete loss − selected marginal path| at τ = 1e-3 over both
/// likelihoods, four models each and every component.
pub fn concrete_path_discrepancy() -> Result<f64> {
    let (k, w) = (3, 0.8);
    let mut worst: f64 = 0.0;
    for likelihood in [Likelihood::Bernoulli, Likelihood::DiagGaussian] {
        for seed in 0..4 {
            let model = tiny(likelihood, k, 20 + seed)?;
            let x = batch(likelihood, ROWS, 60 + seed)?;
            let eps = RngStream::new(seed).standard_normal(&[ROWS, Z_DIM])?;
            let oracle = Oracle::new(&model);
            let kl_mean = (0..ROWS).map(|r| oracle.posterior_y(x.row(r)).1).sum::<f64>() / ROWS as f64;
            for c in 0..k {
                let mut noise = ScriptedNoise::new(vec![selecting(ROWS, k, c)?], vec![eps.clone()]);
                let mut tape = Tape::new();
                let b = model.bind(&mut tape);
                let xv = tape.constant(x.clone());
                let terms = elbo_concrete(&model, &mut tape, &b, xv, &mut noise, 1e-3, w)?;
                let concrete = tape.value(terms.loss).item()?;

                // the c-th summand of the marginal estimator, with the full y-KL
                let mut tape = Tape::new();
                let b = model.bind(&mut tape);
                let xv = tape.constant(x.clone());
                let h = model.encode_shared(&mut tape, &b, xv)?;
                let y = tape.constant(Tensor::one_hot_rows(c, k, ROWS)?);
                let e = tape.constant(eps.clone());
                let path = component_path(&model, &mut tape, &b, xv, h, y, e)?;
                let path_mean = tape.value(path).sum() / ROWS as f64;
                worst = worst.max((concrete + path_mean - w * kl_mean).abs());
            }
        }
    }
    Ok(worst)
}
