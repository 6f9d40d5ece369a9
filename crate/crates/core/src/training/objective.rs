//! The two negative-ELBO estimators.
//!
//! Both return the batch mean of
//! `-(E[ln p(z|y) - ln q(z|x,y) + ln p(x|z)] - w · KL(q(y|x) ‖ Uniform(K)))`.
//! They differ only in how the expectation over y is taken: the marginal
//! estimator sums all K one-hot assignments weighted by q(y|x), the Concrete
//! estimator pushes one relaxed sample through the networks.

use serde::{Deserialize, Serialize};

use crate::distributions::{
    categorical_kl_uniform, gaussian_log_density, sample_concrete, sample_diag_gaussian_with,
};
use crate::error::Result;
use crate::model::Gmvae;
use crate::param::Bound;
use crate::rng::Noise;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Marginal,
    Concrete,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Marginal => "marginal",
            Estimator::Concrete => "concrete",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectiveTerms {
    /// Scalar loss to minimise.
    pub loss: Var,
    /// Per-row KL(q(y|x) ‖ p(y)), `[B]`.
    pub kl_y: Var,
}

/// ln p(z|y) - ln q(z|x,y) + ln p(x|z) per row, with z = μ + σ ⊙ `eps`.
pub fn component_path(
    model: &Gmvae,
    tape: &mut Tape,
    b: &Bound,
    x: Var,
    h: Var,
    y: Var,
    eps: Var,
) -> Result<Var> {
    let qz = model.posterior_z(tape, b, h, y)?;
    let z = sample_diag_gaussian_with(tape, &qz, eps)?;
    let pz = model.prior_z(tape, b, y)?;
    let log_p = gaussian_log_density(tape, z, &pz)?;
    let log_q = gaussian_log_density(tape, z, &qz)?;
    let recon = model.decode(tape, b, z, Some(y))?;
    let ll = model.log_likelihood(tape, x, &recon)?;
    let ratio = tape.sub(log_p, log_q)?;
    tape.add(ratio, ll)
}

fn finish(tape: &mut Tape, expected_path: Var, kl_y: Var, w: f64) -> Result<ObjectiveTerms> {
    let elbo = if w == 0.0 {
        expected_path
    } else {
        let weighted = tape.mul_scalar(kl_y, w);
        tape.sub(expected_path, weighted)?
    };
    let mean = tape.mean(elbo)?;
    let loss = tape.neg(mean)?;
    Ok(ObjectiveTerms { loss, kl_y })
}

/// Exact sum over the K cluster assignments; Θ(K) passes through the z-head,
/// prior and decoder. One z sample per component, with fresh noise per
/// component unless `shared_noise` is set.
pub fn elbo_marginal(
    model: &Gmvae,
    tape: &mut Tape,
    b: &Bound,
    x: Var,
    noise: &mut dyn Noise,
    w: f64,
    shared_noise: bool,
) -> Result<ObjectiveTerms> {
    let k = model.config().k;
    let z_dim = model.config().z_dim;
    let rows = tape.shape(x)[0];
    let h = model.encode_shared(tape, b, x)?;
    let q = model.posterior_y(tape, b, h)?;
    let kl_y = categorical_kl_uniform(tape, &q)?;
    let probs = q.probs(tape)?;

    let shared = if shared_noise {
        Some(tape.constant(noise.standard_normal(&[rows, z_dim])?))
    } else {
        None
    };
    let mut total: Option<Var> = None;
    for c in 0..k {
        let y = tape.constant(Tensor::one_hot_rows(c, k, rows)?);
        let eps = match shared {
            Some(e) => e,
            None => tape.constant(noise.standard_normal(&[rows, z_dim])?),
        };
        let path = component_path(model, tape, b, x, h, y, eps)?;
        let weight = tape.narrow(probs, 1, c, 1)?;
        let weight = tape.reshape(weight, &[rows])?;
        let term = tape.mul(weight, path)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    finish(tape, total.expect("k >= 1"), kl_y, w)
}

/// One relaxed sample ỹ ~ Concrete(q(y|x), τ), then z ~ q(z|x,ỹ). The
/// decoder runs once regardless of K. Gumbel noise is drawn before the
/// Gaussian noise.
pub fn elbo_concrete(
    model: &Gmvae,
    tape: &mut Tape,
    b: &Bound,
    x: Var,
    noise: &mut dyn Noise,
    temperature: f64,
    w: f64,
) -> Result<ObjectiveTerms> {
    let z_dim = model.config().z_dim;
    let rows = tape.shape(x)[0];
    let h = model.encode_shared(tape, b, x)?;
    let q = model.posterior_y(tape, b, h)?;
    let kl_y = categorical_kl_uniform(tape, &q)?;
    let y = sample_concrete(tape, q.logits, temperature, noise)?;
    let eps = tape.constant(noise.standard_normal(&[rows, z_dim])?);
    let path = component_path(model, tape, b, x, h, y.value, eps)?;
    finish(tape, path, kl_y, w)
}

/// Dispatches on `estimator`, taking τ from the model config.
pub fn objective(
    estimator: Estimator,
    model: &Gmvae,
    tape: &mut Tape,
    b: &Bound,
    x: Var,
    noise: &mut dyn Noise,
    w: f64,
    shared_noise: bool,
) -> Result<ObjectiveTerms> {
    match estimator {
        Estimator::Marginal => elbo_marginal(model, tape, b, x, noise, w, shared_noise),
        Estimator::Concrete => {
            elbo_concrete(model, tape, b, x, noise, model.config().temperature, w)
        }
    }
}
