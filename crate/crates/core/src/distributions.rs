//! Categorical, Concrete, diagonal Gaussian and Bernoulli pieces of the model.
//!
//! All functions work on the last axis of their inputs, so a `[K]` vector is
//! one distribution and a `[B×K]` matrix is a batch of `B`. Per-distribution
//! results come back with the last axis reduced: a rank-0 scalar or a `[B]`
//! vector.

use crate::error::{Error, Result};
use crate::rng::Noise;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Probabilities are clamped to at least this inside logs.
pub const PROB_FLOOR: f64 = 1e-12;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// g = -ln(-ln u).
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Unnormalised log-probabilities over K outcomes, per row.
#[derive(Clone, Copy, Debug)]
pub struct CategoricalParams {
    pub logits: Var,
}

/// A relaxed one-hot sample on the open simplex.
#[derive(Clone, Copy, Debug)]
pub struct ConcreteSample {
    pub value: Var,
    pub temperature: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct DiagGaussianParams {
    pub mean: Var,
    pub log_variance: Var,
}

fn last_axis(tape: &Tape, v: Var) -> usize {
    tape.shape(v).len() - 1
}

impl CategoricalParams {
    pub fn new(logits: Var) -> Self {
        CategoricalParams { logits }
    }

    pub fn num_categories(&self, tape: &Tape) -> usize {
        *tape.shape(self.logits).last().expect("logits rank >= 1")
    }

    pub fn log_probs(&self, tape: &mut Tape) -> Result<Var> {
        let axis = last_axis(tape, self.logits);
        tape.log_softmax(self.logits, axis)
    }

    pub fn probs(&self, tape: &mut Tape) -> Result<Var> {
        let lp = self.log_probs(tape)?;
        tape.exp(lp)
    }
}

pub fn sample_gumbel(shape: &[usize], noise: &mut dyn Noise) -> Result<Tensor> {
    noise.gumbel(shape)
}

/// softmax((logits + g) / τ) with fresh Gumbel noise g held constant.
pub fn sample_concrete(
    tape: &mut Tape,
    logits: Var,
    temperature: f64,
    noise: &mut dyn Noise,
) -> Result<ConcreteSample> {
    if !(temperature > 0.0) {
        return Err(Error::domain(
            "sample_concrete",
            format!("temperature must be positive, got {temperature}"),
        ));
    }
    let shape = tape.shape(logits).to_vec();
    let g = tape.constant(sample_gumbel(&shape, noise)?);
    let perturbed = tape.add(logits, g)?;
    let scaled = tape.mul_scalar(perturbed, 1.0 / temperature);
    let value = tape.softmax(scaled, shape.len() - 1)?;
    Ok(ConcreteSample { value, temperature })
}

/// D_KL(q ‖ Uniform(K)) = ln K + Σ_k q_k ln q_k, per row.
///
/// Uses log-softmax directly, which agrees with the floor-clamped form for
/// every probability the logits can represent.
pub fn categorical_kl_uniform(tape: &mut Tape, q: &CategoricalParams) -> Result<Var> {
    let k = q.num_categories(tape);
    let axis = last_axis(tape, q.logits);
    let lp = q.log_probs(tape)?;
    let p = tape.exp(lp)?;
    let plp = tape.mul(p, lp)?;
    let neg_entropy = tape.sum_axis(plp, axis)?;
    Ok(tape.add_scalar(neg_entropy, (k as f64).ln()))
}

/// The same KL evaluated on explicit probabilities with the log floor.
pub fn categorical_kl_uniform_probs(probs: &[f64]) -> f64 {
    let k = probs.len() as f64;
    k.ln() + probs
        .iter()
        .map(|&p| p * p.max(PROB_FLOOR).ln())
        .sum::<f64>()
}

/// z = μ + exp(½ ln σ²) ⊙ ε with ε drawn from `noise`.
pub fn sample_diag_gaussian(
    tape: &mut Tape,
    p: &DiagGaussianParams,
    noise: &mut dyn Noise,
) -> Result<Var> {
    let shape = tape.shape(p.mean).to_vec();
    let eps = tape.constant(noise.standard_normal(&shape)?);
    sample_diag_gaussian_with(tape, p, eps)
}

/// Reparameterised sample with explicit standard-normal noise `eps`.
pub fn sample_diag_gaussian_with(tape: &mut Tape, p: &DiagGaussianParams, eps: Var) -> Result<Var> {
    let half = tape.mul_scalar(p.log_variance, 0.5);
    let std = tape.exp(half)?;
    let scaled = tape.mul(std, eps)?;
    tape.add(p.mean, scaled)
}

/// Σ_d [ -½ ln 2π - ½ ln σ²_d - (z_d - μ_d)² / (2σ²_d) ], per row.
pub fn gaussian_log_density(tape: &mut Tape, z: Var, p: &DiagGaussianParams) -> Result<Var> {
    if tape.shape(z) != tape.shape(p.mean) || tape.shape(z) != tape.shape(p.log_variance) {
        return Err(Error::dim(
            "gaussian_log_density",
            tape.shape(z),
            tape.shape(p.mean),
        ));
    }
    let axis = last_axis(tape, z);
    let diff = tape.sub(z, p.mean)?;
    let sq = tape.mul(diff, diff)?;
    let neg_lv = tape.neg(p.log_variance)?;
    let inv_var = tape.exp(neg_lv)?;
    let quad = tape.mul(sq, inv_var)?;
    let inner = tape.add(quad, p.log_variance)?;
    let scaled = tape.mul_scalar(inner, -0.5);
    let per_dim = tape.add_scalar(scaled, -HALF_LN_2PI);
    tape.sum_axis(per_dim, axis)
}

/// Closed-form D_KL(q ‖ p) between diagonal Gaussians, per row.
pub fn diag_gaussian_kl(tape: &mut Tape, q: &DiagGaussianParams, p: &DiagGaussianParams) -> Result<Var> {
    if tape.shape(q.mean) != tape.shape(p.mean) {
        return Err(Error::dim(
            "diag_gaussian_kl",
            tape.shape(q.mean),
            tape.shape(p.mean),
        ));
    }
    let axis = last_axis(tape, q.mean);
    // ½ Σ [ ln σ²_p - ln σ²_q + (σ²_q + (μ_q - μ_p)²) / σ²_p - 1 ]
    let var_q = tape.exp(q.log_variance)?;
    let diff = tape.sub(q.mean, p.mean)?;
    let sq = tape.mul(diff, diff)?;
    let num = tape.add(var_q, sq)?;
    let neg_lvp = tape.neg(p.log_variance)?;
    let inv_var_p = tape.exp(neg_lvp)?;
    let ratio = tape.mul(num, inv_var_p)?;
    let lv_gap = tape.sub(p.log_variance, q.log_variance)?;
    let s = tape.add(lv_gap, ratio)?;
    let s = tape.add_scalar(s, -1.0);
    let per_dim = tape.mul_scalar(s, 0.5);
    tape.sum_axis(per_dim, axis)
}

/// Σ_d [ x_d ln σ(l_d) + (1 - x_d) ln(1 - σ(l_d)) ] = Σ_d [ x_d l_d - softplus(l_d) ], per row.
pub fn bernoulli_log_likelihood(tape: &mut Tape, x: Var, logits: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(logits) {
        return Err(Error::dim(
            "bernoulli_log_likelihood",
            tape.shape(x),
            tape.shape(logits),
        ));
    }
    if let Some(bad) = tape.value(x).data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Contract(format!(
            "bernoulli likelihood needs binary data, found {bad}"
        )));
    }
    let axis = last_axis(tape, x);
    let xl = tape.mul(x, logits)?;
    let sp = tape.softplus(logits)?;
    let per_dim = tape.sub(xl, sp)?;
    tape.sum_axis(per_dim, axis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, ScriptedNoise, ZeroNoise};

    fn scalar(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item().unwrap()
    }

    #[test]
    fn gumbel_fixed_points() {
        assert_eq!(gumbel_from_uniform((-1.0f64).exp()), 0.0);
        let u = (-std::f64::consts::E).exp();
        assert!((gumbel_from_uniform(u) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn concrete_with_zero_noise_is_softmax() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::vector(vec![2f64.ln(), 0.0]));
        let s = sample_concrete(&mut tape, l, 1.0, &mut ZeroNoise).unwrap();
        let v = tape.value(s.value).data();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn concrete_rejects_non_positive_temperature() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        for tau in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                sample_concrete(&mut tape, l, tau, &mut ZeroNoise),
                Err(Error::Domain { .. })
            ));
        }
    }

    #[test]
    fn categorical_kl_examples() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::vector(vec![0.3; 4]));
        let kl = categorical_kl_uniform(&mut tape, &CategoricalParams::new(u)).unwrap();
        assert!(scalar(&tape, kl).abs() < 1e-15);

        let one_hot = tape.leaf(Tensor::vector(vec![1000.0, -1000.0]));
        let kl = categorical_kl_uniform(&mut tape, &CategoricalParams::new(one_hot)).unwrap();
        assert!((scalar(&tape, kl) - 2f64.ln()).abs() < 1e-12);
        assert!((categorical_kl_uniform_probs(&[1.0, 0.0]) - 2f64.ln()).abs() < 1e-12);

        // ln 2 + 0.7 ln 0.7 + 0.3 ln 0.3, summed in high precision
        let l = tape.leaf(Tensor::vector(vec![0.7f64.ln(), 0.3f64.ln()]));
        let kl = categorical_kl_uniform(&mut tape, &CategoricalParams::new(l)).unwrap();
        assert!((scalar(&tape, kl) - 0.082_282_878_505_051_8).abs() < 1e-12);
    }

    #[test]
    fn gaussian_sample_with_zero_noise_is_mean() {
        let mut tape = Tape::new();
        let mean = tape.leaf(Tensor::vector(vec![1.5, -2.0]));
        let lv = tape.leaf(Tensor::vector(vec![0.3, -1.0]));
        let p = DiagGaussianParams { mean, log_variance: lv };
        let z = sample_diag_gaussian(&mut tape, &p, &mut ZeroNoise).unwrap();
        assert_eq!(tape.value(z).data(), &[1.5, -2.0]);
    }

    #[test]
    fn gaussian_sample_slope_in_noise_is_sigma() {
        let mut tape = Tape::new();
        let mean = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let lv = tape.constant(Tensor::vector(vec![0.8, -0.4]));
        let eps = tape.leaf(Tensor::vector(vec![0.2, -1.1]));
        let p = DiagGaussianParams { mean, log_variance: lv };
        let z = sample_diag_gaussian_with(&mut tape, &p, eps).unwrap();
        let s = tape.sum(z).unwrap();
        let g = tape.backward(s).unwrap();
        let d = g.get(eps).unwrap().data();
        assert!((d[0] - 0.4f64.exp()).abs() < 1e-15);
        assert!((d[1] - (-0.2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_log_density_examples() {
        let mut tape = Tape::new();
        let mean = tape.constant(Tensor::vector(vec![0.5]));
        let lv = tape.constant(Tensor::vector(vec![0.0]));
        let p = DiagGaussianParams { mean, log_variance: lv };
        let z0 = tape.constant(Tensor::vector(vec![0.5]));
        let z1 = tape.constant(Tensor::vector(vec![1.5]));
        let d0 = gaussian_log_density(&mut tape, z0, &p).unwrap();
        let d1 = gaussian_log_density(&mut tape, z1, &p).unwrap();
        assert!((scalar(&tape, d0) + 0.918_938_533_204_672_8).abs() < 1e-12);
        assert!((scalar(&tape, d1) + 1.418_938_533_204_672_8).abs() < 1e-12);

        let m2 = tape.constant(Tensor::vector(vec![0.5, -1.0]));
        let lv2 = tape.constant(Tensor::vector(vec![0.0, 0.7]));
        let z2 = tape.constant(Tensor::vector(vec![1.5, 0.25]));
        let joint = gaussian_log_density(
            &mut tape,
            z2,
            &DiagGaussianParams { mean: m2, log_variance: lv2 },
        )
        .unwrap();
        let mb = tape.constant(Tensor::vector(vec![-1.0]));
        let lvb = tape.constant(Tensor::vector(vec![0.7]));
        let zb = tape.constant(Tensor::vector(vec![0.25]));
        let second = gaussian_log_density(
            &mut tape,
            zb,
            &DiagGaussianParams { mean: mb, log_variance: lvb },
        )
        .unwrap();
        let sum = scalar(&tape, d1) + scalar(&tape, second);
        assert!((scalar(&tape, joint) - sum).abs() < 1e-12);
    }

    #[test]
    fn gaussian_log_density_shape_error() {
        let mut tape = Tape::new();
        let mean = tape.constant(Tensor::zeros(&[2]));
        let lv = tape.constant(Tensor::zeros(&[2]));
        let z = tape.constant(Tensor::zeros(&[3]));
        let r = gaussian_log_density(&mut tape, z, &DiagGaussianParams { mean, log_variance: lv });
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn diag_gaussian_kl_examples() {
        let mut tape = Tape::new();
        let m0 = tape.constant(Tensor::vector(vec![0.0]));
        let m1 = tape.constant(Tensor::vector(vec![1.0]));
        let lv = tape.constant(Tensor::vector(vec![0.0]));
        let p = DiagGaussianParams { mean: m0, log_variance: lv };
        let q = DiagGaussianParams { mean: m1, log_variance: lv };
        let same = diag_gaussian_kl(&mut tape, &p, &p).unwrap();
        let shifted = diag_gaussian_kl(&mut tape, &q, &p).unwrap();
        assert_eq!(scalar(&tape, same), 0.0);
        assert!((scalar(&tape, shifted) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0]));
        let l = tape.leaf(Tensor::vector(vec![0.0]));
        let ll = bernoulli_log_likelihood(&mut tape, x, l).unwrap();
        assert!((scalar(&tape, ll) - 0.5f64.ln()).abs() < 1e-15);

        let x = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        let l = tape.leaf(Tensor::vector(vec![50.0, -50.0]));
        let ll = bernoulli_log_likelihood(&mut tape, x, l).unwrap();
        let v = scalar(&tape, ll);
        assert!(v <= 0.0 && v > -1e-9);
    }

    #[test]
    fn bernoulli_rejects_non_binary() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.5]));
        let l = tape.leaf(Tensor::vector(vec![0.0]));
        assert!(matches!(
            bernoulli_log_likelihood(&mut tape, x, l),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bernoulli_matches_probability_space_formula() {
        let mut rng = RngStream::new(17);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| (rng.uniform() < 0.5) as u8 as f64).collect();
            let l: Vec<f64> = (0..6).map(|_| 8.0 * rng.uniform() - 4.0).collect();
            let naive: f64 = x
                .iter()
                .zip(&l)
                .map(|(&xi, &li)| {
                    let p = (1.0 / (1.0 + (-li).exp())).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                    xi * p.ln() + (1.0 - xi) * (1.0 - p).ln()
                })
                .sum();
            let mut tape = Tape::new();
            let xv = tape.constant(Tensor::vector(x));
            let lv = tape.leaf(Tensor::vector(l));
            let ll = bernoulli_log_likelihood(&mut tape, xv, lv).unwrap();
            assert!((scalar(&tape, ll) - naive).abs() < 1e-9);
        }
    }

    #[test]
    fn batched_rows_reduce_independently() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0], vec![0.7f64.ln(), 0.3f64.ln()]]).unwrap());
        let kl = categorical_kl_uniform(&mut tape, &CategoricalParams::new(l)).unwrap();
        let v = tape.value(kl);
        assert_eq!(v.shape(), &[2]);
        assert!(v.data()[0].abs() < 1e-15);
        assert!((v.data()[1] - 0.082_282_878_505_051_8).abs() < 1e-12);
    }

    #[test]
    fn scripted_gumbel_pins_concrete_sample() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let mut noise = ScriptedNoise::new(vec![Tensor::vector(vec![0.0, 5.0, 0.0])], vec![]);
        let s = sample_concrete(&mut tape, l, 1e-3, &mut noise).unwrap();
        assert_eq!(tape.value(s.value).data(), &[0.0, 1.0, 0.0]);
    }
}
