//! Sampling laws of the noise transforms, measured by Monte Carlo.

use gmvae::distributions::{sample_concrete, sample_diag_gaussian, DiagGaussianParams};
use gmvae::rng::{Noise, RngStream};
use gmvae::tape::Tape;
use gmvae::{Result, Tensor};
use rand::{Rng, SeedableRng};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Goodness of fit of argmax(logits + Gumbel) to softmax(logits).
#[derive(Clone, Debug, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub p_value: f64,
    pub counts: Vec<usize>,
}

pub fn gumbel_argmax_chi_square(logits: &[f64], n: usize, seed: u64) -> Result<ChiSquare> {
    let k = logits.len();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = logits.iter().map(|l| (l - top).exp()).sum();
    let g = RngStream::new(seed).gumbel(&[n, k])?;
    let mut counts = vec![0usize; k];
    for row in g.data().chunks(k) {
        let best = (0..k)
            .max_by(|&a, &b| (logits[a] + row[a]).total_cmp(&(logits[b] + row[b])))
            .unwrap_or(0);
        counts[best] += 1;
    }
    let statistic: f64 = counts
        .iter()
        .zip(logits)
        .map(|(&c, l)| {
            let expected = (l - top).exp() / norm * n as f64;
            (c as f64 - expected).powi(2) / expected
        })
        .sum();
    let dist = ChiSquared::new((k - 1) as f64).map_err(|e| gmvae::Error::Config(e.to_string()))?;
    Ok(ChiSquare { statistic, p_value: 1.0 - dist.cdf(statistic), counts })
}

/// Relaxed samples drawn by the library sampler, one row per sample.
pub fn concrete_rows(logits: &Tensor, tau: f64, noise: &mut dyn Noise) -> Result<Tensor> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let s = sample_concrete(&mut tape, l, tau, noise)?;
    Ok(tape.value(s.value).clone())
}

/// Largest distance from the simplex over `rows` samples at each temperature:
/// max of |Σ y − 1| and the most negative component, or ∞ on a non-finite entry.
pub fn simplex_deviation(logits: &[f64], taus: &[f64], rows: usize, seed: u64) -> Result<f64> {
    let k = logits.len();
    let l = Tensor::new(vec![rows, k], logits.repeat(rows))?;
    let mut worst: f64 = 0.0;
    for (i, &tau) in taus.iter().enumerate() {
        let y = concrete_rows(&l, tau, &mut RngStream::derive(seed, 0, i as u64))?;
        for row in y.data().chunks(k) {
            if row.iter().any(|v| !v.is_finite()) {
                return Ok(f64::INFINITY);
            }
            let below = row.iter().cloned().fold(0.0, f64::min);
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs()).max(-below);
        }
    }
    Ok(worst)
}

/// Fraction of `n` library samples at uniform logits whose largest component exceeds 0.99.
pub fn vertex_fraction(k: usize, tau: f64, n: usize, seed: u64) -> Result<f64> {
    let y = concrete_rows(&Tensor::zeros(&[n, k]), tau, &mut RngStream::new(seed))?;
    let hits = y
        .data()
        .chunks(k)
        .filter(|row| row.iter().cloned().fold(0.0, f64::max) > 0.99)
        .count();
    Ok(hits as f64 / n as f64)
}

/// The same fraction from an independent Gumbel sampler: inverse CDF over a
/// different generator, normalised by hand.
pub fn oracle_vertex_fraction(k: usize, tau: f64, n: usize, seed: u64) -> f64 {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n {
        let a: Vec<f64> = (0..k)
            .map(|_| -(-(rng.gen::<f64>().max(f64::MIN_POSITIVE)).ln()).ln() / tau)
            .collect();
        let top = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = a.iter().map(|v| (v - top).exp()).sum();
        if 1.0 / norm > 0.99 {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Upper bound on the vertex fraction from the gap between the two largest
/// perturbed logits: 1 − (K−1)c / (K + (K−1)c) with c = 99^τ − 1.
pub fn two_spacing_bound(k: usize, tau: f64) -> f64 {
    let c = 99f64.powf(tau) - 1.0;
    let k = k as f64;
    1.0 - (k - 1.0) * c / (k + (k - 1.0) * c)
}

/// Sample mean and unbiased variance of `n` reparameterised draws from N(mu, var).
pub fn gaussian_moments(mu: f64, var: f64, n: usize, seed: u64) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let p = DiagGaussianParams {
        mean: tape.constant(Tensor::full(&[n, 1], mu)),
        log_variance: tape.constant(Tensor::full(&[n, 1], var.ln())),
    };
    let z = sample_diag_gaussian(&mut tape, &p, &mut RngStream::new(seed))?;
    let zs = tape.value(z).data();
    let mean = zs.iter().sum::<f64>() / n as f64;
    let v = zs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_is_one_at_zero_temperature() {
        assert_eq!(two_spacing_bound(10, 0.0), 1.0);
        assert!(two_spacing_bound(10, 0.01) < 0.97);
    }

    #[test]
    fn oracle_sampler_is_seeded() {
        assert_eq!(oracle_vertex_fraction(4, 0.1, 1000, 3), oracle_vertex_fraction(4, 0.1, 1000, 3));
    }
}
