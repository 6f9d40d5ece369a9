use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{categorical_kl_uniform, sample_diag_gaussian_with};
use crate::error::{Error, Result};
use crate::model::{discretize_y, Gmvae};
use crate::rng::Noise;
use crate::tape::Tape;

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub examples: usize,
    /// Mean over examples of the S-sample average of ln p(x|z), z ~ q(z|x, one-hot argmax y).
    pub reconstruction_ll: f64,
    /// Mean KL(q(y|x) ‖ p(y)) in nats.
    pub kl_y: f64,
    /// Entropy (nats) of the histogram of argmax cluster assignments.
    pub usage_entropy: f64,
    pub purity: Option<f64>,
    pub z_samples: usize,
    pub cluster_counts: Vec<usize>,
}

/// Σ_clusters max_label count(cluster, label) / n.
pub fn purity(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::Contract(format!(
            "purity: {} assignments vs {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    if assignments.is_empty() {
        return Err(Error::Contract("purity of an empty assignment".into()));
    }
    let mut counts: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *counts.entry(a).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = counts
        .values()
        .map(|by_label| by_label.values().copied().max().unwrap_or(0))
        .sum();
    Ok(majority as f64 / assignments.len() as f64)
}

/// Shannon entropy (nats) of the empirical distribution of `counts`.
pub fn usage_entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 / n as f64 * (n as f64 / c as f64).ln())
        .sum::<f64>()
}

/// Argmax cluster of q(y|x) for every example.
pub fn assign_clusters(model: &Gmvae, data: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let x = tape.constant(data.rows(chunk));
        let h = model.encode_shared(&mut tape, &b, x)?;
        let q = model.posterior_y(&mut tape, &b, h)?;
        out.extend(tape.value(q.logits).argmax_rows());
    }
    Ok(out)
}

/// Test-time metrics with y discretised to the argmax of q(y|x).
pub fn evaluate(model: &Gmvae, data: &Dataset, z_samples: usize, noise: &mut dyn Noise) -> Result<Metrics> {
    if z_samples < 1 {
        return Err(Error::Config("eval z_samples must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let k = model.config().k;
    let z_dim = model.config().z_dim;
    let mut recon_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut assignments = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let rows = chunk.len();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let x = tape.constant(data.rows(chunk));
        let h = model.encode_shared(&mut tape, &b, x)?;
        let q = model.posterior_y(&mut tape, &b, h)?;
        let kl = categorical_kl_uniform(&mut tape, &q)?;
        kl_sum += tape.value(kl).sum();
        let logits = tape.value(q.logits).clone();
        assignments.extend(logits.argmax_rows());
        let y = tape.constant(discretize_y(&logits));
        let qz = model.posterior_z(&mut tape, &b, h, y)?;
        for _ in 0..z_samples {
            let eps = tape.constant(noise.standard_normal(&[rows, z_dim])?);
            let z = sample_diag_gaussian_with(&mut tape, &qz, eps)?;
            let recon = model.decode(&mut tape, &b, z, Some(y))?;
            let ll = model.log_likelihood(&mut tape, x, &recon)?;
            recon_sum += tape.value(ll).sum() / z_samples as f64;
        }
    }
    let mut counts = vec![0usize; k];
    for &a in &assignments {
        counts[a] += 1;
    }
    let n = data.len() as f64;
    Ok(Metrics {
        examples: data.len(),
        reconstruction_ll: recon_sum / n,
        kl_y: kl_sum / n,
        usage_entropy: usage_entropy(&counts),
        purity: data.labels().map(|l| purity(&assignments, l)).transpose()?,
        z_samples,
        cluster_counts: counts,
    })
}
