//! Synthetic Gaussian mixtures with known cluster labels.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub k: usize,
    pub n_per_cluster: usize,
    pub d: usize,
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub dataset: Dataset,
    /// Raw value mapped to 0.
    pub min: f64,
    /// Raw value mapped to 1.
    pub max: f64,
}

impl SynthData {
    /// Maps a rescaled feature back to the generating coordinates.
    pub fn unscale(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

/// Mean of component `k`: separation · e_{k mod d} · (1 + ⌊k/d⌋).
pub fn component_mean(k: usize, d: usize, separation: f64) -> Vec<f64> {
    let mut m = vec![0.0; d];
    m[k % d] = separation * (1 + k / d) as f64;
    m
}

/// Draws `n_per_cluster` points from each N(mean_k, σ²I), shuffles the rows,
/// and rescales every feature with one global affine map onto [0, 1].
pub fn synth_gmm(p: &SynthParams) -> Result<SynthData> {
    if p.k < 2 || p.d < 1 || !(p.separation > 0.0) || !(p.sigma > 0.0) || p.n_per_cluster < 1 {
        return Err(Error::Config(format!(
            "synth_gmm needs k >= 2, d >= 1, n_per_cluster >= 1, separation > 0, sigma > 0; got {p:?}"
        )));
    }
    let mut rng = RngStream::new(p.seed);
    let n = p.k * p.n_per_cluster;
    let mut points: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
    for k in 0..p.k {
        let mean = component_mean(k, p.d, p.separation);
        for _ in 0..p.n_per_cluster {
            let x = mean
                .iter()
                .map(|m| m + p.sigma * rng.standard_normal_scalar())
                .collect();
            points.push((x, k));
        }
    }
    rng.shuffle(&mut points);
    let (min, max) = points
        .iter()
        .flat_map(|(x, _)| x.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = max - min;
    let mut data = Vec::with_capacity(n * p.d);
    let mut labels = Vec::with_capacity(n);
    for (x, k) in points {
        data.extend(x.iter().map(|v| ((v - min) / span).clamp(0.0, 1.0)));
        labels.push(k);
    }
    let features = Tensor::new(vec![n, p.d], data)?;
    let dataset = Dataset::new(format!("synth-gmm-k{}-d{}", p.k, p.d), features, Some(labels))?;
    Ok(SynthData { dataset, min, max })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize, d: usize, s: f64) -> SynthParams {
        SynthParams {
            k,
            n_per_cluster: 2000,
            d,
            separation: s,
            sigma: 1.0,
            seed: 11,
        }
    }

    fn raw_cluster_means(sd: &SynthData, k: usize) -> Vec<Vec<f64>> {
        let ds = &sd.dataset;
        let mut sums = vec![vec![0.0; ds.dim()]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in ds.labels().unwrap().iter().enumerate() {
            counts[l] += 1;
            for (s, &v) in sums[l].iter_mut().zip(ds.features().row(r)) {
                *s += sd.unscale(v);
            }
        }
        sums.into_iter()
            .zip(counts)
            .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
            .collect()
    }

    #[test]
    fn cluster_means_are_separated_as_placed() {
        let sd = synth_gmm(&params(2, 2, 10.0)).unwrap();
        let m = raw_cluster_means(&sd, 2);
        // means sit at (10, 0) and (0, 10): each coordinate differs by 10σ
        for dim in 0..2 {
            let gap = (m[0][dim] - m[1][dim]).abs();
            assert!((gap - 10.0).abs() < 0.5, "dim {dim}: {gap}");
        }
        let dist = ((m[0][0] - m[1][0]).powi(2) + (m[0][1] - m[1][1]).powi(2)).sqrt();
        assert!((dist - 10.0 * 2f64.sqrt()).abs() < 0.05 * 10.0 * 2f64.sqrt());
    }

    #[test]
    fn labels_balanced_and_features_in_unit_interval() {
        let sd = synth_gmm(&SynthParams { n_per_cluster: 37, ..params(3, 4, 8.0) }).unwrap();
        let mut counts = [0; 3];
        for &l in sd.dataset.labels().unwrap() {
            counts[l] += 1;
        }
        assert_eq!(counts, [37; 3]);
        let f = sd.dataset.features().data();
        assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(f.contains(&0.0) && f.contains(&1.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_gmm(&params(3, 5, 6.0)).unwrap();
        let b = synth_gmm(&params(3, 5, 6.0)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = synth_gmm(&SynthParams { seed: 12, ..params(3, 5, 6.0) }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(synth_gmm(&params(1, 2, 1.0)).is_err());
        assert!(synth_gmm(&SynthParams { sigma: 0.0, ..params(2, 2, 1.0) }).is_err());
    }

    fn normal_tail(t: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        1.0 - Normal::new(0.0, 1.0).unwrap().cdf(t)
    }

    /// With equal weights and shared isotropic covariance, the Bayes error is
    /// bounded by Σ_{j≠k} P(x closer to mean_j | k) = Σ Φ̄(‖μ_k − μ_j‖ / 2σ), averaged over k.
    #[test]
    fn well_separated_mixtures_are_nearly_bayes_separable() {
        for (k, d) in [(3, 16), (10, 4), (5, 2), (40, 64)] {
            let s = 8.0;
            let means: Vec<_> = (0..k).map(|i| component_mean(i, d, s)).collect();
            let mut bound = 0.0;
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        let dist: f64 = means[i]
                            .iter()
                            .zip(&means[j])
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        bound += normal_tail(dist / 2.0) / k as f64;
                    }
                }
            }
            assert!(bound < 1e-3, "k={k} d={d}: {bound}");
        }
    }

    #[test]
    fn nearest_mean_classifier_is_nearly_perfect() {
        let p = SynthParams { n_per_cluster: 500, ..params(3, 16, 10.0) };
        let sd = synth_gmm(&p).unwrap();
        let means: Vec<_> = (0..3).map(|i| component_mean(i, 16, 10.0)).collect();
        let ds = &sd.dataset;
        let mut errors = 0;
        for (r, &l) in ds.labels().unwrap().iter().enumerate() {
            let x: Vec<f64> = ds.features().row(r).iter().map(|&v| sd.unscale(v)).collect();
            let best = (0..3)
                .min_by(|&a, &b| {
                    let da: f64 = x.iter().zip(&means[a]).map(|(u, v)| (u - v).powi(2)).sum();
                    let db: f64 = x.iter().zip(&means[b]).map(|(u, v)| (u - v).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            errors += (best != l) as usize;
        }
        assert!(errors <= 1, "{errors} misclassified");
    }
}
