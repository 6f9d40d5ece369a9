//! Datasets: feature matrices in [0,1] with optional labels that training never sees.

pub mod idx;
pub mod synth;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub use idx::{load_idx_images, load_idx_labels};
pub use synth::{synth_gmm, SynthData, SynthParams};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Tensor,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Contract(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if let Some(v) = features.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("feature value {v} outside [0, 1]")));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::Contract(format!(
                    "{} labels for {} examples",
                    l.len(),
                    features.rows()
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn is_binary(&self) -> bool {
        self.features.data().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// The listed rows as a `[len × dim]` block.
    pub fn rows(&self, indices: &[usize]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Tensor::new(vec![indices.len(), d], data).expect("row block")
    }

    /// # Panics
    /// If `indices` is empty or out of range.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Splits off the last `fraction` of rows (rounded), keeping order.
    pub fn split_tail(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!(
                "split fraction must lie in (0, 1), got {fraction}"
            )));
        }
        let n = self.len();
        let tail = ((n as f64) * fraction).round() as usize;
        if tail == 0 || tail == n {
            return Err(Error::Config(format!(
                "splitting {n} examples at fraction {fraction} leaves an empty side"
            )));
        }
        let head: Vec<usize> = (0..n - tail).collect();
        let rest: Vec<usize> = (n - tail..n).collect();
        Ok((self.subset(&head), self.subset(&rest)))
    }

    pub fn with_features(&self, features: Tensor) -> Result<Dataset> {
        Dataset::new(self.name.clone(), features, self.labels.clone())
    }

    /// One row per example, comma-separated features, then the label (or
    /// nothing) in the last column. No header.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        for r in 0..self.len() {
            let mut line = self
                .features
                .row(r)
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            if let Some(l) = &self.labels {
                line.push(',');
                line.push_str(&l[r].to_string());
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads the format of [`Dataset::write_csv`]; `labelled` says whether the
    /// last column is a label.
    pub fn read_csv(name: &str, input: impl BufRead, labelled: bool) -> Result<Dataset> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut offset = 0;
        for line in input.lines() {
            let line = line?;
            let line_len = line.len() + 1;
            if line.trim().is_empty() {
                offset += line_len;
                continue;
            }
            let mut fields: Vec<&str> = line.split(',').collect();
            let parse_err = |detail: String| Error::Parse { offset, detail };
            if labelled {
                let l = fields
                    .pop()
                    .ok_or_else(|| parse_err("empty row".into()))?
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| parse_err(format!("bad label: {e}")))?;
                labels.push(l);
            }
            let row = fields
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("bad feature: {e}")))?;
            rows.push(row);
            offset += line_len;
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                offset: 0,
                detail: "no rows".into(),
            });
        }
        let features = Tensor::from_rows(&rows)?;
        Dataset::new(name, features, labelled.then_some(labels))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinarizeMode {
    Threshold,
    Stochastic,
}

/// Threshold mode maps v to 1 when v ≥ threshold; stochastic mode draws Bernoulli(v).
pub fn binarize(features: &Tensor, mode: BinarizeMode, threshold: f64, rng: &mut RngStream) -> Tensor {
    match mode {
        BinarizeMode::Threshold => features.map(|v| if v >= threshold { 1.0 } else { 0.0 }),
        BinarizeMode::Stochastic => features.map(|v| if rng.uniform() < v { 1.0 } else { 0.0 }),
    }
}

/// Row-index blocks covering `0..n` once each, in order or shuffled; the last
/// block may be short.
pub fn batches(n: usize, batch_size: usize, shuffle: bool, rng: &mut RngStream) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
