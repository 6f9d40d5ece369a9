//! Seeded random streams and the noise sources the estimators draw from.
//!
//! Every stochastic operation takes `&mut dyn Noise`, so tests can swap the
//! random stream for pinned or replayed noise.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributions::gumbel_from_uniform;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp for uniforms fed into log transforms; the upper clamp is 1 minus this.
pub const UNIFORM_CLAMP: f64 = 1e-12;

/// A reproducible random stream: identical seeds give bit-identical draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// An independent stream for (seed, purpose, index), e.g. one per epoch.
    pub fn derive(seed: u64, purpose: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
        RngStream {
            seed,
            rng,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform clamped into [1e-12, 1 - 1e-12].
    pub fn uniform_open(&mut self) -> f64 {
        self.uniform().clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Standard normal via the Box–Muller transform; the second variate of
    /// each pair is kept for the next call.
    pub fn standard_normal_scalar(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Source of the two noise kinds the model consumes.
pub trait Noise {
    fn gumbel(&mut self, shape: &[usize]) -> Result<Tensor>;
    fn standard_normal(&mut self, shape: &[usize]) -> Result<Tensor>;
}

fn filled(shape: &[usize], mut f: impl FnMut() -> f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| f()).collect()).expect("noise shape")
}

impl Noise for RngStream {
    fn gumbel(&mut self, shape: &[usize]) -> Result<Tensor> {
        Ok(filled(shape, || gumbel_from_uniform(self.uniform_open())))
    }

    fn standard_normal(&mut self, shape: &[usize]) -> Result<Tensor> {
        Ok(filled(shape, || self.standard_normal_scalar()))
    }
}

/// All-zero noise: Gumbel-softmax becomes softmax and z = μ.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

impl Noise for ZeroNoise {
    fn gumbel(&mut self, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::zeros(shape))
    }

    fn standard_normal(&mut self, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::zeros(shape))
    }
}

/// Replays a fixed script of noise tensors in order.
#[derive(Clone, Debug, Default)]
pub struct ScriptedNoise {
    gumbel: VecDeque<Tensor>,
    normal: VecDeque<Tensor>,
}

impl ScriptedNoise {
    pub fn new(gumbel: Vec<Tensor>, normal: Vec<Tensor>) -> Self {
        ScriptedNoise {
            gumbel: gumbel.into(),
            normal: normal.into(),
        }
    }

    fn next(queue: &mut VecDeque<Tensor>, kind: &str, shape: &[usize]) -> Result<Tensor> {
        let t = queue
            .pop_front()
            .ok_or_else(|| Error::Contract(format!("scripted {kind} noise exhausted")))?;
        if t.shape() != shape {
            return Err(Error::dim("scripted noise", t.shape(), shape));
        }
        Ok(t)
    }
}

impl Noise for ScriptedNoise {
    fn gumbel(&mut self, shape: &[usize]) -> Result<Tensor> {
        Self::next(&mut self.gumbel, "gumbel", shape)
    }

    fn standard_normal(&mut self, shape: &[usize]) -> Result<Tensor> {
        Self::next(&mut self.normal, "normal", shape)
    }
}

/// Passes draws through from an inner source while recording them, so the
/// same draws can be replayed elsewhere (common random numbers).
#[derive(Debug)]
pub struct RecordingNoise<N> {
    inner: N,
    gumbel: Vec<Tensor>,
    normal: Vec<Tensor>,
}

impl<N: Noise> RecordingNoise<N> {
    pub fn new(inner: N) -> Self {
        RecordingNoise {
            inner,
            gumbel: Vec::new(),
            normal: Vec::new(),
        }
    }

    pub fn into_script(self) -> ScriptedNoise {
        ScriptedNoise::new(self.gumbel, self.normal)
    }
}

impl<N: Noise> Noise for RecordingNoise<N> {
    fn gumbel(&mut self, shape: &[usize]) -> Result<Tensor> {
        let t = self.inner.gumbel(shape)?;
        self.gumbel.push(t.clone());
        Ok(t)
    }

    fn standard_normal(&mut self, shape: &[usize]) -> Result<Tensor> {
        let t = self.inner.standard_normal(shape)?;
        self.normal.push(t.clone());
        Ok(t)
    }
}
