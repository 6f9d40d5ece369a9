//! Binary model checkpoints.
//!
//! Layout (all integers little-endian `u32`, floats little-endian `f64`):
//!
//! ```text
//! magic            8 bytes  "GMVAECK1"
//! k, x_dim, z_dim, hidden_shared,
//! hidden_y[0], hidden_y[1], hidden_z[0], hidden_z[1]
//! n_decoder        then n_decoder widths
//! likelihood       u8  (0 = bernoulli, 1 = diag-gaussian)
//! decoder_uses_y   u8  (0 or 1)
//! temperature      f64
//! n_params
//! per parameter:   name_len, name bytes (UTF-8), rank, rank extents,
//!                  product(extents) f64 values in row-major order
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Gmvae, GmvaeConfig, Likelihood};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GMVAECK1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(model: &Gmvae) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        c.k,
        c.x_dim,
        c.z_dim,
        c.hidden_shared,
        c.hidden_y[0],
        c.hidden_y[1],
        c.hidden_z[0],
        c.hidden_z[1],
        c.hidden_decoder.len(),
    ] {
        put_u32(&mut out, v);
    }
    for &w in &c.hidden_decoder {
        put_u32(&mut out, w);
    }
    out.push(match c.likelihood {
        Likelihood::Bernoulli => 0,
        Likelihood::DiagGaussian => 1,
    });
    out.push(c.decoder_uses_y as u8);
    out.extend_from_slice(&c.temperature.to_le_bytes());
    put_u32(&mut out, model.params().len());
    for p in model.params().iter() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.rank());
        for &e in p.value.shape() {
            put_u32(&mut out, e);
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                detail: format!("checkpoint truncated: needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            detail: detail.into(),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Gmvae> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            detail: "not a GMVAE checkpoint (bad magic)".into(),
        });
    }
    let mut head = [0usize; 9];
    for v in &mut head {
        *v = r.u32()?;
    }
    let hidden_decoder = (0..head[8]).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let likelihood = match r.u8()? {
        0 => Likelihood::Bernoulli,
        1 => Likelihood::DiagGaussian,
        other => return Err(r.fail(format!("unknown likelihood tag {other}"))),
    };
    let decoder_uses_y = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(r.fail(format!("bad decoder_uses_y flag {other}"))),
    };
    let temperature = r.f64()?;
    let config = GmvaeConfig {
        k: head[0],
        x_dim: head[1],
        z_dim: head[2],
        hidden_shared: head[3],
        hidden_y: [head[4], head[5]],
        hidden_z: [head[6], head[7]],
        hidden_decoder,
        likelihood,
        temperature,
        decoder_uses_y,
    };
    let n = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.fail("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| r.fail("parameter extents overflow"))?;
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let value = Tensor::new(shape, data).map_err(|e| r.fail(e.to_string()))?;
        store.push(name, value);
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes after last parameter"));
    }
    Gmvae::from_params(config, store)
}

pub fn save(model: &Gmvae, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Gmvae> {
    decode(&std::fs::read(path)?)
}
