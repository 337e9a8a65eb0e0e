//! Binary checkpoint format.
//!
//! All integers little-endian:
//!
//! ```text
//! b"XRN1"
//! u32  version (1)
//! u32  config length, then that many bytes of UTF-8 JSON (ModelConfig)
//! u32  tensor count
//! per tensor:
//!     u16 name length, UTF-8 name
//!     u8  dtype tag (0 = f32)
//!     u8  ndim
//!     u64 x ndim dims
//!     f32 x product(dims) data
//! ```
//!
//! Tensors appear in parameter order. Trailing bytes are rejected.

use std::fs;
use std::path::Path;

use crate::arch::{ModelConfig, ModelGraph, Parameter};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"XRN1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

pub fn to_bytes(model: &ModelGraph<f32>) -> Vec<u8> {
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    let mut out = Vec::with_capacity(64 + config.len() + 4 * model.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.parameters().len() as u32).to_le_bytes());
    for p in model.parameters() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(DTYPE_F32);
        out.push(p.value.ndim() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!(
                "truncated: need {n} bytes for {what}, {} left",
                self.buf.len() - self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelGraph<f32>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return r.fail("bad magic, not an XRN1 checkpoint");
    }
    let version = r.u32("version")?;
    if version != VERSION {
        r.pos -= 4;
        return r.fail(format!("unsupported version {version}"));
    }
    let config_len = r.u32("config length")? as usize;
    let config_at = r.pos;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len, "config")?).map_err(|e| Error::Format {
        offset: config_at as u64,
        message: format!("bad config JSON: {e}"),
    })?;
    if let Err(e) = config.validate() {
        r.pos = config_at;
        return r.fail(format!("invalid config: {e}"));
    }

    let count = r.u32("tensor count")? as usize;
    let mut params = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let at = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format {
                offset: at as u64,
                message: format!("tensor {i} name is not UTF-8"),
            })?
            .to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            r.pos -= 1;
            return r.fail(format!("tensor {name} has unknown dtype tag {dtype}"));
        }
        let ndim = r.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("dimension")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let Some(n) = n.filter(|&n| n > 0 && ndim > 0) else {
            return r.fail(format!("tensor {name} has invalid shape {shape:?}"));
        };
        let bytes = r.take(n.checked_mul(4).unwrap_or(usize::MAX), "tensor data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let value = Tensor::new(&shape, data).expect("shape checked");
        params.push(Parameter { name, value });
    }
    if r.pos != buf.len() {
        return r.fail(format!("{} trailing bytes", buf.len() - r.pos));
    }
    ModelGraph::from_parameters(config, params).map_err(|e| Error::Format {
        offset: r.pos as u64,
        message: format!("tensors do not match the config: {e}"),
    })
}

pub fn save_checkpoint(model: &ModelGraph<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelGraph<f32>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Arch;

    fn mini() -> ModelGraph<f32> {
        ModelGraph::new(&ModelConfig { input_size: 16, seed: 4, ..ModelConfig::mini(Arch::Wnet, 3) }).unwrap()
    }

    fn bits(m: &ModelGraph<f32>) -> Vec<(String, Vec<usize>, Vec<u32>)> {
        m.parameters()
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec(), p.value.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = mini();
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn header_layout() {
        let b = to_bytes(&mini());
        assert_eq!(&b[..4], b"XRN1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        let clen = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let cfg: ModelConfig = serde_json::from_slice(&b[12..12 + clen]).unwrap();
        assert_eq!(cfg.arch, Arch::Wnet);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let b = to_bytes(&ModelGraph::<f32>::new(&ModelConfig {
            input_size: 4,
            base_channels: 1,
            depth: 1,
            ..ModelConfig::mini(Arch::Unet, 2)
        })
        .unwrap());
        for cut in 0..b.len() {
            match from_bytes(&b[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn corruption_is_rejected() {
        let good = to_bytes(&mini());

        let mut bad = good.clone();
        bad[0] = b'Y';
        assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 0, .. })));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 4, .. })));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(from_bytes(&bad), Err(Error::Format { .. })));

        let mut bad = good;
        bad[12] = b'!';
        assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 12, .. })));
    }
}
