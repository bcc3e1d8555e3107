//! Binary checkpoint container for [`FieldParams`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "SNSRFLD\0"
//! version      u32       1
//! config_len   u32       length of the TOML config echo
//! config       bytes     FieldConfig serialized as TOML (UTF-8)
//! tensors      u32       number of tensor records
//! per tensor:
//!   name_len   u16
//!   name       bytes     UTF-8
//!   ndim       u8
//!   dims       u64 × ndim
//!   data       f64 × prod(dims), little-endian IEEE-754
//! ```
//!
//! Tensors appear in [`TENSOR_NAMES`](super::TENSOR_NAMES) order with shapes
//! `hash [entries, features]`, `triplane [3, resolution, scale_bins, features]`,
//! `mlp.w1 [hidden, inputs]`, `mlp.b1 [hidden]`, `mlp.w2 [hidden]`,
//! `mlp.b2 [1]`, `log_sharpness [1]`. Loading restores every value bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use super::{FieldConfig, FieldParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SNSRFLD\0";
pub const VERSION: u32 = 1;

fn shapes(params: &FieldParams) -> [Vec<u64>; 7] {
    let c = &params.config;
    let inputs = params.mlp.inputs as u64;
    let hidden = params.mlp.hidden as u64;
    [
        vec![params.hash.entry_count() as u64, c.hash_features as u64],
        vec![
            3,
            c.plane_resolution as u64,
            c.plane_scale_bins as u64,
            c.plane_features as u64,
        ],
        vec![hidden, inputs],
        vec![hidden],
        vec![hidden],
        vec![1],
        vec![1],
    ]
}

pub fn write_checkpoint<W: Write>(params: &FieldParams, mut w: W) -> std::io::Result<()> {
    let config = toml::to_string(&params.config).map_err(std::io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(config.as_bytes())?;
    let tensors = params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for ((name, data), dims) in tensors.iter().zip(shapes(params)) {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[dims.len() as u8])?;
        for d in &dims {
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(data.len() * 8);
        for v in data.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format("checkpoint", format!("truncated: {e}")))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<FieldParams> {
    let bad = |d: String| Error::format("checkpoint", d);
    let mut r = Reader { inner: r };
    if r.bytes(8)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let text = String::from_utf8(r.bytes(len)?).map_err(|e| bad(e.to_string()))?;
    let config: FieldConfig = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let mut params = FieldParams::zeros(&config)?;
    let expected = shapes(&params);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(bad(format!("expected {} tensors, found {count}", expected.len())));
    }
    for ((name, slot), dims_expected) in params.tensors_mut().into_iter().zip(expected) {
        let nlen = r.u16()? as usize;
        let found = String::from_utf8(r.bytes(nlen)?).map_err(|e| bad(e.to_string()))?;
        if found != name {
            return Err(bad(format!("expected tensor {name}, found {found}")));
        }
        let ndim = r.u8()? as usize;
        let dims = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if dims != dims_expected {
            return Err(bad(format!(
                "tensor {name}: shape {dims:?} does not match config shape {dims_expected:?}"
            )));
        }
        let raw = r.bytes(slot.len() * 8)?;
        for (v, chunk) in slot.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    params.triplane.scale_min = config.scale_min;
    params.triplane.scale_max = config.scale_max;
    Ok(params)
}

pub fn save(params: &FieldParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<FieldParams> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> FieldConfig {
        FieldConfig {
            hash_levels: 3,
            hash_log2_table: 8,
            hash_base_resolution: 4,
            hash_finest_resolution: 16,
            plane_resolution: 8,
            plane_scale_bins: 4,
            plane_features: 2,
            hidden: 8,
            scale_min: 1e-3,
            scale_max: 5e-2,
            ..FieldConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = FieldParams::geometric_init(&small_config(), 0.4, &mut rng).unwrap();
        for (_, t) in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v += rng.random_range(-1.0..1.0) * 1e-3);
        }
        params.triplane.data[5] = -0.0;
        params.mlp.b2 = f64::MIN_POSITIVE / 4.0;
        let mut bytes = Vec::new();
        write_checkpoint(&params, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        for ((_, a), (_, b)) in params.tensors().iter().zip(back.tensors()) {
            assert_eq!(a.len(), b.len());
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.config, params.config);

        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_corruption() {
        let params = FieldParams::zeros(&small_config()).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&params, &mut bytes).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(wrong.as_slice()).is_err());
        let mut wrong = bytes;
        wrong[8] = 7;
        assert!(read_checkpoint(wrong.as_slice()).is_err());
    }
}
