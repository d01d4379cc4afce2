//! Little-endian weight files.
//!
//! Header: magic, u32 version, u32 blocks, u32 features, f32 residual
//! scaling, u32 tensor count. Each tensor: u8 name length, name, u32 rank,
//! u32 dims, f32 data in row-major order.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian as LE};

use super::{Architecture, SrModel};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"EDSSRW1\0";
const VERSION: u32 = 1;

fn tensor_specs(arch: &Architecture) -> Vec<(String, Vec<usize>)> {
    arch.conv_shapes()
        .into_iter()
        .enumerate()
        .flat_map(|(i, (ci, co))| {
            let name = arch.conv_name(i);
            [
                (format!("{name}.weight"), vec![co, ci, 3, 3]),
                (format!("{name}.bias"), vec![co]),
            ]
        })
        .collect()
}

pub fn save_weights(model: &SrModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let specs = tensor_specs(&model.arch);
    let mut buf = Vec::with_capacity(64 + 4 * model.param_count());
    buf.extend_from_slice(WEIGHTS_MAGIC);
    let mut word = [0u8; 4];
    let mut put_u32 = |buf: &mut Vec<u8>, v: u32| {
        LE::write_u32(&mut word, v);
        buf.extend_from_slice(&word);
    };
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, model.arch.blocks as u32);
    put_u32(&mut buf, model.arch.features as u32);
    buf.extend_from_slice(&model.residual_scaling.to_le_bytes());
    put_u32(&mut buf, specs.len() as u32);
    for ((name, dims), data) in specs.iter().zip(model.params.tensors()) {
        buf.push(name.len() as u8);
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, dims.len() as u32);
        for &d in dims {
            put_u32(&mut buf, d as u32);
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "weight file truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LE::read_u32(self.take(4)?))
    }
}

/// Loads a model with whatever architecture the file declares.
pub fn load_weights(path: impl AsRef<Path>) -> Result<SrModel<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(8).ok() != Some(&WEIGHTS_MAGIC[..]) {
        return Err(Error::Format(format!("{} is not a weight file (bad magic)", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Unsupported(format!("weight file version {version}")));
    }
    let blocks = r.u32()? as usize;
    let features = r.u32()? as usize;
    let arch = Architecture::new(blocks, features).map_err(|e| Error::Format(e.to_string()))?;
    let residual_scaling = LE::read_f32(r.take(4)?);
    let count = r.u32()? as usize;
    let specs = tensor_specs(&arch);
    if count != specs.len() {
        return Err(Error::Format(format!(
            "expected {} tensors for B={blocks}, F={features}, file has {count}",
            specs.len()
        )));
    }
    let mut model = SrModel::<f32>::zeros(arch);
    model.residual_scaling = residual_scaling;
    for ((name, dims), dst) in specs.iter().zip(model.params.tensors_mut()) {
        let len = r.take(1)?[0] as usize;
        let got_name = r.take(len)?;
        if got_name != name.as_bytes() {
            return Err(Error::Format(format!(
                "expected tensor `{name}`, found `{}`",
                String::from_utf8_lossy(got_name)
            )));
        }
        let ndim = r.u32()? as usize;
        let got_dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &got_dims != dims {
            return Err(Error::Format(format!("tensor `{name}` has dims {got_dims:?}, expected {dims:?}")));
        }
        let raw = r.take(4 * dst.len())?;
        LE::read_f32_into(raw, dst);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes in weight file", bytes.len() - r.pos)));
    }
    if !model.params.all_finite() || !residual_scaling.is_finite() {
        return Err(Error::NonFinite("weight file contains non-finite values".into()));
    }
    Ok(model)
}

/// Loads a model and insists it has the requested architecture.
pub fn load_weights_expecting(path: impl AsRef<Path>, arch: Architecture) -> Result<SrModel<f32>> {
    let model = load_weights(path)?;
    if model.arch != arch {
        return Err(Error::invalid(format!(
            "weight file has B={}, F={} but B={}, F={} was requested",
            model.arch.blocks, model.arch.features, arch.blocks, arch.features
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward, init_model};
    use ndarray::Array2;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let mut m = init_model(Architecture::new(2, 3).unwrap(), 8);
        m.params.convs[2].bias.fill(0.25);
        m.residual_scaling = 0.3;
        save_weights(&m, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back, m);
        let x = Array2::from_shape_fn((7, 9), |(i, j)| (i * j) as f32 / 50.0);
        assert_eq!(forward(&m, &x).unwrap(), forward(&back, &x).unwrap());
        // Per conv: weight record 1 + (L + 7) + 4 + 16 bytes, bias record 1 + (L + 5) + 4 + 4.
        let expect_len = 8
            + 5 * 4
            + (0..m.arch.conv_count()).map(|i| 2 * m.arch.conv_name(i).len() + 42).sum::<usize>()
            + 4 * m.param_count();
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, expect_len);
    }

    #[test]
    fn rejects_corruption_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let arch = Architecture::new(1, 2).unwrap();
        save_weights(&init_model(arch, 1), &path).unwrap();
        assert!(load_weights_expecting(&path, arch).is_ok());
        assert!(load_weights_expecting(&path, Architecture::new(2, 2).unwrap()).is_err());

        let good = fs::read(&path).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Format(_))));

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Format(_))));

        assert!(matches!(load_weights(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
