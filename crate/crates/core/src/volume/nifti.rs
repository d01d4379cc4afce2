//! Minimal NIfTI-1 single-file (`.nii` / `.nii.gz`) reader and writer.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian as LE};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::{Array3, ShapeBuilder};

use super::Volume;
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_DESCRIP: usize = 148;
const OFF_QFORM_CODE: usize = 252;
const OFF_MAGIC: usize = 344;

struct Header {
    dims: [usize; 3],
    datatype: i16,
    spacing: [f64; 3],
    vox_offset: usize,
    scl_slope: f64,
    scl_inter: f64,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_SIZE}-byte header",
            bytes.len()
        )));
    }
    if LE::read_i32(&bytes[0..4]) != HEADER_SIZE as i32 {
        return Err(Error::Format(
            "sizeof_hdr is not 348 (not a little-endian NIfTI-1 file)".into(),
        ));
    }
    if &bytes[OFF_MAGIC..OFF_MAGIC + 4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"n+1\\0\"",
            String::from_utf8_lossy(&bytes[OFF_MAGIC..OFF_MAGIC + 4])
        )));
    }

    let mut dim = [0i16; 8];
    LE::read_i16_into(&bytes[OFF_DIM..OFF_DIM + 16], &mut dim);
    let ndim = dim[0];
    if !(3..=7).contains(&ndim) {
        return Err(Error::Unsupported(format!("dim[0] = {ndim}; only 3D volumes are read")));
    }
    if dim[4..=ndim as usize].iter().any(|&d| d > 1) {
        return Err(Error::Unsupported(format!(
            "volume has extra non-singleton dimensions {:?}",
            &dim[4..=ndim as usize]
        )));
    }
    if dim[1..=3].iter().any(|&d| d < 1) {
        return Err(Error::Format(format!("non-positive dimension in {:?}", &dim[1..=3])));
    }

    let datatype = LE::read_i16(&bytes[OFF_DATATYPE..OFF_DATATYPE + 2]);
    if ![DT_UINT8, DT_INT16, DT_FLOAT32].contains(&datatype) {
        return Err(Error::Unsupported(format!(
            "datatype {datatype}; supported are uint8 (2), int16 (4), float32 (16)"
        )));
    }

    let mut pixdim = [0f32; 8];
    LE::read_f32_into(&bytes[OFF_PIXDIM..OFF_PIXDIM + 32], &mut pixdim);
    let spacing = [pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64];
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Format(format!("non-positive pixdim {spacing:?}")));
    }

    let vox_offset = LE::read_f32(&bytes[OFF_VOX_OFFSET..OFF_VOX_OFFSET + 4]);
    if !(vox_offset >= DATA_OFFSET as f32) {
        return Err(Error::Format(format!("vox_offset {vox_offset} < {DATA_OFFSET}")));
    }

    Ok(Header {
        dims: [dim[1] as usize, dim[2] as usize, dim[3] as usize],
        datatype,
        spacing,
        vox_offset: vox_offset as usize,
        scl_slope: LE::read_f32(&bytes[OFF_SCL_SLOPE..OFF_SCL_SLOPE + 4]) as f64,
        scl_inter: LE::read_f32(&bytes[OFF_SCL_INTER..OFF_SCL_INTER + 4]) as f64,
    })
}

fn decode_voxels(h: &Header, bytes: &[u8]) -> Result<Vec<f64>> {
    let n: usize = h.dims.iter().product();
    let width = match h.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        _ => 4,
    };
    let body = bytes
        .get(h.vox_offset..)
        .filter(|b| b.len() >= n * width)
        .ok_or_else(|| {
            Error::Format(format!(
                "truncated voxel data: need {} bytes after offset {}",
                n * width,
                h.vox_offset
            ))
        })?;
    let body = &body[..n * width];
    Ok(match h.datatype {
        DT_UINT8 => body.iter().map(|&b| b as f64).collect(),
        DT_INT16 => body.chunks_exact(2).map(|c| LE::read_i16(c) as f64).collect(),
        _ => body.chunks_exact(4).map(|c| LE::read_f32(c) as f64).collect(),
    })
}

fn to_array(dims: [usize; 3], voxels: Vec<f64>) -> Array3<f64> {
    // File order has x varying fastest.
    let fortran = Array3::from_shape_vec((dims[0], dims[1], dims[2]).f(), voxels)
        .expect("voxel count checked against header");
    fortran.as_standard_layout().into_owned()
}

/// Reads a NIfTI-1 volume, applying `scl_slope` / `scl_inter` when the slope is nonzero.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let h = parse_header(&bytes)?;
    let mut voxels = decode_voxels(&h, &bytes)?;
    if h.scl_slope != 0.0 && !(h.scl_slope == 1.0 && h.scl_inter == 0.0) {
        for v in &mut voxels {
            *v = *v * h.scl_slope + h.scl_inter;
        }
    }
    Volume::new(to_array(h.dims, voxels), h.spacing)
}

/// Reads a NIfTI-1 volume keeping stored values as-is and recording a positive
/// `scl_slope` (with zero intercept) as the volume's intensity scale.
///
/// This is the inverse of [`save_volume`] for normalized volumes. Files with a
/// nonzero intercept fall back to [`load_volume`] semantics.
pub fn load_volume_raw(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let h = parse_header(&bytes)?;
    let voxels = decode_voxels(&h, &bytes)?;
    if h.scl_slope > 0.0 && h.scl_inter == 0.0 {
        Volume::with_scale(to_array(h.dims, voxels), h.spacing, h.scl_slope)
    } else {
        drop(voxels);
        load_volume(path)
    }
}

fn encode(v: &Volume) -> Result<Vec<u8>> {
    let dims = v.dims();
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Unsupported(format!("dimensions {dims:?} exceed NIfTI-1 limits")));
    }
    let mut buf = vec![0u8; DATA_OFFSET + 4 * v.len()];
    LE::write_i32(&mut buf[0..4], HEADER_SIZE as i32);
    buf[38] = b'r';
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    LE::write_i16_into(&dim, &mut buf[OFF_DIM..OFF_DIM + 16]);
    LE::write_i16(&mut buf[OFF_DATATYPE..OFF_DATATYPE + 2], DT_FLOAT32);
    LE::write_i16(&mut buf[OFF_BITPIX..OFF_BITPIX + 2], 32);
    let [sx, sy, sz] = v.spacing();
    let pixdim: [f32; 8] = [1.0, sx as f32, sy as f32, sz as f32, 1.0, 1.0, 1.0, 1.0];
    LE::write_f32_into(&pixdim, &mut buf[OFF_PIXDIM..OFF_PIXDIM + 32]);
    LE::write_f32(&mut buf[OFF_VOX_OFFSET..OFF_VOX_OFFSET + 4], DATA_OFFSET as f32);
    LE::write_f32(&mut buf[OFF_SCL_SLOPE..OFF_SCL_SLOPE + 4], v.intensity_scale() as f32);
    LE::write_f32(&mut buf[OFF_SCL_INTER..OFF_SCL_INTER + 4], 0.0);
    // mm + s
    buf[OFF_XYZT_UNITS] = 2 | 8;
    let descrip = b"edssr";
    buf[OFF_DESCRIP..OFF_DESCRIP + descrip.len()].copy_from_slice(descrip);
    LE::write_i16(&mut buf[OFF_QFORM_CODE..OFF_QFORM_CODE + 2], 1);
    buf[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC);

    let body = &mut buf[DATA_OFFSET..];
    let data = v.data();
    let mut i = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                LE::write_f32(&mut body[i..i + 4], data[[x, y, z]] as f32);
                i += 4;
            }
        }
    }
    Ok(buf)
}

/// Writes a float32 NIfTI-1 file; gzip-compressed when the path ends in `.gz`.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(v)?;
    let gz = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let out = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
