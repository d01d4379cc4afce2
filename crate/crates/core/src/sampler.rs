//! Training-pair synthesis: in-plane rotations, paired blurring and random
//! co-located patch extraction from axial slices.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian as LE};
use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::degrade::blur_inplane;
use crate::error::{Error, Result};
use crate::seed;
use crate::volume::Volume;

/// Extra draws allowed per requested patch when rejecting background.
const MAX_ATTEMPTS_PER_PATCH: usize = 10;

const DUMP_MAGIC: &[u8; 6] = b"ESPT1\0";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchMeta {
    pub angle_deg: f64,
    pub slice: usize,
    /// Corner along the rotated frame's `x` axis.
    pub x0: usize,
    pub y0: usize,
}

/// Co-located low/high resolution patches. Array axis 0 is the blurred axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub lr: Array2<f32>,
    pub hr: Array2<f32>,
    /// Absent for pairs read back from a dump file.
    pub meta: Option<PatchMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub patch_size: usize,
    pub patches_per_slice: usize,
    pub angles_deg: Vec<f64>,
    pub foreground_threshold: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            patches_per_slice: 32,
            angles_deg: vec![0.0, 30.0, 60.0],
            foreground_threshold: 0.05,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 {
            return Err(Error::invalid(format!("patch size {} < 8", self.patch_size)));
        }
        if self.patches_per_slice == 0 {
            return Err(Error::invalid("patches_per_slice must be >= 1"));
        }
        if self.angles_deg.is_empty() {
            return Err(Error::invalid("at least one rotation angle is required"));
        }
        if let Some(a) = self.angles_deg.iter().find(|a| !(0.0..180.0).contains(*a)) {
            return Err(Error::invalid(format!("angle {a} outside [0, 180)")));
        }
        if !(0.0..1.0).contains(&self.foreground_threshold) {
            return Err(Error::invalid(format!(
                "foreground threshold {} outside [0, 1)",
                self.foreground_threshold
            )));
        }
        Ok(())
    }
}

fn bilinear(img: &ArrayView2<f64>, sx: f64, sy: f64) -> f64 {
    const EPS: f64 = 1e-9;
    let (nx, ny) = img.dim();
    let (mx, my) = ((nx - 1) as f64, (ny - 1) as f64);
    if sx < -EPS || sy < -EPS || sx > mx + EPS || sy > my + EPS {
        return 0.0;
    }
    let sx = sx.clamp(0.0, mx);
    let sy = sy.clamp(0.0, my);
    let x0 = (sx.floor() as usize).min(nx.saturating_sub(2));
    let y0 = (sy.floor() as usize).min(ny.saturating_sub(2));
    let x1 = (x0 + 1).min(nx - 1);
    let y1 = (y0 + 1).min(ny - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let top = img[[x0, y0]] * (1.0 - fx) + img[[x1, y0]] * fx;
    let bot = img[[x0, y1]] * (1.0 - fx) + img[[x1, y1]] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Rotation by a multiple of 90 degrees as an index permutation, when it maps
/// the grid onto itself.
fn right_angle_map(quarter: u32, nx: usize, ny: usize) -> Option<impl Fn(usize, usize) -> (usize, usize)> {
    if quarter % 2 == 1 && nx != ny {
        return None;
    }
    Some(move |x: usize, y: usize| match quarter {
        0 => (x, y),
        1 => (y, nx - 1 - x),
        2 => (nx - 1 - x, ny - 1 - y),
        _ => (ny - 1 - y, x),
    })
}

fn rotate_bilinear(v: &Volume, theta_deg: f64) -> Array3<f64> {
    let [nx, ny, nz] = v.dims();
    let (sin, cos) = theta_deg.to_radians().sin_cos();
    let cx = (nx as f64 - 1.0) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    let mut out = Array3::<f64>::zeros((nx, ny, nz));
    for z in 0..nz {
        let src = v.data().index_axis(Axis(2), z);
        let mut dst = out.index_axis_mut(Axis(2), z);
        for x in 0..nx {
            let dx = x as f64 - cx;
            for y in 0..ny {
                let dy = y as f64 - cy;
                // Inverse map: output sample pulls from the source rotated by -theta.
                let sx = cx + cos * dx + sin * dy;
                let sy = cy - sin * dx + cos * dy;
                dst[[x, y]] = bilinear(&src, sx, sy);
            }
        }
    }
    out
}

/// Rotates every axial slice about its center by `theta_deg` (counter-clockwise
/// in the `(x, y)` plane), bilinear, zero outside the support.
pub fn rotate_xy(v: &Volume, theta_deg: f64) -> Volume {
    let t = theta_deg.rem_euclid(360.0);
    let [nx, ny, nz] = v.dims();
    let data = if t % 90.0 == 0.0 {
        match right_angle_map((t / 90.0) as u32, nx, ny) {
            Some(map) => Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| {
                let (sx, sy) = map(x, y);
                v.data()[[sx, sy, z]]
            }),
            None => rotate_bilinear(v, t),
        }
    } else {
        rotate_bilinear(v, t)
    };
    v.with_data(data).expect("rotation preserves shape and finiteness")
}

fn patch(view: ArrayView2<f64>, x0: usize, y0: usize, ps: usize) -> Array2<f32> {
    view.slice(s![x0..x0 + ps, y0..y0 + ps]).mapv(|v| v as f32)
}

/// Builds co-located LR/HR patch pairs from rotated, x-blurred copies of `iso`.
///
/// Pairs are ordered by (angle index, slice index, draw index) and depend only
/// on the arguments.
pub fn build_training_set(iso: &Volume, k: f64, cfg: &SamplerConfig) -> Result<Vec<PatchPair>> {
    cfg.validate()?;
    let [nx, ny, nz] = iso.dims();
    let ps = cfg.patch_size;
    if nx < ps || ny < ps {
        return Err(Error::invalid(format!(
            "in-plane size {nx}x{ny} is smaller than the {ps}x{ps} patch"
        )));
    }
    let area = (ps * ps) as f64;
    let mut pairs = Vec::new();
    for (ai, &theta) in cfg.angles_deg.iter().enumerate() {
        let rotated = rotate_xy(iso, theta);
        let blurred = blur_inplane(&rotated, k, 0)?;
        for z in 0..nz {
            let hr_slice = rotated.data().index_axis(Axis(2), z);
            let lr_slice = blurred.data().index_axis(Axis(2), z);
            let mut rng = seed::rng(cfg.seed, "patches", ((ai as u64) << 32) | z as u64);
            for _ in 0..cfg.patches_per_slice {
                for _ in 0..MAX_ATTEMPTS_PER_PATCH {
                    let x0 = rng.random_range(0..=nx - ps);
                    let y0 = rng.random_range(0..=ny - ps);
                    let hr_view = hr_slice.slice(s![x0..x0 + ps, y0..y0 + ps]);
                    if hr_view.sum() / area > cfg.foreground_threshold {
                        pairs.push(PatchPair {
                            lr: patch(lr_slice, x0, y0, ps),
                            hr: patch(hr_slice, x0, y0, ps),
                            meta: Some(PatchMeta {
                                angle_deg: theta,
                                slice: z,
                                x0,
                                y0,
                            }),
                        });
                        break;
                    }
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet(format!(
            "every candidate patch had mean <= {}",
            cfg.foreground_threshold
        )));
    }
    Ok(pairs)
}

/// Seeded shuffle of `0..n` split into contiguous chunks; the last may be short.
pub fn batch_order(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::EmptyTrainingSet("no pairs to batch".into()));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed, "shuffle", 0));
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn batch_iter(
    pairs: &[PatchPair],
    batch_size: usize,
    seed: u64,
) -> Result<impl Iterator<Item = Vec<&PatchPair>>> {
    let order = batch_order(pairs.len(), batch_size, seed)?;
    Ok(order.into_iter().map(move |b| b.into_iter().map(|i| &pairs[i]).collect()))
}

/// Writes pairs to the flat little-endian patch dump format.
pub fn write_patch_dump(pairs: &[PatchPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ps = pairs.first().map_or(0, |p| p.lr.nrows());
    let mut buf = Vec::with_capacity(14 + pairs.len() * ps * ps * 8);
    buf.extend_from_slice(DUMP_MAGIC);
    let mut word = [0u8; 4];
    LE::write_u32(&mut word, pairs.len() as u32);
    buf.extend_from_slice(&word);
    LE::write_u32(&mut word, ps as u32);
    buf.extend_from_slice(&word);
    for (i, p) in pairs.iter().enumerate() {
        if p.lr.dim() != (ps, ps) || p.hr.dim() != (ps, ps) {
            return Err(Error::shape(format!("pair {i} is not {ps}x{ps}")));
        }
        for arr in [&p.lr, &p.hr] {
            for v in arr.iter() {
                LE::write_f32(&mut word, *v);
                buf.extend_from_slice(&word);
            }
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_patch_dump(path: impl AsRef<Path>) -> Result<Vec<PatchPair>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 14 || &bytes[..6] != DUMP_MAGIC {
        return Err(Error::Format(format!("{}: not a patch dump", path.display())));
    }
    let count = LE::read_u32(&bytes[6..10]) as usize;
    let ps = LE::read_u32(&bytes[10..14]) as usize;
    let per = ps * ps;
    if bytes.len() != 14 + count * per * 8 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for {count} pairs of {ps}x{ps}, found {}",
            path.display(),
            14 + count * per * 8,
            bytes.len()
        )));
    }
    let mut floats = vec![0f32; count * per * 2];
    LE::read_f32_into(&bytes[14..], &mut floats);
    Ok(floats
        .chunks_exact(2 * per)
        .map(|c| PatchPair {
            lr: Array2::from_shape_vec((ps, ps), c[..per].to_vec()).expect("sized chunk"),
            hr: Array2::from_shape_vec((ps, ps), c[per..].to_vec()).expect("sized chunk"),
            meta: None,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn smooth_phantom(n: usize, nz: usize) -> Volume {
        let c = (n as f64 - 1.0) / 2.0;
        let d = Array3::from_shape_fn((n, n, nz), |(x, y, z)| {
            let dx = (x as f64 - c) / n as f64;
            let dy = (y as f64 - c - 3.0) / n as f64;
            0.5 + 0.3 * (-(dx * dx * 18.0 + dy * dy * 9.0)).exp() * (1.0 + 0.1 * z as f64)
                + 0.15 * (4.0 * dx + 2.0 * dy).sin()
        });
        Volume::new(d, [1.0; 3]).unwrap()
    }

    fn random_volume(dims: (usize, usize, usize), seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::new(Array3::from_shape_fn(dims, |_| rng.random_range(0.0..1.0)), [1.0; 3]).unwrap()
    }

    #[test]
    fn zero_rotation_is_identity() {
        let v = random_volume((9, 7, 3), 1);
        assert_eq!(rotate_xy(&v, 0.0), v);
    }

    #[test]
    fn right_angles_are_lossless_permutations() {
        let v = random_volume((8, 8, 2), 2);
        let r = rotate_xy(&v, 90.0);
        for x in 0..8 {
            for y in 0..8 {
                assert_eq!(r.data()[[x, y, 1]], v.data()[[y, 7 - x, 1]]);
            }
        }
        let mut a: Vec<f64> = v.data().iter().copied().collect();
        let mut b: Vec<f64> = r.data().iter().copied().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        // The exact path agrees with the general interpolating formula.
        let general = rotate_bilinear(&v, 90.0);
        let err = (&general - r.data()).mapv(f64::abs).fold(0.0f64, |m, &e| m.max(e));
        assert!(err < 1e-12);
        // Four quarter turns come back exactly.
        let mut back = v.clone();
        for _ in 0..4 {
            back = rotate_xy(&back, 90.0);
        }
        assert_eq!(back, v);
    }

    #[test]
    fn half_turn_on_non_square() {
        let v = random_volume((6, 4, 1), 3);
        let r = rotate_xy(&v, 180.0);
        assert_eq!(r.data()[[0, 0, 0]], v.data()[[5, 3, 0]]);
    }

    #[test]
    fn forty_five_round_trip_inside_disc() {
        let n = 48;
        let v = smooth_phantom(n, 2);
        let back = rotate_xy(&rotate_xy(&v, 45.0), -45.0);
        let range = v.max() - v.data().iter().copied().fold(f64::INFINITY, f64::min);
        let c = (n as f64 - 1.0) / 2.0;
        let r = n as f64 / 2.0 - 4.0;
        let mut worst: f64 = 0.0;
        for ((x, y, z), val) in v.data().indexed_iter() {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            if dx * dx + dy * dy <= r * r {
                worst = worst.max((back.data()[[x, y, z]] - val).abs());
            }
        }
        assert!(worst < 0.02 * range, "worst {worst}, range {range}");
    }

    #[test]
    fn patch_equals_slice_when_sizes_match() {
        let v = Volume::new(Array3::from_elem((32, 32, 4), 0.5), [1.0; 3]).unwrap();
        let cfg = SamplerConfig {
            patches_per_slice: 1,
            angles_deg: vec![0.0],
            ..Default::default()
        };
        let pairs = build_training_set(&v, 2.0, &cfg).unwrap();
        assert_eq!(pairs.len(), 4);
        for (z, p) in pairs.iter().enumerate() {
            let m = p.meta.unwrap();
            assert_eq!((m.slice, m.x0, m.y0), (z, 0, 0));
            assert_eq!(p.hr.dim(), (32, 32));
        }
    }

    #[test]
    fn background_only_volume_is_rejected() {
        let v = Volume::new(Array3::zeros((32, 32, 2)), [1.0; 3]).unwrap();
        assert!(matches!(
            build_training_set(&v, 2.0, &SamplerConfig::default()),
            Err(Error::EmptyTrainingSet(_))
        ));
        let small = Volume::new(Array3::zeros((16, 32, 2)), [1.0; 3]).unwrap();
        assert!(build_training_set(&small, 2.0, &SamplerConfig::default()).is_err());
    }

    #[test]
    fn pairs_match_source_volumes_bit_exact() {
        let v = smooth_phantom(40, 3);
        let cfg = SamplerConfig {
            patch_size: 16,
            patches_per_slice: 4,
            angles_deg: vec![0.0, 30.0],
            seed: 5,
            ..Default::default()
        };
        let k = 2.5;
        let pairs = build_training_set(&v, k, &cfg).unwrap();
        let mut diff_sum = 0.0;
        for p in &pairs {
            let m = p.meta.unwrap();
            let rotated = rotate_xy(&v, m.angle_deg);
            let blurred = blur_inplane(&rotated, k, 0).unwrap();
            for i in 0..16 {
                for j in 0..16 {
                    assert_eq!(p.hr[[i, j]], rotated.data()[[m.x0 + i, m.y0 + j, m.slice]] as f32);
                    assert_eq!(p.lr[[i, j]], blurred.data()[[m.x0 + i, m.y0 + j, m.slice]] as f32);
                    diff_sum += (p.hr[[i, j]] - p.lr[[i, j]]).abs() as f64;
                }
            }
        }
        assert!(diff_sum > 0.0);
    }

    #[test]
    fn training_set_is_deterministic() {
        let v = smooth_phantom(64, 64);
        let cfg = SamplerConfig {
            patches_per_slice: 4,
            seed: 11,
            ..Default::default()
        };
        let a = build_training_set(&v, 3.0, &cfg).unwrap();
        let b = build_training_set(&v, 3.0, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 3 * 64 * 4);
        let other = build_training_set(&v, 3.0, &SamplerConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn batch_chunking() {
        let sizes: Vec<usize> = batch_order(10, 3, 0).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let one = batch_order(5, 9, 1).unwrap();
        assert_eq!(one.len(), 1);
        let mut sorted = one[0].clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        assert_eq!(batch_order(50, 4, 7).unwrap(), batch_order(50, 4, 7).unwrap());
        assert!(batch_order(0, 4, 7).is_err());
        assert!(batch_order(3, 0, 7).is_err());
    }

    #[test]
    fn batch_iter_yields_pair_references() {
        let pairs: Vec<PatchPair> = (0..7)
            .map(|i| PatchPair {
                lr: Array2::from_elem((8, 8), i as f32),
                hr: Array2::from_elem((8, 8), i as f32),
                meta: None,
            })
            .collect();
        let batches: Vec<_> = batch_iter(&pairs, 2, 3).unwrap().collect();
        assert_eq!(batches.len(), 4);
        let order = batch_order(7, 2, 3).unwrap();
        for (b, idx) in batches.iter().zip(&order) {
            for (p, &i) in b.iter().zip(idx) {
                assert_eq!(p.lr[[0, 0]], i as f32);
            }
        }
    }

    #[test]
    fn patch_dump_round_trip() {
        let v = smooth_phantom(32, 2);
        let cfg = SamplerConfig {
            patch_size: 8,
            patches_per_slice: 3,
            angles_deg: vec![0.0],
            ..Default::default()
        };
        let pairs = build_training_set(&v, 2.0, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        write_patch_dump(&pairs, &path).unwrap();
        let back = read_patch_dump(&path).unwrap();
        assert_eq!(back.len(), pairs.len());
        for (a, b) in pairs.iter().zip(&back) {
            assert_eq!(a.lr, b.lr);
            assert_eq!(a.hr, b.hr);
        }
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], b"ESPT1\0");
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_patch_dump(&path).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            SamplerConfig { patch_size: 4, ..Default::default() },
            SamplerConfig { patches_per_slice: 0, ..Default::default() },
            SamplerConfig { angles_deg: vec![180.0], ..Default::default() },
            SamplerConfig { foreground_threshold: 1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
