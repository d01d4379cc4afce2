//! In-memory scalar volumes, slice access and intensity normalization.
//!
//! Voxels are indexed `(x, y, z)`; `z` is the slice-stacking (through-plane)
//! axis. Spacing is in millimetres per voxel along each axis.

mod nifti;

pub use nifti::{load_volume, load_volume_raw, save_volume};

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};

/// Relative tolerance used when comparing in-plane spacings.
const SPACING_RTOL: f64 = 1e-6;

/// Default percentile used to pick the normalization divisor.
pub const DEFAULT_NORMALIZE_PERCENTILE: f64 = 99.9;

/// Upper clip applied after normalization.
pub const NORMALIZED_CLIP: f64 = 1.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f64>,
    spacing: [f64; 3],
    intensity_scale: f64,
}

impl Volume {
    pub fn new(data: Array3<f64>, spacing: [f64; 3]) -> Result<Self> {
        Self::with_scale(data, spacing, 1.0)
    }

    pub fn with_scale(data: Array3<f64>, spacing: [f64; 3], intensity_scale: f64) -> Result<Self> {
        if data.shape().iter().any(|&n| n == 0) {
            return Err(Error::shape(format!(
                "volume dimensions must be >= 1, got {:?}",
                data.shape()
            )));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if !(intensity_scale.is_finite() && intensity_scale > 0.0) {
            return Err(Error::invalid(format!(
                "intensity scale must be positive, got {intensity_scale}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume contains NaN or infinite voxels".into()));
        }
        Ok(Self {
            data,
            spacing,
            intensity_scale,
        })
    }

    /// Same geometry and intensity scale, new voxel values.
    pub fn with_data(&self, data: Array3<f64>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(Error::shape(format!(
                "expected {:?}, got {:?}",
                self.dims(),
                data.shape()
            )));
        }
        Self::with_scale(data, self.spacing, self.intensity_scale)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn dims(&self) -> [usize; 3] {
        let (nx, ny, nz) = self.data.dim();
        [nx, ny, nz]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn intensity_scale(&self) -> f64 {
        self.intensity_scale
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn set_spacing(&mut self, spacing: [f64; 3]) -> Result<()> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        self.spacing = spacing;
        Ok(())
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Multiplies voxel values by the recorded intensity scale and resets it to 1.
    pub fn denormalize(&self) -> Volume {
        Volume {
            data: &self.data * self.intensity_scale,
            spacing: self.spacing,
            intensity_scale: 1.0,
        }
    }
}

/// The three slice families of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// Fixed `z`, plane `(x, y)`.
    Axial,
    /// Fixed `y`, plane `(x, z)`.
    Coronal,
    /// Fixed `x`, plane `(y, z)`.
    Sagittal,
}

impl Orientation {
    pub const ALL: [Orientation; 3] = [Orientation::Axial, Orientation::Coronal, Orientation::Sagittal];

    /// Volume axis held constant by slices of this orientation.
    pub fn fixed_axis(self) -> usize {
        match self {
            Orientation::Axial => 2,
            Orientation::Coronal => 1,
            Orientation::Sagittal => 0,
        }
    }

    /// Volume axes spanned by the slice plane, in slice array order.
    pub fn plane_axes(self) -> [usize; 2] {
        match self {
            Orientation::Axial => [0, 1],
            Orientation::Coronal => [0, 2],
            Orientation::Sagittal => [1, 2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Orientation::Axial => "axial",
            Orientation::Coronal => "coronal",
            Orientation::Sagittal => "sagittal",
        }
    }
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(Orientation::Axial),
            "coronal" => Ok(Orientation::Coronal),
            "sagittal" => Ok(Orientation::Sagittal),
            other => Err(Error::invalid(format!("unknown orientation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub data: Array2<f64>,
    pub orientation: Orientation,
    pub index: usize,
}

pub fn get_slice(v: &Volume, o: Orientation, index: usize) -> Result<Slice2D> {
    let axis = o.fixed_axis();
    let len = v.dims()[axis];
    if index >= len {
        return Err(Error::IndexOutOfRange { index, len });
    }
    Ok(Slice2D {
        data: v.data.index_axis(Axis(axis), index).to_owned(),
        orientation: o,
        index,
    })
}

/// Reassembles a full set of slices, ordered by index, into a volume.
pub fn stack_slices(slices: &[Slice2D], o: Orientation, spacing: [f64; 3]) -> Result<Volume> {
    let first = slices
        .first()
        .ok_or_else(|| Error::invalid("cannot stack an empty slice list"))?;
    let (na, nb) = first.data.dim();
    for (i, s) in slices.iter().enumerate() {
        if s.orientation != o {
            return Err(Error::invalid(format!(
                "slice {i} is {} but {} was requested",
                s.orientation.name(),
                o.name()
            )));
        }
        if s.index != i {
            return Err(Error::invalid(format!(
                "slice at position {i} carries index {}; slices must be ordered 0..n-1",
                s.index
            )));
        }
        if s.data.dim() != (na, nb) {
            return Err(Error::shape(format!(
                "slice {i} is {:?}, expected {:?}",
                s.data.dim(),
                (na, nb)
            )));
        }
    }
    let mut dims = [0usize; 3];
    let [a, b] = o.plane_axes();
    dims[a] = na;
    dims[b] = nb;
    dims[o.fixed_axis()] = slices.len();
    let mut data = Array3::<f64>::zeros((dims[0], dims[1], dims[2]));
    for s in slices {
        data.index_axis_mut(Axis(o.fixed_axis()), s.index).assign(&s.data);
    }
    Volume::new(data, spacing)
}

/// Ratio of through-plane to in-plane spacing.
pub fn scale_factor(v: &Volume) -> Result<f64> {
    let [sx, sy, sz] = v.spacing;
    if (sx - sy).abs() > SPACING_RTOL * sx.max(sy) {
        return Err(Error::invalid(format!(
            "in-plane spacing is anisotropic ({sx} vs {sy})"
        )));
    }
    Ok(sz / sx)
}

/// Nearest-rank percentile of `values` (`p` in `(0, 100]`): the smallest
/// value with at least `p`% of the samples at or below it.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut buf = values.to_vec();
    let n = buf.len();
    let rank = ((p / 100.0) * n as f64).ceil().clamp(1.0, n as f64) as usize;
    *buf.select_nth_unstable_by(rank - 1, f64::total_cmp).1
}

/// Divides by the given percentile of voxel values and clips to `[0, 1.2]`.
pub fn normalize_intensity(v: &Volume, pct: f64) -> Result<Volume> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::invalid(format!("percentile must be in (0, 100], got {pct}")));
    }
    let values = v.data.as_slice_memory_order().map(<[f64]>::to_vec).unwrap_or_else(|| v.data.iter().copied().collect());
    let divisor = percentile(&values, pct);
    if !(divisor > 0.0) {
        return Err(Error::invalid(format!(
            "normalization divisor at percentile {pct} is {divisor}; volume has no positive signal"
        )));
    }
    let data = v.data.mapv(|x| (x / divisor).clamp(0.0, NORMALIZED_CLIP));
    Volume::with_scale(data, v.spacing, v.intensity_scale * divisor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn counting(nx: usize, ny: usize, nz: usize) -> Volume {
        let data = Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| (x + 10 * y + 100 * z) as f64);
        Volume::new(data, [1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::new(Array3::zeros((0, 2, 2)), [1.0; 3]).is_err());
        assert!(Volume::new(Array3::zeros((2, 2, 2)), [1.0, 0.0, 1.0]).is_err());
        let mut d = Array3::zeros((2, 2, 2));
        d[[0, 0, 0]] = f64::NAN;
        assert!(Volume::new(d, [1.0; 3]).is_err());
    }

    #[test]
    fn axial_slice_is_z_plane() {
        let v = counting(2, 2, 2);
        let s = get_slice(&v, Orientation::Axial, 0).unwrap();
        assert_eq!(s.data, ndarray::array![[0.0, 10.0], [1.0, 11.0]]);
        let s = get_slice(&v, Orientation::Coronal, 1).unwrap();
        assert_eq!(s.data, ndarray::array![[10.0, 110.0], [11.0, 111.0]]);
        let s = get_slice(&v, Orientation::Sagittal, 1).unwrap();
        assert_eq!(s.data, ndarray::array![[1.0, 101.0], [11.0, 111.0]]);
    }

    #[test]
    fn coronal_slices_of_y_constant_volume_agree() {
        let data = Array3::from_shape_fn((3, 5, 4), |(x, _, z)| (x * 7 + z) as f64);
        let v = Volume::new(data, [1.0; 3]).unwrap();
        let first = get_slice(&v, Orientation::Coronal, 0).unwrap().data;
        for i in 1..5 {
            assert_eq!(get_slice(&v, Orientation::Coronal, i).unwrap().data, first);
        }
    }

    #[test]
    fn slice_index_out_of_range() {
        let v = counting(2, 3, 4);
        assert!(matches!(
            get_slice(&v, Orientation::Coronal, 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn stack_inverts_get_slice_for_every_orientation() {
        let v = counting(3, 4, 5);
        for o in Orientation::ALL {
            let n = v.dims()[o.fixed_axis()];
            let slices: Vec<_> = (0..n).map(|i| get_slice(&v, o, i).unwrap()).collect();
            assert_eq!(stack_slices(&slices, o, v.spacing()).unwrap(), v);
        }
    }

    #[test]
    fn single_slice_round_trip() {
        let v = counting(3, 4, 1);
        let s = get_slice(&v, Orientation::Axial, 0).unwrap();
        assert_eq!(stack_slices(&[s], Orientation::Axial, [1.0; 3]).unwrap(), v);
    }

    #[test]
    fn stack_rejects_permuted_and_ragged_input() {
        let v = counting(3, 4, 5);
        let mut slices: Vec<_> = (0..5).map(|i| get_slice(&v, Orientation::Axial, i).unwrap()).collect();
        slices.swap(1, 2);
        assert!(stack_slices(&slices, Orientation::Axial, [1.0; 3]).is_err());
        slices.swap(1, 2);
        slices[3].data = Array2::zeros((2, 2));
        assert!(stack_slices(&slices, Orientation::Axial, [1.0; 3]).is_err());
        let missing: Vec<_> = slices.iter().take(2).chain(slices.iter().skip(3)).cloned().collect();
        assert!(stack_slices(&missing, Orientation::Axial, [1.0; 3]).is_err());
    }

    #[test]
    fn scale_factor_values() {
        let mut v = counting(2, 2, 2);
        v.set_spacing([1.0, 1.0, 3.0]).unwrap();
        assert_eq!(scale_factor(&v).unwrap(), 3.0);
        v.set_spacing([0.83, 0.83, 2.20]).unwrap();
        assert!((scale_factor(&v).unwrap() - 2.20 / 0.83).abs() < 1e-12);
        assert!((scale_factor(&v).unwrap() - 2.6506).abs() < 1e-4);
        v.set_spacing([1.0, 1.0, 1.0]).unwrap();
        assert_eq!(scale_factor(&v).unwrap(), 1.0);
        v.set_spacing([1.0, 1.1, 2.0]).unwrap();
        assert!(scale_factor(&v).is_err());
    }

    #[test]
    fn normalize_by_max() {
        let data = Array3::from_shape_fn((4, 4, 4), |(x, y, z)| ((x + y + z) as f64 / 9.0) * 10.0);
        let v = Volume::new(data, [1.0; 3]).unwrap();
        let n = normalize_intensity(&v, 100.0).unwrap();
        assert_eq!(n.intensity_scale(), 10.0);
        assert!(n.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn normalize_identity_when_divisor_is_one() {
        let mut data = Array3::from_elem((4, 4, 4), 0.5);
        data[[0, 0, 0]] = 1.0;
        let v = Volume::new(data, [1.0; 3]).unwrap();
        let n = normalize_intensity(&v, 100.0).unwrap();
        assert_eq!(n.data(), v.data());
        assert_eq!(n.intensity_scale(), 1.0);
    }

    #[test]
    fn normalize_rejects_all_zero() {
        let v = Volume::new(Array3::zeros((3, 3, 3)), [1.0; 3]).unwrap();
        assert!(normalize_intensity(&v, 99.9).is_err());
    }

    #[test]
    fn percentile_matches_sorted_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = Array3::from_shape_fn((9, 7, 5), |_| rng.random::<f64>());
        let v = Volume::new(data, [1.0; 3]).unwrap();
        for p in [99.9, 50.0, 12.5, 100.0] {
            let mut sorted: Vec<f64> = v.data().iter().copied().collect();
            sorted.sort_by(f64::total_cmp);
            let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
            let expected = sorted[rank.max(1) - 1];
            let n = normalize_intensity(&v, p).unwrap();
            assert_eq!(n.intensity_scale(), expected, "p={p}");
        }
    }

    proptest! {
        #[test]
        fn normalized_mostly_below_one(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = Array3::from_shape_fn((12, 11, 10), |_| rng.random::<f64>().powi(3) * 500.0);
            let v = Volume::new(data, [1.0; 3]).unwrap();
            let n = normalize_intensity(&v, DEFAULT_NORMALIZE_PERCENTILE).unwrap();
            let below = n.data().iter().filter(|&&x| x <= 1.0).count();
            prop_assert!(below as f64 >= 0.999 * n.len() as f64);
        }

        #[test]
        fn scale_factor_ignores_uniform_rescaling(sx in 0.1f64..5.0, sz in 0.1f64..10.0, c in 0.01f64..100.0) {
            let mut v = counting(2, 2, 2);
            v.set_spacing([sx, sx, sz]).unwrap();
            let k = scale_factor(&v).unwrap();
            v.set_spacing([c * sx, c * sx, c * sz]).unwrap();
            prop_assert!((scale_factor(&v).unwrap() - k).abs() <= 1e-12 * k);
        }
    }
}
