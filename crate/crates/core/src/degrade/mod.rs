//! Low-resolution simulation, in-plane training blur and isotropic
//! upsampling front-ends.

pub mod bspline;

use ndarray::{Array3, Axis};

use crate::error::{Error, Result};
use crate::fourier::{self, AxisFilter, Window};
use crate::volume::{scale_factor, Volume};

/// Tolerance below which a scale factor is treated as exactly 1.
const ISOTROPIC_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradeMode {
    /// Zero the out-of-band coefficients, keep the grid.
    BandlimitOnly,
    /// Band-limit, then resample onto `floor(N / k)` samples.
    DecimateThenZeroFill,
}

impl std::str::FromStr for DegradeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bandlimit" | "bandlimitonly" | "bandlimit-only" => Ok(DegradeMode::BandlimitOnly),
            "decimate" | "decimatethenzerofill" | "decimate-then-zero-fill" => {
                Ok(DegradeMode::DecimateThenZeroFill)
            }
            other => Err(Error::invalid(format!("unknown degrade mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeConfig {
    pub k: f64,
    pub axis: usize,
    pub mode: DegradeMode,
    pub window: Window,
}

impl DegradeConfig {
    pub fn new(k: f64, axis: usize, mode: DegradeMode) -> Self {
        Self {
            k,
            axis,
            mode,
            window: Window::Rect,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.k > 1.0 && self.k.is_finite()) {
            return Err(Error::invalid(format!("scale factor k must be > 1, got {}", self.k)));
        }
        if self.axis > 2 {
            return Err(Error::invalid(format!("axis {} out of range", self.axis)));
        }
        Ok(())
    }
}

/// Number of samples kept when decimating an axis of length `n` by `k`.
pub fn decimated_len(n: usize, k: f64) -> usize {
    ((n as f64 / k + 1e-9).floor() as usize).max(1)
}

/// Simulates a thick-slice acquisition along `cfg.axis`.
///
/// In decimation mode the recorded spacing along the axis grows by `N / M`,
/// the true sample pitch of the spectrally resampled grid.
pub fn simulate_lr(hr: &Volume, cfg: &DegradeConfig) -> Result<Volume> {
    cfg.validate()?;
    let n = hr.dims()[cfg.axis];
    if n < 4 {
        return Err(Error::invalid(format!(
            "axis {} has {n} samples; at least 4 are needed",
            cfg.axis
        )));
    }
    match cfg.mode {
        DegradeMode::BandlimitOnly => {
            let f = AxisFilter::new(cfg.axis, 1.0 / cfg.k, cfg.window)?;
            fourier::lowpass_along_axis(hr, &f)
        }
        DegradeMode::DecimateThenZeroFill => {
            let m = decimated_len(n, cfg.k);
            let tapered = match cfg.window {
                Window::Rect => hr.clone(),
                w => fourier::lowpass_along_axis(hr, &AxisFilter::new(cfg.axis, m as f64 / n as f64, w)?)?,
            };
            fourier::resample_axis(&tapered, cfg.axis, m)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMethod {
    ZeroPad,
    BSpline,
}

impl UpsampleMethod {
    pub fn name(self) -> &'static str {
        match self {
            UpsampleMethod::ZeroPad => "zeropad",
            UpsampleMethod::BSpline => "bspline",
        }
    }
}

impl std::str::FromStr for UpsampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zeropad" | "zero-pad" | "fourier" => Ok(UpsampleMethod::ZeroPad),
            "bspline" | "b-spline" | "bsp" => Ok(UpsampleMethod::BSpline),
            other => Err(Error::invalid(format!("unknown upsample method `{other}`"))),
        }
    }
}

/// Result of [`make_isotropic`].
#[derive(Debug, Clone, PartialEq)]
pub struct Isotropic {
    pub volume: Volume,
    /// The input already had isotropic spacing and was returned unchanged.
    pub was_isotropic: bool,
}

/// Through-plane length of the isotropic grid for `nz` slices at factor `k`.
pub fn isotropic_len(nz: usize, k: f64) -> usize {
    ((nz as f64 * k).round() as usize).max(nz)
}

/// Resamples along `z` onto the in-plane spacing.
pub fn make_isotropic(lr: &Volume, method: UpsampleMethod) -> Result<Isotropic> {
    let k = scale_factor(lr)?;
    if (k - 1.0).abs() <= ISOTROPIC_TOL {
        log::warn!("volume is already isotropic; returning it unchanged");
        return Ok(Isotropic {
            volume: lr.clone(),
            was_isotropic: true,
        });
    }
    if k < 1.0 {
        return Err(Error::invalid(format!(
            "through-plane spacing is finer than in-plane (k = {k}); nothing to upsample"
        )));
    }
    let [nx, ny, nz] = lr.dims();
    let target = isotropic_len(nz, k);
    let mut out = match method {
        UpsampleMethod::ZeroPad => fourier::zero_pad_upsample(lr, [nx, ny, target])?,
        UpsampleMethod::BSpline => bspline_resample_z(lr, target)?,
    };
    let s = lr.spacing()[0];
    out.set_spacing([s, s, s])?;
    Ok(Isotropic {
        volume: out,
        was_isotropic: false,
    })
}

/// Applies a Rect low-pass with cutoff `1/k` along in-plane `axis` (0 = x, 1 = y).
pub fn blur_inplane(iso: &Volume, k: f64, axis: usize) -> Result<Volume> {
    if !(k > 1.0 && k.is_finite()) {
        return Err(Error::invalid(format!("blur factor k must be > 1, got {k}")));
    }
    if axis > 1 {
        return Err(Error::invalid(format!("in-plane blur axis must be 0 or 1, got {axis}")));
    }
    fourier::lowpass_along_axis(iso, &AxisFilter::rect(axis, 1.0 / k)?)
}

/// Cubic B-spline interpolation along `z` by factor `k`.
pub fn bspline_upsample(lr: &Volume, k: f64) -> Result<Volume> {
    if !(k > 1.0 && k.is_finite()) {
        return Err(Error::invalid(format!("upsampling factor must be > 1, got {k}")));
    }
    bspline_resample_z(lr, isotropic_len(lr.dims()[2], k))
}

/// Output sample `i` sits at input index `i * nz / target`, the same grid
/// the spectral path produces.
fn bspline_resample_z(lr: &Volume, target: usize) -> Result<Volume> {
    let [nx, ny, nz] = lr.dims();
    let positions: Vec<f64> = (0..target).map(|i| i as f64 * nz as f64 / target as f64).collect();
    let mut out = Array3::<f64>::zeros((nx, ny, target));
    for (lane_in, mut lane_out) in lr.data().lanes(Axis(2)).into_iter().zip(out.lanes_mut(Axis(2))) {
        let samples: Vec<f64> = lane_in.iter().copied().collect();
        for (o, v) in lane_out.iter_mut().zip(bspline::interpolate(&samples, &positions)) {
            *o = v;
        }
    }
    let mut spacing = lr.spacing();
    spacing[2] *= nz as f64 / target as f64;
    Volume::with_scale(out, spacing, lr.intensity_scale())
}
