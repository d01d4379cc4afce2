//! Discrete Fourier transforms of volumes, axis-aligned band limits and
//! spectral (zero-padding) resampling.
//!
//! Conventions: the forward transform is unnormalized, the inverse carries the
//! `1/N` factor, and [`Spectrum`] stores coefficients centered so that
//! frequency 0 sits at index `N/2` (integer division) along every axis. A
//! frequency `f` therefore lives in `[-N/2, N - N/2 - 1]`.

use std::sync::Arc;

use ndarray::{Array3, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Imaginary residual (relative to output norm) above which an inverse
/// transform is rejected as non-Hermitian.
pub const IMAG_RESIDUAL_LIMIT: f64 = 1e-6;

/// Centered complex spectrum of a volume, carrying the spatial geometry it
/// transforms back to.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub data: Array3<Complex64>,
    pub spacing: [f64; 3],
    pub intensity_scale: f64,
}

impl Spectrum {
    /// Spatial dimensions this spectrum inverts to.
    pub fn dims(&self) -> [usize; 3] {
        let (a, b, c) = self.data.dim();
        [a, b, c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    Rect,
    Hann,
    /// Logistic roll-off; `width` is relative to the axis length.
    Fermi { width: f64 },
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "rect" => Ok(Window::Rect),
            "hann" => Ok(Window::Hann),
            _ => match lower.strip_prefix("fermi:").map(str::parse::<f64>) {
                Some(Ok(width)) if width > 0.0 => Ok(Window::Fermi { width }),
                _ => Err(Error::invalid(format!(
                    "unknown window `{s}` (expected rect, hann or fermi:<width>)"
                ))),
            },
        }
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Window::Rect => write!(f, "rect"),
            Window::Hann => write!(f, "hann"),
            Window::Fermi { width } => write!(f, "fermi:{width}"),
        }
    }
}

/// Low-pass along one axis, keeping a centered band of
/// `ceil(N * cutoff_fraction)` coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisFilter {
    pub axis: usize,
    pub cutoff_fraction: f64,
    pub window: Window,
}

impl AxisFilter {
    pub fn new(axis: usize, cutoff_fraction: f64, window: Window) -> Result<Self> {
        let f = Self {
            axis,
            cutoff_fraction,
            window,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn rect(axis: usize, cutoff_fraction: f64) -> Result<Self> {
        Self::new(axis, cutoff_fraction, Window::Rect)
    }

    fn validate(&self) -> Result<()> {
        if self.axis > 2 {
            return Err(Error::invalid(format!("axis {} out of range", self.axis)));
        }
        if !(self.cutoff_fraction > 0.0 && self.cutoff_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "cutoff fraction must be in (0, 1], got {}",
                self.cutoff_fraction
            )));
        }
        Ok(())
    }
}

/// Number of retained coefficients for an axis of length `n`.
pub fn band_size(n: usize, cutoff_fraction: f64) -> usize {
    // Tolerance absorbs float error in n / k for exact divisors.
    let b = (n as f64 * cutoff_fraction - 1e-6).ceil();
    (b.max(1.0) as usize).min(n)
}

/// Signed frequency of uncentered (standard DFT order) index `i`.
#[inline]
pub fn frequency_of(i: usize, n: usize) -> i64 {
    if i < n - n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Filter gain at signed frequency `f` on an axis of length `n`.
pub fn filter_gain(f: i64, n: usize, cutoff_fraction: f64, window: Window) -> f64 {
    let band = band_size(n, cutoff_fraction);
    let half = (band / 2) as i64;
    let lo = -half;
    let hi = band as i64 - 1 - half;
    if f < lo || f > hi {
        return 0.0;
    }
    // An even band leaves -band/2 without its conjugate partner.
    if band % 2 == 0 && band < n && f == lo {
        return 0.0;
    }
    let af = f.unsigned_abs() as f64;
    match window {
        Window::Rect => 1.0,
        Window::Hann => {
            if half == 0 {
                1.0
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * af / half as f64).cos())
            }
        }
        Window::Fermi { width } => {
            let edge = band as f64 / 2.0;
            1.0 / (1.0 + ((af - edge) / (width * n as f64)).exp())
        }
    }
}

/// Gains for an axis of length `n` in uncentered index order.
fn gains_uncentered(n: usize, cutoff_fraction: f64, window: Window) -> Vec<f64> {
    (0..n)
        .map(|i| filter_gain(frequency_of(i, n), n, cutoff_fraction, window))
        .collect()
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

/// Applies `op` to every 1D lane along `axis`, through a contiguous buffer.
fn for_each_lane(data: &mut Array3<Complex64>, axis: usize, mut op: impl FnMut(&mut [Complex64])) {
    let n = data.len_of(Axis(axis));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for mut lane in data.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        op(&mut buf);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
}

fn to_complex(v: &Volume) -> Array3<Complex64> {
    v.data().mapv(|x| Complex64::new(x, 0.0))
}

/// Real part of `data`, after checking the imaginary residual.
fn real_part(data: &Array3<Complex64>) -> Result<Array3<f64>> {
    let mut re2 = 0.0;
    let mut im2 = 0.0;
    for c in data.iter() {
        re2 += c.re * c.re;
        im2 += c.im * c.im;
    }
    let norm = (re2 + im2).sqrt();
    if norm > 0.0 && im2.sqrt() > IMAG_RESIDUAL_LIMIT * norm {
        return Err(Error::NonFinite(format!(
            "inverse transform has imaginary residual {:.3e} of its norm; spectrum is not Hermitian",
            im2.sqrt() / norm
        )));
    }
    Ok(data.mapv(|c| c.re))
}

/// Unnormalized forward DFT, centered per axis.
pub fn forward(v: &Volume) -> Spectrum {
    let mut data = to_complex(v);
    for axis in 0..3 {
        let n = data.len_of(Axis(axis));
        let p = plans(n);
        let shift = n / 2;
        for_each_lane(&mut data, axis, |lane| {
            p.forward.process(lane);
            lane.rotate_right(shift);
        });
    }
    Spectrum {
        data,
        spacing: v.spacing(),
        intensity_scale: v.intensity_scale(),
    }
}

/// Inverse DFT scaled by `1/(Nx*Ny*Nz)`, returning the real part.
pub fn inverse(s: &Spectrum) -> Result<Volume> {
    let mut data = s.data.clone();
    for axis in 0..3 {
        let n = data.len_of(Axis(axis));
        let p = plans(n);
        let shift = n / 2;
        for_each_lane(&mut data, axis, |lane| {
            lane.rotate_left(shift);
            p.inverse.process(lane);
        });
    }
    let total = data.len() as f64;
    data.mapv_inplace(|c| c / total);
    Volume::with_scale(real_part(&data)?, s.spacing, s.intensity_scale)
}

fn multiply_centered(s: &Spectrum, f: &AxisFilter) -> Spectrum {
    let n = s.data.len_of(Axis(f.axis));
    let h = (n / 2) as i64;
    let gains: Vec<f64> = (0..n)
        .map(|j| filter_gain(j as i64 - h, n, f.cutoff_fraction, f.window))
        .collect();
    let mut out = s.clone();
    for (j, mut plane) in out.data.axis_iter_mut(Axis(f.axis)).enumerate() {
        let g = gains[j];
        if g == 0.0 {
            plane.fill(Complex64::new(0.0, 0.0));
        } else if g != 1.0 {
            plane.mapv_inplace(|c| c * g);
        }
    }
    out
}

/// Multiplies the spectrum along `f.axis` by the filter profile.
pub fn apply_axis_lowpass(s: &Spectrum, f: &AxisFilter) -> Result<Spectrum> {
    f.validate()?;
    Ok(multiply_centered(s, f))
}

/// Tapered variant of [`apply_axis_lowpass`]; a `Rect` window is rejected.
pub fn apply_window(s: &Spectrum, f: &AxisFilter) -> Result<Spectrum> {
    if f.window == Window::Rect {
        return Err(Error::invalid(
            "apply_window needs a tapered window; use apply_axis_lowpass for Rect",
        ));
    }
    apply_axis_lowpass(s, f)
}

/// Band-limits a volume along one axis using 1D transforms only.
///
/// Equivalent to `inverse(apply_axis_lowpass(forward(v), f))`.
pub fn lowpass_along_axis(v: &Volume, f: &AxisFilter) -> Result<Volume> {
    f.validate()?;
    let n = v.dims()[f.axis];
    let gains = gains_uncentered(n, f.cutoff_fraction, f.window);
    let p = plans(n);
    let mut data = to_complex(v);
    let inv_n = 1.0 / n as f64;
    for_each_lane(&mut data, f.axis, |lane| {
        p.forward.process(lane);
        for (c, g) in lane.iter_mut().zip(&gains) {
            *c *= g * inv_n;
        }
        p.inverse.process(lane);
    });
    v.with_data(real_part(&data)?)
}

/// Spectral resampling of an uncentered length-`n` spectrum onto `m` bins.
///
/// Truncation keeps the `m`-coefficient band (zeroing an unpaired edge bin);
/// padding splits an even-length Nyquist coefficient across `±n/2`.
fn resample_spectrum(src: &[Complex64], dst: &mut [Complex64]) {
    let n = src.len();
    let m = dst.len();
    dst.fill(Complex64::new(0.0, 0.0));
    let place = |f: i64| -> usize { f.rem_euclid(m as i64) as usize };
    if m <= n {
        for (i, c) in src.iter().enumerate() {
            let f = frequency_of(i, n);
            let g = filter_gain(f, n, m as f64 / n as f64, Window::Rect);
            if g != 0.0 {
                dst[place(f)] = *c;
            }
        }
    } else {
        for (i, c) in src.iter().enumerate() {
            let f = frequency_of(i, n);
            if n % 2 == 0 && f == -(n as i64 / 2) {
                dst[place(f)] += *c * 0.5;
                dst[place(-f)] += *c * 0.5;
            } else {
                dst[place(f)] = *c;
            }
        }
    }
}

/// Resamples `v` along `axis` to `m` samples by spectral truncation or
/// zero-padding, preserving mean intensity. Spacing along the axis is
/// rescaled by `n / m` so the physical extent is unchanged.
pub fn resample_axis(v: &Volume, axis: usize, m: usize) -> Result<Volume> {
    if axis > 2 {
        return Err(Error::invalid(format!("axis {axis} out of range")));
    }
    if m == 0 {
        return Err(Error::invalid("cannot resample to zero samples"));
    }
    let dims = v.dims();
    let n = dims[axis];
    if m == n {
        return Ok(v.clone());
    }
    let mut out_dims = dims;
    out_dims[axis] = m;
    let pn = plans(n);
    let pm = plans(m);
    let scale = 1.0 / n as f64;
    let mut out = Array3::<f64>::zeros((out_dims[0], out_dims[1], out_dims[2]));
    let mut src = vec![Complex64::new(0.0, 0.0); n];
    let mut dst = vec![Complex64::new(0.0, 0.0); m];
    let mut im2 = 0.0;
    let mut re2 = 0.0;
    for (lane_in, mut lane_out) in v
        .data()
        .lanes(Axis(axis))
        .into_iter()
        .zip(out.lanes_mut(Axis(axis)))
    {
        for (s, x) in src.iter_mut().zip(lane_in.iter()) {
            *s = Complex64::new(*x, 0.0);
        }
        pn.forward.process(&mut src);
        resample_spectrum(&src, &mut dst);
        pm.inverse.process(&mut dst);
        for (o, c) in lane_out.iter_mut().zip(dst.iter()) {
            let c = c * scale;
            re2 += c.re * c.re;
            im2 += c.im * c.im;
            *o = c.re;
        }
    }
    let norm = (re2 + im2).sqrt();
    if norm > 0.0 && im2.sqrt() > IMAG_RESIDUAL_LIMIT * norm {
        return Err(Error::NonFinite("resampled volume is not real".into()));
    }
    let mut spacing = v.spacing();
    spacing[axis] *= n as f64 / m as f64;
    Volume::with_scale(out, spacing, v.intensity_scale())
}

/// Embeds the centered spectrum in a larger zero grid and transforms back.
///
/// The output is rescaled so mean intensity is preserved, and spacing is
/// divided by the per-axis dimension ratio.
pub fn zero_pad_upsample(v: &Volume, target_dims: [usize; 3]) -> Result<Volume> {
    let dims = v.dims();
    if let Some(axis) = (0..3).find(|&a| target_dims[a] < dims[a]) {
        return Err(Error::invalid(format!(
            "target {target_dims:?} is smaller than source {dims:?} along axis {axis}"
        )));
    }
    let mut out = v.clone();
    // Separable: padding each axis in turn equals padding the 3D spectrum.
    for axis in 0..3 {
        if target_dims[axis] > dims[axis] {
            out = resample_axis(&out, axis, target_dims[axis])?;
        }
    }
    Ok(out)
}
