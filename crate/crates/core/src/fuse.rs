//! Fourier Burst Accumulation of several estimates of the same volume.

use ndarray::{Array3, Axis, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::{forward, inverse, Spectrum};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuseConfig {
    /// Exponent applied to spectral magnitudes.
    pub p: f64,
    /// Gaussian smoothing of magnitudes, in frequency bins; 0 disables it.
    pub magnitude_smoothing_sigma: f64,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            p: 11.0,
            magnitude_smoothing_sigma: 0.0,
        }
    }
}

impl FuseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 0.0 && self.p.is_finite()) {
            return Err(Error::invalid(format!("fusion exponent {} must be >= 0", self.p)));
        }
        if !(self.magnitude_smoothing_sigma >= 0.0 && self.magnitude_smoothing_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "magnitude smoothing sigma {} must be >= 0",
                self.magnitude_smoothing_sigma
            )));
        }
        Ok(())
    }
}

/// Circular Gaussian blur along one axis; the spectrum is periodic.
fn smooth_axis(a: &Array3<f64>, axis: usize, sigma: f64) -> Array3<f64> {
    let n = a.len_of(Axis(axis));
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    let mut out = Array3::zeros(a.raw_dim());
    for (src, mut dst) in a.lanes(Axis(axis)).into_iter().zip(out.lanes_mut(Axis(axis))) {
        for i in 0..n {
            let mut acc = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                let j = (i + n * (radius / n + 1) + t - radius) % n;
                acc += k * src[j];
            }
            dst[i] = acc / total;
        }
    }
    out
}

fn magnitudes(s: &Spectrum, sigma: f64) -> Array3<f64> {
    let mut m = s.data.mapv(|c| c.norm());
    if sigma > 0.0 {
        for axis in 0..3 {
            m = smooth_axis(&m, axis, sigma);
        }
    }
    m
}

/// Per-bin weights `s_i^p / sum_j s_j^p`, uniform where every magnitude is zero.
pub fn fba_weights(spectra: &[Spectrum], cfg: &FuseConfig) -> Result<Vec<Array3<f64>>> {
    cfg.validate()?;
    if spectra.len() < 2 {
        return Err(Error::invalid(format!(
            "fusion needs at least two estimates, got {}",
            spectra.len()
        )));
    }
    let dims = spectra[0].dims();
    if let Some(s) = spectra.iter().find(|s| s.dims() != dims) {
        return Err(Error::shape(format!(
            "spectrum dims {:?} differ from {:?}",
            s.dims(),
            dims
        )));
    }
    let n = spectra.len();
    let mags: Vec<Array3<f64>> = spectra
        .iter()
        .map(|s| magnitudes(s, cfg.magnitude_smoothing_sigma))
        .collect();
    let mut weights = vec![Array3::<f64>::zeros(spectra[0].data.raw_dim()); n];
    let uniform = 1.0 / n as f64;
    let mut powered = vec![0.0; n];
    for idx in 0..spectra[0].data.len() {
        let peak = mags.iter().map(|m| flat(m)[idx]).fold(0.0, f64::max);
        if peak <= 0.0 || cfg.p == 0.0 {
            for w in weights.iter_mut() {
                flat_mut(w)[idx] = uniform;
            }
            continue;
        }
        // Dividing by the per-bin peak keeps s^p in range for any p.
        let mut sum = 0.0;
        for (q, m) in powered.iter_mut().zip(&mags) {
            *q = (flat(m)[idx] / peak).powf(cfg.p);
            sum += *q;
        }
        for (w, q) in weights.iter_mut().zip(&powered) {
            flat_mut(w)[idx] = q / sum;
        }
    }
    Ok(weights)
}

fn flat(a: &Array3<f64>) -> &[f64] {
    a.as_slice().expect("freshly built arrays are contiguous")
}

fn flat_mut(a: &mut Array3<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("freshly built arrays are contiguous")
}

/// Weighted spectral average of the estimates, transformed back.
pub fn fba_fuse(estimates: &[Volume], cfg: &FuseConfig) -> Result<Volume> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::invalid("fusion needs at least two estimates, got 0"))?;
    for v in estimates {
        if v.dims() != first.dims() {
            return Err(Error::shape(format!(
                "estimate dims {:?} differ from {:?}",
                v.dims(),
                first.dims()
            )));
        }
        if v.spacing() != first.spacing() {
            return Err(Error::shape(format!(
                "estimate spacing {:?} differs from {:?}",
                v.spacing(),
                first.spacing()
            )));
        }
    }
    let spectra: Vec<Spectrum> = estimates.iter().map(forward).collect();
    let weights = fba_weights(&spectra, cfg)?;
    let mut fused = Array3::<Complex64>::zeros(spectra[0].data.raw_dim());
    for (s, w) in spectra.iter().zip(&weights) {
        Zip::from(&mut fused).and(&s.data).and(w).for_each(|f, &c, &wt| *f += c * wt);
    }
    inverse(&Spectrum {
        data: fused,
        spacing: first.spacing(),
        intensity_scale: first.intensity_scale(),
    })
}
