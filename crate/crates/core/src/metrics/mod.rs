//! Image quality metrics, significance tests and report assembly.

mod report;
mod stats;

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::volume::Volume;
pub use report::{build_report, Comparison, MethodResults, MethodSummary, MetricsReport};
pub use stats::{paired_t_one_tailed, rank_sum_exact, rank_sum_normal, wilcoxon_rank_sum_one_tailed};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_dims(test: &Volume, reference: &Volume) -> Result<()> {
    if test.dims() != reference.dims() {
        return Err(Error::shape(format!(
            "compared volumes differ in dims: {:?} vs {:?}",
            test.dims(),
            reference.dims()
        )));
    }
    Ok(())
}

/// PSNR in dB with the reference maximum as peak; `+inf` for identical volumes.
pub fn psnr(test: &Volume, reference: &Volume) -> Result<f64> {
    same_dims(test, reference)?;
    let peak = reference.max();
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("reference peak {peak} must be positive for PSNR")));
    }
    let mse = test
        .data()
        .iter()
        .zip(reference.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / test.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-0.5 * d * d / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable Gaussian filter over the positions where the window fits.
fn filter_valid(img: &Array2<f64>, taps: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = img.dim();
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = Array2::zeros((oh, w));
    for i in 0..oh {
        for (k, &t) in taps.iter().enumerate() {
            rows.row_mut(i).scaled_add(t, &img.row(i + k));
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for (k, &t) in taps.iter().enumerate() {
        out.scaled_add(t, &rows.slice(s![.., k..k + ow]));
    }
    out
}

fn ssim_slice(x: ArrayView2<f64>, y: ArrayView2<f64>, peak: f64, taps: &[f64; SSIM_WINDOW]) -> f64 {
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let (x, y) = (x.to_owned(), y.to_owned());
    let mu_x = filter_valid(&x, taps);
    let mu_y = filter_valid(&y, taps);
    let e_xx = filter_valid(&(&x * &x), taps);
    let e_yy = filter_valid(&(&y * &y), taps);
    let e_xy = filter_valid(&(&x * &y), taps);
    let mut total = 0.0;
    for ((((&mx, &my), &xx), &yy), &xy) in mu_x.iter().zip(&mu_y).zip(&e_xx).zip(&e_yy).zip(&e_xy) {
        let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    total / mu_x.len() as f64
}

/// Mean SSIM over axial slices with dynamic range `max(reference)`.
pub fn ssim(test: &Volume, reference: &Volume) -> Result<f64> {
    ssim_with_peak(test, reference, reference.max())
}

/// Mean SSIM over axial slices with an explicit dynamic range.
pub fn ssim_with_peak(test: &Volume, reference: &Volume, peak: f64) -> Result<f64> {
    same_dims(test, reference)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(format!("SSIM dynamic range {peak} must be positive")));
    }
    let [nx, ny, nz] = reference.dims();
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "axial slices of {nx}x{ny} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let taps = gaussian_taps();
    let sum: f64 = (0..nz)
        .map(|z| {
            ssim_slice(
                test.data().index_axis(Axis(2), z),
                reference.data().index_axis(Axis(2), z),
                peak,
                &taps,
            )
        })
        .sum();
    Ok(sum / nz as f64)
}
