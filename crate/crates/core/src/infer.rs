//! Slice-wise application of a trained model along the two orientations
//! that contain the low-resolution axis.

use log::debug;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::network::{forward, SrModel};
use crate::volume::{get_slice, stack_slices, Orientation, Slice2D, Volume, NORMALIZED_CLIP};

#[derive(Debug, Clone)]
pub struct SrEstimate {
    pub volume: Volume,
    pub source_orientation: Orientation,
}

/// Runs the model on one slice whose low-resolution axis is array axis 1.
///
/// Training pairs carry their blurred axis on array axis 0, so the slice is
/// transposed on the way in and back on the way out.
pub fn super_resolve_slice(m: &SrModel<f32>, slice: &Array2<f64>) -> Result<Array2<f64>> {
    let x = slice.t().mapv(|v| v as f32);
    let y = forward(m, &x)?;
    Ok(y.t().mapv(|v| (v as f64).clamp(0.0, NORMALIZED_CLIP)))
}

pub fn super_resolve_orientation(iso: &Volume, m: &SrModel<f32>, o: Orientation) -> Result<SrEstimate> {
    if o == Orientation::Axial {
        return Err(Error::invalid(
            "axial slices are already high resolution; use coronal or sagittal",
        ));
    }
    let n = iso.dims()[o.fixed_axis()];
    let mut slices = Vec::with_capacity(n);
    for i in 0..n {
        let s = get_slice(iso, o, i)?;
        slices.push(Slice2D {
            data: super_resolve_slice(m, &s.data)?,
            orientation: o,
            index: i,
        });
    }
    debug!("super-resolved {n} {} slices", o.name());
    let mut volume = stack_slices(&slices, o, iso.spacing())?;
    volume = Volume::with_scale(volume.into_data(), iso.spacing(), iso.intensity_scale())?;
    Ok(SrEstimate {
        volume,
        source_orientation: o,
    })
}

/// Returns the coronal-derived and sagittal-derived estimates, in that order.
pub fn run_both_orientations(iso: &Volume, m: &SrModel<f32>) -> Result<(SrEstimate, SrEstimate)> {
    Ok((
        super_resolve_orientation(iso, m, Orientation::Coronal)?,
        super_resolve_orientation(iso, m, Orientation::Sagittal)?,
    ))
}
