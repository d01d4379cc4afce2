//! Synthetic test volumes: smooth-edged, randomly oriented ellipsoids.

use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub ellipsoids: usize,
    /// Semi-axis range as a fraction of the smallest physical extent.
    pub radius_range: (f64, f64),
    /// Intensities drawn (uniformly) from this list for each ellipsoid.
    pub intensity_levels: Vec<f64>,
    pub background: f64,
    /// Sigmoid falloff width of the edges, in physical units.
    pub edge_width: f64,
    /// Plane waves of random direction summed into a texture inside the shapes.
    pub texture_waves: usize,
    /// RMS of the texture where the shapes are fully present.
    pub texture_amplitude: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 64],
            spacing: [1.0; 3],
            ellipsoids: 14,
            radius_range: (0.06, 0.3),
            intensity_levels: vec![0.25, 0.5, 0.75, 1.0, -0.25],
            background: 0.0,
            edge_width: 0.3,
            texture_waves: 24,
            texture_amplitude: 0.2,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!("phantom dims {:?} must be >= 2", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("phantom spacing {:?} must be positive", self.spacing)));
        }
        let (lo, hi) = self.radius_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid(format!("radius range ({lo}, {hi}) must satisfy 0 < lo <= hi")));
        }
        if self.ellipsoids > 0 && self.intensity_levels.is_empty() {
            return Err(Error::invalid("at least one intensity level is required"));
        }
        if !(self.texture_amplitude >= 0.0 && self.texture_amplitude.is_finite()) {
            return Err(Error::invalid(format!("texture amplitude {} must be >= 0", self.texture_amplitude)));
        }
        if !(self.edge_width > 0.0 && self.edge_width.is_finite()) {
            return Err(Error::invalid(format!("edge width {} must be positive", self.edge_width)));
        }
        Ok(())
    }
}

struct Ellipsoid {
    center: [f64; 3],
    /// Rows are the principal axes.
    axes: [[f64; 3]; 3],
    radii: [f64; 3],
    level: f64,
}

/// Uniformly random rotation from a random unit quaternion.
fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    use std::f64::consts::TAU;
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin(), b * (TAU * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

struct Wave {
    /// Direction scaled by angular frequency.
    k: [f64; 3],
    phase: f64,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Sum of ellipsoids with sigmoid edges on a constant background, plus a
/// plane-wave texture masked to the union of the ellipsoids.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, "phantom", 0);
    let extent: Vec<f64> = (0..3).map(|a| spec.dims[a] as f64 * spec.spacing[a]).collect();
    let min_extent = extent.iter().copied().fold(f64::INFINITY, f64::min);
    let (lo, hi) = spec.radius_range;
    let shapes: Vec<Ellipsoid> = (0..spec.ellipsoids)
        .map(|_| {
            // Centres stay in the middle 60% so most of each shape is inside.
            let center = [0, 1, 2].map(|a| extent[a] * rng.random_range(0.2..0.8));
            let radii = [0, 1, 2].map(|_| min_extent * rng.random_range(lo..=hi));
            let axes = random_rotation(&mut rng);
            let level = spec.intensity_levels[rng.random_range(0..spec.intensity_levels.len())];
            Ellipsoid { center, axes, radii, level }
        })
        .collect();
    let min_spacing = spec.spacing.iter().copied().fold(f64::INFINITY, f64::min);
    let waves: Vec<Wave> = (0..spec.texture_waves)
        .map(|_| {
            let dir = random_rotation(&mut rng)[0];
            // Between 0.1 and 0.45 cycles per finest voxel, so through-plane
            // detail exists that a coarse slice spacing cannot carry.
            let omega = std::f64::consts::TAU * rng.random_range(0.1..0.45) / min_spacing;
            Wave {
                k: dir.map(|d| d * omega),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();
    let wave_norm = if waves.is_empty() {
        0.0
    } else {
        spec.texture_amplitude * (2.0 / waves.len() as f64).sqrt()
    };
    let data = Array3::from_shape_fn((spec.dims[0], spec.dims[1], spec.dims[2]), |(i, j, k)| {
        let p = [
            i as f64 * spec.spacing[0],
            j as f64 * spec.spacing[1],
            k as f64 * spec.spacing[2],
        ];
        let mut v = spec.background;
        let mut inside: f64 = 0.0;
        for e in &shapes {
            let d = [p[0] - e.center[0], p[1] - e.center[1], p[2] - e.center[2]];
            let mut rho2 = 0.0;
            for (axis, r) in e.axes.iter().zip(e.radii) {
                let u = axis[0] * d[0] + axis[1] * d[1] + axis[2] * d[2];
                rho2 += (u / r) * (u / r);
            }
            let mean_r = (e.radii[0] + e.radii[1] + e.radii[2]) / 3.0;
            // (1 - rho) * mean radius approximates the signed distance to the surface.
            let w = sigmoid((1.0 - rho2.sqrt()) * mean_r / spec.edge_width);
            v += e.level * w;
            inside = inside.max(w);
        }
        if inside > 0.0 && wave_norm > 0.0 {
            let t: f64 = waves
                .iter()
                .map(|wv| (wv.k[0] * p[0] + wv.k[1] * p[1] + wv.k[2] * p[2] + wv.phase).cos())
                .sum();
            v += wave_norm * t * inside;
        }
        v
    });
    Volume::new(data, spec.spacing)
}
