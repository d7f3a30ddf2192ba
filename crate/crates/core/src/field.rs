//! Phase maps, pupil fields, PSFs and the conjugate flip.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::grid::GridSpec;
use crate::pupil::PupilMask;

/// Centre of a point reflection on the discrete grid.
///
/// Stored as the index sum `(c_row, c_col)`: the reflection maps
/// `(i, j) -> ((c_row - i) mod n, (c_col - j) mod n)`. [`FlipCenter::ORIGIN`]
/// (`(0, 0)`) is the reflection through the centre pixel; odd sums place the
/// centre between pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FlipCenter(pub usize, pub usize);

impl FlipCenter {
    pub const ORIGIN: FlipCenter = FlipCenter(0, 0);

    /// Reduce a full-grid index sum to the canonical form for side `n`.
    pub fn from_index_sum(row_sum: usize, col_sum: usize, n: usize) -> Self {
        FlipCenter(row_sum % n, col_sum % n)
    }

    #[inline]
    pub fn map(&self, i: usize, j: usize, n: usize) -> (usize, usize) {
        ((self.0 + n - i % n) % n, (self.1 + n - j % n) % n)
    }
}

/// Reflects any square array about `center` (no conjugation).
pub fn flip_array<T: Clone>(a: &Array2<T>, center: FlipCenter) -> Array2<T> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    Array2::from_shape_fn((n, n), |(i, j)| {
        let (fi, fj) = center.map(i, j, n);
        a[[fi, fj]].clone()
    })
}

/// Complex conjugate combined with a point reflection.
pub trait ConjugateFlip: Sized {
    fn conjugate_flip_about(&self, center: FlipCenter) -> Self;

    fn conjugate_flip(&self) -> Self {
        self.conjugate_flip_about(FlipCenter::ORIGIN)
    }
}

/// Real phase (radians) on the grid, zero outside the reference circle.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    grid: GridSpec,
    values: Array2<f64>,
}

impl PhaseMap {
    /// Wraps `values`, zeroing everything outside the reference circle.
    pub fn new(grid: &GridSpec, mut values: Array2<f64>) -> Result<Self> {
        grid.check_shape(values.shape())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("phase map"));
        }
        for ((i, j), v) in values.indexed_iter_mut() {
            if !grid.in_circle(i, j) {
                *v = 0.0;
            }
        }
        Ok(Self {
            grid: *grid,
            values,
        })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            values: Array2::zeros((grid.n, grid.n)),
        }
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Result<Self> {
        Self::new(grid, Array2::from_elem((grid.n, grid.n), c))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &PhaseMap) -> Result<PhaseMap> {
        self.grid.ensure_same(&other.grid)?;
        Ok(PhaseMap {
            grid: self.grid,
            values: &self.values - &other.values,
        })
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &PhaseMap) -> Result<PhaseMap> {
        self.grid.ensure_same(&other.grid)?;
        Ok(PhaseMap {
            grid: self.grid,
            values: &self.values + &other.values,
        })
    }

    pub fn scaled(&self, s: f64) -> PhaseMap {
        PhaseMap {
            grid: self.grid,
            values: self.values.mapv(|v| v * s),
        }
    }

    /// `(phi + flip(phi)) / 2` about the origin, the even part of the map.
    pub fn even_part(&self) -> PhaseMap {
        let f = flip_array(&self.values, FlipCenter::ORIGIN);
        PhaseMap {
            grid: self.grid,
            values: (&self.values + &f) * 0.5,
        }
    }
}

impl ConjugateFlip for PhaseMap {
    /// `x_* = conj(x(c - t))` has phase `-phi(c - t)`.
    fn conjugate_flip_about(&self, center: FlipCenter) -> Self {
        let mut values = flip_array(&self.values, center).mapv(|v| -v);
        for ((i, j), v) in values.indexed_iter_mut() {
            if !self.grid.in_circle(i, j) {
                *v = 0.0;
            }
        }
        PhaseMap {
            grid: self.grid,
            values,
        }
    }
}

/// Complex pupil-plane field `P exp(j phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    values: Array2<Complex64>,
}

impl ComplexField {
    pub fn new(grid: &GridSpec, values: Array2<Complex64>) -> Result<Self> {
        grid.check_shape(values.shape())?;
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("complex field"));
        }
        Ok(Self {
            grid: *grid,
            values,
        })
    }

    pub fn from_pupil_phase(pupil: &PupilMask, phase: &PhaseMap) -> Result<Self> {
        pupil.grid().ensure_same(phase.grid())?;
        Ok(Self {
            grid: *pupil.grid(),
            values: pupil_field(pupil.values(), phase.values()),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    /// `|F field|^2`, raw normalization.
    pub fn psf(&self) -> Psf {
        Psf {
            grid: self.grid,
            values: fft::intensity(&self.values),
            normalization: Normalization::Raw,
            sigma: 0.0,
        }
    }
}

impl ConjugateFlip for ComplexField {
    fn conjugate_flip_about(&self, center: FlipCenter) -> Self {
        ComplexField {
            grid: self.grid,
            values: flip_array(&self.values, center).mapv(|v| v.conj()),
        }
    }
}

/// How a PSF's intensities are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `|F P x|^2` with the unnormalized centred DFT.
    Raw,
    /// Divided by the diffraction-limited peak of the reference circle.
    CircleNormalized,
}

/// Intensity image in the focal plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    grid: GridSpec,
    values: Array2<f64>,
    normalization: Normalization,
    sigma: f64,
}

impl Psf {
    pub fn new(
        grid: &GridSpec,
        values: Array2<f64>,
        normalization: Normalization,
        sigma: f64,
    ) -> Result<Self> {
        grid.check_shape(values.shape())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("psf"));
        }
        if !(sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise sigma {sigma} must be >= 0")));
        }
        Ok(Self {
            grid: *grid,
            values,
            normalization,
            sigma,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    /// Factor that converts this PSF back to raw `|F P x|^2` units.
    pub fn raw_scale(&self) -> f64 {
        match self.normalization {
            Normalization::Raw => 1.0,
            Normalization::CircleNormalized => circle_peak(&self.grid),
        }
    }
}

pub(crate) fn pupil_field(pupil: &Array2<f64>, phase: &Array2<f64>) -> Array2<Complex64> {
    let mut out = Array2::from_elem(pupil.raw_dim(), Complex64::new(0.0, 0.0));
    ndarray::Zip::from(&mut out)
        .and(pupil)
        .and(phase)
        .for_each(|o, &p, &phi| {
            if p != 0.0 {
                *o = Complex64::from_polar(p, phi);
            }
        });
    out
}

/// Clean PSF `|F P exp(j phi)|^2` with the centred, unnormalized DFT.
pub fn forward_psf(pupil: &PupilMask, phase: &PhaseMap) -> Result<Psf> {
    pupil.grid().ensure_same(phase.grid())?;
    Ok(Psf {
        grid: *pupil.grid(),
        values: fft::intensity(&pupil_field(pupil.values(), phase.values())),
        normalization: Normalization::Raw,
        sigma: 0.0,
    })
}

/// Raw-units PSF of an arbitrary real (possibly scalar-valued) aperture.
pub fn aperture_psf(aperture: &Array2<f64>, phase: &Array2<f64>) -> Array2<f64> {
    fft::intensity(&pupil_field(aperture, phase))
}

/// `max |F C 1|^2` for the reference circle of `grid`.
///
/// Computed through the same transform as every other PSF so that the
/// unaberrated circle normalizes to a peak of exactly one.
pub fn circle_peak(grid: &GridSpec) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<GridSpec, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().expect("cache poisoned").get(grid) {
        return *v;
    }
    let circle = PupilMask::circle(grid);
    let peak = aperture_psf(circle.values(), &Array2::zeros((grid.n, grid.n)))
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    cache.lock().expect("cache poisoned").insert(*grid, peak);
    peak
}
