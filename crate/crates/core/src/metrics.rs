//! Strehl ratios, ambiguity separation, phase error and the
//! throughput-normalized noise model.

use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    aperture_psf, circle_peak, forward_psf, ConjugateFlip, FlipCenter, Normalization, PhaseMap,
    Psf,
};
use crate::pupil::PupilMask;

/// Additive white Gaussian noise applied after circle-peak normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("noise sigma {sigma} must be >= 0")));
        }
        Ok(Self { sigma })
    }

    pub fn clean() -> Self {
        Self { sigma: 0.0 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Adds i.i.d. noise in row-major pixel order.
    pub fn apply<R: Rng + ?Sized>(&self, values: &mut Array2<f64>, rng: &mut R) {
        if self.sigma == 0.0 {
            return;
        }
        let normal = Normal::new(0.0, self.sigma).expect("sigma validated");
        for v in values.iter_mut() {
            *v += normal.sample(rng);
        }
    }
}

/// Clean PSF divided by `max |F C 1|^2`.
pub fn normalized_psf(pupil: &PupilMask, phase: &PhaseMap) -> Result<Psf> {
    let raw = forward_psf(pupil, phase)?;
    let peak = circle_peak(pupil.grid());
    Psf::new(
        pupil.grid(),
        raw.into_values().mapv(|v| v / peak),
        Normalization::CircleNormalized,
        0.0,
    )
}

/// `|F P x|^2 / max |F C 1|^2 + n`.
pub fn noisy_normalized_psf<R: Rng + ?Sized>(
    pupil: &PupilMask,
    phase: &PhaseMap,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Psf> {
    let mut values = normalized_psf(pupil, phase)?.into_values();
    noise.apply(&mut values, rng);
    Psf::new(pupil.grid(), values, Normalization::CircleNormalized, noise.sigma())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrehlReference {
    SelfPupil,
    ReferenceCircle,
}

fn peak(a: &Array2<f64>) -> f64 {
    a.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Strehl ratio after correcting `phase` with `estimate`.
pub fn strehl(
    pupil: &PupilMask,
    phase: &PhaseMap,
    estimate: &PhaseMap,
    reference: StrehlReference,
) -> Result<f64> {
    pupil.grid().ensure_same(phase.grid())?;
    let residual = phase.sub(estimate)?;
    let num = peak(&aperture_psf(pupil.values(), residual.values()));
    let den = match reference {
        StrehlReference::SelfPupil => {
            if pupil.is_empty() {
                return Err(Error::EmptyPupil);
            }
            peak(&aperture_psf(pupil.values(), &Array2::zeros(pupil.values().raw_dim())))
        }
        StrehlReference::ReferenceCircle => circle_peak(pupil.grid()),
    };
    Ok(num / den)
}

/// `||y - y_*||^2 / ||y||^2` with `y_*` formed by the origin conjugate flip
/// of the phase.
pub fn psf_separation(pupil: &PupilMask, phase: &PhaseMap) -> Result<f64> {
    psf_separation_about(pupil, phase, FlipCenter::ORIGIN)
}

/// [`psf_separation`] with the flip taken about `center`.
pub fn psf_separation_about(pupil: &PupilMask, phase: &PhaseMap, center: FlipCenter) -> Result<f64> {
    let y = forward_psf(pupil, phase)?;
    let y_star = forward_psf(pupil, &phase.conjugate_flip_about(center))?;
    let energy: f64 = y.values().iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::EmptyPupil);
    }
    let diff: f64 = y
        .values()
        .iter()
        .zip(y_star.values().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff / energy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseErrorMode {
    Raw,
    #[default]
    ModPiston,
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_phase(v: f64) -> f64 {
    let w = v.rem_euclid(std::f64::consts::TAU);
    if w > std::f64::consts::PI {
        w - std::f64::consts::TAU
    } else {
        w
    }
}

fn support_differences(estimate: &PhaseMap, truth: &PhaseMap, pupil: &PupilMask) -> Result<Vec<f64>> {
    pupil.grid().ensure_same(estimate.grid())?;
    pupil.grid().ensure_same(truth.grid())?;
    let d: Vec<f64> = pupil
        .values()
        .indexed_iter()
        .filter(|(_, &p)| p > 0.0)
        .map(|(ij, _)| estimate.values()[ij] - truth.values()[ij])
        .collect();
    if d.is_empty() {
        return Err(Error::EmptyPupil);
    }
    Ok(d)
}

fn circular_mean(d: &[f64]) -> f64 {
    let s: Complex64 = d.iter().map(|&v| Complex64::from_polar(1.0, v)).sum();
    s.arg()
}

/// Mean squared wrapped phase difference over the pupil support, in rad^2.
/// `ModPiston` first removes the circular mean of the difference.
pub fn phase_error(
    estimate: &PhaseMap,
    truth: &PhaseMap,
    pupil: &PupilMask,
    mode: PhaseErrorMode,
) -> Result<f64> {
    let d = support_differences(estimate, truth, pupil)?;
    let offset = match mode {
        PhaseErrorMode::Raw => 0.0,
        PhaseErrorMode::ModPiston => circular_mean(&d),
    };
    Ok(d.iter().map(|v| wrap_phase(v - offset).powi(2)).sum::<f64>() / d.len() as f64)
}

/// Mean `|exp(j phi_hat) - exp(j (phi + c))|^2` over the support, minimized
/// over the global phase `c` in `ModPiston` mode.
pub fn field_error(
    estimate: &PhaseMap,
    truth: &PhaseMap,
    pupil: &PupilMask,
    mode: PhaseErrorMode,
) -> Result<f64> {
    let d = support_differences(estimate, truth, pupil)?;
    let mean: Complex64 =
        d.iter().map(|&v| Complex64::from_polar(1.0, v)).sum::<Complex64>() / d.len() as f64;
    Ok(match mode {
        PhaseErrorMode::Raw => 2.0 - 2.0 * mean.re,
        PhaseErrorMode::ModPiston => 2.0 - 2.0 * mean.norm(),
    })
}

/// Peak signal-to-noise ratio `10 log10(max(y)^2 / sigma^2)` of a PSF in
/// circle-normalized units. For the clean reference circle this is
/// `-20 log10(sigma)`.
pub fn psnr_vs_reference(psf: &Psf, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "PSNR is undefined for sigma = {sigma}"
        )));
    }
    let scale = match psf.normalization() {
        Normalization::Raw => circle_peak(psf.grid()),
        Normalization::CircleNormalized => 1.0,
    };
    let peak = psf.max() / scale;
    Ok(20.0 * peak.log10() - 20.0 * sigma.log10())
}

/// One row of a metric CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub pupil_id: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub scale: f64,
    pub mse: f64,
    pub strehl_self: f64,
    pub strehl_circle: f64,
    pub separation: f64,
    pub psnr: f64,
}

pub fn write_metric_csv<W: Write>(writer: W, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
