//! Realized PSF of a phase-only SLM that emulates a pupil with a checkerboard
//! background.
//!
//! Outside the intended pupil the SLM displays a high-frequency carrier `c`
//! instead of zero amplitude, so the field inside the beam `C` is
//! `z = P x + (I - P) c` and the camera records `|F C z|^2`. The carrier's
//! energy is diffracted mostly to high spatial frequencies, but it also
//! interferes with the intended field.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::field::{Normalization, PhaseMap, Psf};
use crate::grid::GridSpec;
use crate::pupil::PupilMask;

/// Alternating `{0, pi}` phase pattern with square cells of `pitch` pixels.
pub fn checkerboard_carrier(grid: &GridSpec, pitch: usize) -> Result<PhaseMap> {
    if pitch == 0 {
        return Err(Error::InvalidArgument("checkerboard pitch must be >= 1".into()));
    }
    let values = Array2::from_shape_fn((grid.n, grid.n), |(i, j)| {
        if ((i / pitch) + (j / pitch)) % 2 == 1 {
            std::f64::consts::PI
        } else {
            0.0
        }
    });
    PhaseMap::new(grid, values)
}

/// The three contributions to the realized PSF.
#[derive(Debug, Clone)]
pub struct SlmTerms {
    /// `|F P x|^2`
    pub intended: Array2<f64>,
    /// `|F C (I - P) c|^2`
    pub carrier: Array2<f64>,
    /// `2 Re{(F P x) . conj(F C (I - P) c)}`
    pub interference: Array2<f64>,
}

impl SlmTerms {
    pub fn total(&self) -> Array2<f64> {
        &self.intended + &self.carrier + &self.interference
    }
}

fn split_fields(
    pupil: &PupilMask,
    phase: &PhaseMap,
    carrier: &PhaseMap,
    beam: &PupilMask,
) -> Result<(Array2<Complex64>, Array2<Complex64>)> {
    let g = pupil.grid();
    g.ensure_same(phase.grid())?;
    g.ensure_same(carrier.grid())?;
    g.ensure_same(beam.grid())?;
    let p = pupil.values();
    let b = beam.values();
    for ((i, j), &v) in p.indexed_iter() {
        if v > 0.0 && b[[i, j]] <= 0.0 {
            return Err(Error::PupilOutsideBeam { row: i, col: j });
        }
    }
    let intended = Array2::from_shape_fn((g.n, g.n), |(i, j)| {
        let v = p[[i, j]];
        if v == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(v, phase.values()[[i, j]])
        }
    });
    let background = Array2::from_shape_fn((g.n, g.n), |(i, j)| {
        let w = b[[i, j]] * (1.0 - p[[i, j]]);
        if w == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(w, carrier.values()[[i, j]])
        }
    });
    Ok((intended, background))
}

/// Realized PSF `|F C (P x + (I - P) c)|^2` (raw normalization).
pub fn simulate_slm_psf(
    pupil: &PupilMask,
    phase: &PhaseMap,
    carrier: &PhaseMap,
    beam: &PupilMask,
) -> Result<Psf> {
    let (intended, background) = split_fields(pupil, phase, carrier, beam)?;
    let z = intended + background;
    Psf::new(pupil.grid(), fft::intensity(&z), Normalization::Raw, 0.0)
}

/// Decomposes the realized PSF into intended, carrier and interference terms.
pub fn slm_terms(
    pupil: &PupilMask,
    phase: &PhaseMap,
    carrier: &PhaseMap,
    beam: &PupilMask,
) -> Result<SlmTerms> {
    let (intended, background) = split_fields(pupil, phase, carrier, beam)?;
    let a = fft::fft2_centered(&intended);
    let b = fft::fft2_centered(&background);
    let interference = ndarray::Zip::from(&a)
        .and(&b)
        .map_collect(|x, y| 2.0 * (x * y.conj()).re);
    Ok(SlmTerms {
        intended: a.mapv(|v| v.norm_sqr()),
        carrier: b.mapv(|v| v.norm_sqr()),
        interference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::forward_psf;
    use crate::pupil::PupilMask;

    #[test]
    fn checkerboard_pattern() {
        let g = GridSpec::new(8, 8).unwrap();
        let c = checkerboard_carrier(&g, 1).unwrap();
        assert_eq!(c.values()[[4, 4]], 0.0);
        assert_eq!(c.values()[[4, 5]], std::f64::consts::PI);
        let c2 = checkerboard_carrier(&g, 2).unwrap();
        assert_eq!(c2.values()[[4, 4]], 0.0);
        assert_eq!(c2.values()[[4, 5]], 0.0);
        assert_eq!(c2.values()[[4, 6]], std::f64::consts::PI);
        assert!(checkerboard_carrier(&g, 0).is_err());
    }

    #[test]
    fn pupil_outside_beam_is_rejected() {
        let g = GridSpec::new(32, 16).unwrap();
        let big = PupilMask::circle(&g);
        let small = PupilMask::disk(&g, 0.0, 0.0, 0.5).unwrap();
        let z = PhaseMap::zeros(&g);
        let c = checkerboard_carrier(&g, 1).unwrap();
        assert!(matches!(
            simulate_slm_psf(&big, &z, &c, &small),
            Err(Error::PupilOutsideBeam { .. })
        ));
        assert!(simulate_slm_psf(&small, &z, &c, &big).is_ok());
    }

    #[test]
    fn full_pupil_collapses_to_forward_model() {
        let g = GridSpec::new(32, 16).unwrap();
        let c = PupilMask::circle(&g);
        let phase = PhaseMap::new(
            &g,
            Array2::from_shape_fn((32, 32), |(i, j)| 0.1 * i as f64 - 0.05 * j as f64),
        )
        .unwrap();
        let carrier = checkerboard_carrier(&g, 1).unwrap();
        let slm = simulate_slm_psf(&c, &phase, &carrier, &c).unwrap();
        let direct = forward_psf(&c, &phase).unwrap();
        for (a, b) in slm.values().iter().zip(direct.values().iter()) {
            assert!((a - b).abs() <= 1e-10 * direct.max());
        }
    }
}
