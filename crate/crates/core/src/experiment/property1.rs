use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::stats::linear_fit;
use crate::fft::fft2_centered;
use crate::field::{aperture_psf, flip_array, ConjugateFlip, FlipCenter, PhaseMap};
use crate::grid::GridSpec;
use crate::pupil::PupilMask;

const MAX_SMALL_PHASE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Property1Point {
    pub epsilon: f64,
    /// `||y - y_*||^2` of the perturbed pupil `P_s + eps P_a`.
    pub separation: f64,
    /// `16 eps^2 ||Im(b c - a d)||^2` with `a = F P_s 1`, `b = F P_s phi`,
    /// `c = F P_a 1`, `d = F P_a phi`.
    pub closed_form: f64,
}

impl Property1Point {
    pub fn ratio(&self) -> f64 {
        self.separation / self.closed_form
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Property1Result {
    pub points: Vec<Property1Point>,
    /// Least-squares slope of `log separation` against `log eps`.
    pub slope: f64,
    /// Slope of `log |separation - closed_form|` against `log eps`.
    pub residual_slope: f64,
}

fn real(a: &Array2<f64>) -> Array2<Complex64> {
    a.mapv(|v| Complex64::new(v, 0.0))
}

/// Exact separation of `P_s + eps P_a` against the small-phase closed form,
/// over every `eps`.
pub fn property1_sweep(
    p_s: &Array2<f64>,
    p_a: &Array2<f64>,
    phase: &PhaseMap,
    epsilons: &[f64],
) -> Result<Property1Result> {
    let n = phase.grid().n;
    phase.grid().check_shape(p_s.shape())?;
    phase.grid().check_shape(p_a.shape())?;
    let flipped = flip_array(p_s, FlipCenter::ORIGIN);
    let deviation = p_s
        .iter()
        .zip(flipped.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if deviation > 1e-12 {
        return Err(Error::NotSymmetric(deviation));
    }
    if phase.max_abs() > MAX_SMALL_PHASE {
        return Err(Error::PhaseTooLarge(phase.max_abs()));
    }
    if epsilons.is_empty() || epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidArgument("epsilons must be nonempty and positive".into()));
    }
    debug_assert_eq!(p_s.nrows(), n);

    let phi = phase.values();
    let a = fft2_centered(&real(p_s));
    let b = fft2_centered(&real(&(p_s * phi)));
    let c = fft2_centered(&real(p_a));
    let d = fft2_centered(&real(&(p_a * phi)));
    let im_sq: f64 = ndarray::Zip::from(&b)
        .and(&c)
        .and(&a)
        .and(&d)
        .fold(0.0, |acc, &b, &c, &a, &d| acc + (b * c - a * d).im.powi(2));

    let phi_star = phase.conjugate_flip();
    let points: Vec<Property1Point> = epsilons
        .iter()
        .map(|&eps| {
            let p = p_s + &(p_a * eps);
            let y = aperture_psf(&p, phi);
            let y_star = aperture_psf(&p, phi_star.values());
            let separation = y
                .iter()
                .zip(y_star.iter())
                .map(|(u, v)| (u - v).powi(2))
                .sum();
            Property1Point {
                epsilon: eps,
                separation,
                closed_form: 16.0 * eps * eps * im_sq,
            }
        })
        .collect();

    let lx: Vec<f64> = points.iter().map(|p| p.epsilon.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.separation.ln()).collect();
    let lr: Vec<f64> = points
        .iter()
        .map(|p| (p.separation - p.closed_form).abs().ln())
        .collect();
    let slope = if points.len() >= 2 { linear_fit(&lx, &ly).0 } else { f64::NAN };
    let residual_slope = if points.len() >= 2 { linear_fit(&lx, &lr).0 } else { f64::NAN };
    Ok(Property1Result {
        points,
        slope,
        residual_slope,
    })
}

/// A centred disk `P_s` (radius 0.5) and a disjoint off-centre disk `P_a`
/// (radius 0.25 at `x = 0.7`), the pair used to check the small-asymmetry
/// expansion.
pub fn standard_property1_pair(grid: &GridSpec) -> Result<(Array2<f64>, Array2<f64>)> {
    let p_s = PupilMask::disk(grid, 0.0, 0.0, 0.5)?;
    let p_a = PupilMask::disk(grid, 0.7, 0.0, 0.25)?;
    Ok((p_s.into_values(), p_a.into_values()))
}

/// Log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..steps)
        .map(|k| (a + (b - a) * k as f64 / (steps - 1) as f64).exp())
        .collect()
}
