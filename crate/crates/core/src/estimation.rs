//! Support-constrained phase retrieval, conjugate-flip disambiguation and
//! Zernike fitting.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2_raw, half_shift, intensity};
use crate::field::{aperture_psf, ConjugateFlip, FlipCenter, PhaseMap, Psf};
use crate::metrics::wrap_phase;
use crate::pupil::{asymmetry, PupilMask};
use crate::zernike::ZernikeBasis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalInit {
    /// Flat phase for the first restart, random phases for the rest.
    Flat,
    Random,
    /// The given phase for the first restart, random phases for the rest.
    Given(Array2<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Hybrid input-output cycles, each followed by error-reduction steps.
    Hio,
    /// Pure alternating projections.
    ErrorReduction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub max_iters: usize,
    pub beta: f64,
    pub restarts: usize,
    pub init: RetrievalInit,
    pub mode: RetrievalMode,
    /// HIO steps per cycle.
    pub hio_steps: usize,
    /// Error-reduction steps closing each cycle.
    pub er_steps: usize,
    /// Error-reduction steps at the end of the run.
    pub er_tail: usize,
    /// Stop once the normalized residual falls below this value.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            beta: 0.9,
            restarts: 10,
            init: RetrievalInit::Flat,
            mode: RetrievalMode::Hio,
            hio_steps: 40,
            er_steps: 10,
            er_tail: 30,
            tolerance: 1e-12,
            seed: 0,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be >= 1".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidConfig(format!("beta {} outside (0, 1]", self.beta)));
        }
        if self.mode == RetrievalMode::Hio && self.hio_steps + self.er_steps == 0 {
            return Err(Error::InvalidConfig("HIO cycle has no steps".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipChoice {
    Identity,
    Flipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipDecision {
    pub choice: FlipChoice,
    /// `|e_id - e_fl| / ||y||^2`.
    pub margin: f64,
    pub error_identity: f64,
    pub error_flipped: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// Wrapped, piston-removed phase on the pupil support.
    pub phase: PhaseMap,
    /// `||sqrt(y) - |F P x_hat|||^2 / ||sqrt(y)||^2`.
    pub residual: f64,
    pub flip_choice: FlipChoice,
    pub flip_margin: f64,
    pub restart: usize,
    pub iterations: usize,
    /// Residual after every error-reduction step of the chosen restart.
    pub history: Vec<f64>,
}

struct Problem {
    /// Pupil amplitude, corner-origin layout.
    amplitude: Array2<f64>,
    /// Fourier magnitude `sqrt(max(y, 0))` in raw units, corner-origin.
    magnitude: Array2<f64>,
    norm: f64,
}

struct RunResult {
    field: Array2<Complex64>,
    residual: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn project_support(z: &Array2<Complex64>, amplitude: &Array2<f64>) -> Array2<Complex64> {
    let mut out = Array2::from_elem(z.raw_dim(), Complex64::new(0.0, 0.0));
    ndarray::Zip::from(&mut out)
        .and(z)
        .and(amplitude)
        .for_each(|o, &v, &a| {
            if a > 0.0 {
                let m = v.norm();
                *o = if m > 0.0 { v * (a / m) } else { Complex64::new(a, 0.0) };
            }
        });
    out
}

/// Applies the Fourier-magnitude projection to `g` and returns the
/// pupil-plane result together with the residual `sum (|G| - M)^2`.
fn fourier_projection(g: &Array2<Complex64>, magnitude: &Array2<f64>) -> (Array2<Complex64>, f64) {
    let mut big = g.clone();
    fft2_raw(&mut big, FftDirection::Forward);
    let mut residual = 0.0;
    ndarray::Zip::from(&mut big).and(magnitude).for_each(|v, &m| {
        let a = v.norm();
        residual += (a - m) * (a - m);
        *v = if a > 0.0 { *v * (m / a) } else { Complex64::new(m, 0.0) };
    });
    fft2_raw(&mut big, FftDirection::Inverse);
    let scale = 1.0 / big.len() as f64;
    big.mapv_inplace(|v| v * scale);
    (big, residual)
}

fn run_once(problem: &Problem, init_phase: &Array2<f64>, cfg: &RetrievalConfig) -> RunResult {
    let mut g = Array2::from_shape_fn(problem.amplitude.raw_dim(), |ij| {
        Complex64::from_polar(problem.amplitude[ij], init_phase[ij])
    });
    let hio_end = cfg.max_iters.saturating_sub(cfg.er_tail);
    let cycle = cfg.hio_steps + cfg.er_steps;
    let mut history = Vec::new();
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let hio = cfg.mode == RetrievalMode::Hio && it < hio_end && it % cycle < cfg.hio_steps;
        let (gp, r) = fourier_projection(&g, &problem.magnitude);
        if hio {
            ndarray::Zip::from(&mut g)
                .and(&gp)
                .and(&problem.amplitude)
                .for_each(|v, &p, &a| {
                    if a > 0.0 {
                        let m = p.norm();
                        *v = if m > 0.0 { p * (a / m) } else { Complex64::new(a, 0.0) };
                    } else {
                        *v -= p * cfg.beta;
                    }
                });
        } else {
            // the residual of a support-feasible iterate
            let feasible = g.iter().zip(problem.amplitude.iter()).all(|(v, &a)| {
                a > 0.0 || *v == Complex64::new(0.0, 0.0)
            });
            if feasible {
                history.push(r / problem.norm);
                if r / problem.norm < cfg.tolerance {
                    break;
                }
            }
            g = project_support(&gp, &problem.amplitude);
        }
    }
    let g = project_support(&g, &problem.amplitude);
    let (_, r) = fourier_projection(&g, &problem.magnitude);
    let residual = r / problem.norm;
    history.push(residual);
    RunResult {
        field: g,
        residual,
        iterations,
        history,
    }
}

fn random_phase(seed: u64, restart: usize, shape: (usize, usize)) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    Array2::from_shape_fn(shape, |_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
}

/// Wraps to `(-pi, pi]` after removing the circular mean over the support,
/// zero off the support.
fn piston_removed(phase: &Array2<f64>, pupil: &PupilMask) -> Result<PhaseMap> {
    let support = pupil.values();
    let s: Complex64 = phase
        .iter()
        .zip(support.iter())
        .filter(|(_, &p)| p > 0.0)
        .map(|(&v, _)| Complex64::from_polar(1.0, v))
        .sum();
    let mean = s.arg();
    let values = Array2::from_shape_fn(phase.raw_dim(), |ij| {
        if support[ij] > 0.0 {
            wrap_phase(phase[ij] - mean)
        } else {
            0.0
        }
    });
    PhaseMap::new(pupil.grid(), values)
}

/// Estimates the pupil phase from a single PSF by support-constrained
/// alternating projections with random restarts; the lowest-residual restart
/// wins (ties to the lower index). The result is then checked against its
/// conjugate flip about the pupil's maximum-overlap centre.
pub fn retrieve_wavefront(psf: &Psf, pupil: &PupilMask, cfg: &RetrievalConfig) -> Result<Estimate> {
    cfg.validate()?;
    pupil.grid().ensure_same(psf.grid())?;
    if pupil.is_empty() {
        return Err(Error::EmptyPupil);
    }
    let scale = psf.raw_scale();
    let magnitude = half_shift(&psf.values().mapv(|v| (v.max(0.0) * scale).sqrt()));
    let norm = magnitude.iter().map(|m| m * m).sum::<f64>().max(f64::MIN_POSITIVE);
    let problem = Problem {
        amplitude: half_shift(pupil.values()),
        magnitude,
        norm,
    };
    let shape = problem.amplitude.dim();
    let runs: Vec<RunResult> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| {
            let init = match (&cfg.init, k) {
                (RetrievalInit::Flat, 0) => Array2::zeros(shape),
                (RetrievalInit::Given(p), 0) => half_shift(p),
                _ => random_phase(cfg.seed, k, shape),
            };
            run_once(&problem, &init, cfg)
        })
        .collect();
    let (best_idx, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.residual.total_cmp(&b.residual).then(ia.cmp(ib)))
        .expect("restarts >= 1");
    let raw_phase = half_shift(&best.field.mapv(|v| v.arg()));
    let candidate = piston_removed(&raw_phase, pupil)?;
    let center = asymmetry(pupil)?.flip_center(pupil.grid().n);
    let decision = disambiguate_flip_about(psf, pupil, &candidate, center)?;
    let phase = match decision.choice {
        FlipChoice::Identity => candidate,
        FlipChoice::Flipped => {
            let f = candidate.conjugate_flip_about(center);
            piston_removed(f.values(), pupil)?
        }
    };
    Ok(Estimate {
        phase,
        residual: best.residual,
        flip_choice: decision.choice,
        flip_margin: decision.margin,
        restart: best_idx,
        iterations: best.iterations,
        history: best.history,
    })
}

/// Compares the PSF against both flip candidates about the grid origin.
pub fn disambiguate_flip(psf: &Psf, pupil: &PupilMask, candidate: &PhaseMap) -> Result<FlipDecision> {
    disambiguate_flip_about(psf, pupil, candidate, FlipCenter::ORIGIN)
}

/// [`disambiguate_flip`] with the flip taken about `center`. Exact ties
/// resolve to the identity.
pub fn disambiguate_flip_about(
    psf: &Psf,
    pupil: &PupilMask,
    candidate: &PhaseMap,
    center: FlipCenter,
) -> Result<FlipDecision> {
    pupil.grid().ensure_same(psf.grid())?;
    pupil.grid().ensure_same(candidate.grid())?;
    let inv = 1.0 / psf.raw_scale();
    let y = psf.values();
    let model = |phase: &PhaseMap| -> f64 {
        let m = aperture_psf(pupil.values(), phase.values());
        y.iter()
            .zip(m.iter())
            .map(|(a, b)| (a - b * inv).powi(2))
            .sum()
    };
    let e_id = model(candidate);
    let e_fl = model(&candidate.conjugate_flip_about(center));
    let energy: f64 = y.iter().map(|v| v * v).sum();
    let margin = if energy > 0.0 {
        (e_id - e_fl).abs() / energy
    } else {
        0.0
    };
    Ok(FlipDecision {
        choice: if e_fl < e_id {
            FlipChoice::Flipped
        } else {
            FlipChoice::Identity
        },
        margin,
        error_identity: e_id,
        error_flipped: e_fl,
    })
}

/// `||y - |F P x_hat|^2||^2 / ||y||^2` for the mixture
/// `x_hat = pi1 x + pi2 x_*`.
pub fn ambiguous_average_mismatch(pupil: &PupilMask, phase: &PhaseMap, pi1: f64, pi2: f64) -> Result<f64> {
    ambiguous_average_mismatch_about(pupil, phase, pi1, pi2, FlipCenter::ORIGIN)
}

pub fn ambiguous_average_mismatch_about(
    pupil: &PupilMask,
    phase: &PhaseMap,
    pi1: f64,
    pi2: f64,
    center: FlipCenter,
) -> Result<f64> {
    if pi1 < 0.0 || pi2 < 0.0 || (pi1 + pi2 - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "mixture weights ({pi1}, {pi2}) must be nonnegative and sum to 1"
        )));
    }
    pupil.grid().ensure_same(phase.grid())?;
    let flipped = phase.conjugate_flip_about(center);
    let p = pupil.values();
    let field = Array2::from_shape_fn(p.raw_dim(), |ij| {
        (Complex64::from_polar(1.0, phase.values()[ij]) * pi1
            + Complex64::from_polar(1.0, flipped.values()[ij]) * pi2)
            * p[ij]
    });
    let mixed = intensity(&field);
    let y = aperture_psf(p, phase.values());
    let energy: f64 = y.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::EmptyPupil);
    }
    let diff: f64 = y.iter().zip(mixed.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(diff / energy)
}

const MAX_CONDITION: f64 = 1e10;

/// Least-squares Zernike coefficients of `phase` over the pupil support.
pub fn fit_zernike(phase: &PhaseMap, pupil: &PupilMask, basis: &ZernikeBasis) -> Result<Vec<f64>> {
    pupil.grid().ensure_same(phase.grid())?;
    pupil.grid().ensure_same(basis.grid())?;
    let pixels: Vec<(usize, usize)> = pupil
        .values()
        .indexed_iter()
        .filter(|(_, &p)| p > 0.0)
        .map(|(ij, _)| ij)
        .collect();
    if pixels.is_empty() {
        return Err(Error::EmptyPupil);
    }
    let m = basis.len();
    let a = DMatrix::from_fn(pixels.len(), m, |r, c| basis.maps()[c][pixels[r]]);
    let b = DVector::from_iterator(pixels.len(), pixels.iter().map(|&ij| phase.values()[ij]));
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    let sv = ata.singular_values();
    let (smax, smin) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if pixels.len() < m || condition > MAX_CONDITION {
        return Err(Error::RankDeficient { condition });
    }
    let chol = ata
        .cholesky()
        .ok_or(Error::RankDeficient { condition })?;
    Ok(chol.solve(&atb).iter().cloned().collect())
}
