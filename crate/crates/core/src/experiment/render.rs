use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::fft::convolve_centered_kernel;
use crate::field::{aperture_psf, PhaseMap};
use crate::pupil::PupilMask;

/// Crops or zero-pads a centred PSF to `m x m` and normalizes it to unit sum.
fn fit_kernel(psf: &Array2<f64>, m: usize) -> Array2<f64> {
    let n = psf.nrows();
    let mut k = Array2::zeros((m, m));
    if m <= n {
        let o = n / 2 - m / 2;
        k.assign(&psf.slice(s![o..o + m, o..o + m]));
    } else {
        let o = m / 2 - n / 2;
        k.slice_mut(s![o..o + n, o..o + n]).assign(psf);
    }
    let total = k.sum();
    if total > 0.0 {
        k.mapv_inplace(|v| v / total);
    }
    k
}

/// Blurs `image` with the aberrated PSF of `(pupil, phase)` and with the
/// residual PSF after correcting by `estimate`. Convolutions are cyclic and
/// both PSFs are normalized to unit sum.
pub fn render_correction(
    image: &Array2<f64>,
    pupil: &PupilMask,
    phase: &PhaseMap,
    estimate: &PhaseMap,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("image is empty".into()));
    }
    if h != w {
        return Err(Error::InvalidArgument(format!("image must be square, got {h}x{w}")));
    }
    if h % 2 != 0 {
        return Err(Error::InvalidArgument(format!("image side {h} must be even")));
    }
    pupil.grid().ensure_same(phase.grid())?;
    let residual = phase.sub(estimate)?;
    let aberrated_psf = fit_kernel(&aperture_psf(pupil.values(), phase.values()), h);
    let residual_psf = fit_kernel(&aperture_psf(pupil.values(), residual.values()), h);
    Ok((
        convolve_centered_kernel(image.view(), aberrated_psf.view()),
        convolve_centered_kernel(image.view(), residual_psf.view()),
    ))
}

/// The unit-sum PSF kernel used by [`render_correction`] at image side `m`.
pub fn correction_kernel(pupil: &PupilMask, phase: &PhaseMap, m: usize) -> Array2<f64> {
    fit_kernel(&aperture_psf(pupil.values(), phase.values()), m)
}
