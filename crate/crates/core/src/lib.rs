//! Pupil design for single-shot wavefront estimation.
//!
//! Forward PSF simulation through arbitrary pupils, the pupil asymmetry
//! metric, an asymmetry-binned convex pupil sampler, recoverability metrics,
//! a support-constrained phase-retrieval estimator and the experiment
//! drivers built on them.

pub mod dataset;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod fft;
pub mod field;
pub mod grid;
pub mod metrics;
pub mod pupil;
pub mod slm;
pub mod zernike;

pub use error::{Error, Result};
pub use field::{
    aperture_psf, circle_peak, flip_array, forward_psf, ComplexField, ConjugateFlip, FlipCenter,
    Normalization, PhaseMap, Psf,
};
pub use grid::GridSpec;
pub use pupil::{
    asymmetry, build_pupil_set, convex_hull, decompose, decompose_about, decompose_at_best_shift,
    parse_vertex_list, rasterize_hull, regular_polygon, sample_pupil, Asymmetry, BinEdges,
    ConvexHullSpec, FillStatus, PupilDecomposition, PupilEntry, PupilMask, PupilSet,
    PupilSetConfig, SamplerConfig,
};
pub use slm::{checkerboard_carrier, simulate_slm_psf, slm_terms, SlmTerms};
pub use zernike::{
    build_zernike_basis, noll_to_nm, synthesize_phase, ZernikeBasis, ZernikeNormalization,
};
