use std::io::Write;

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{retrieve_wavefront, RetrievalConfig};
use crate::experiment::phases::{PhaseSampler, PhaseSplit};
use crate::experiment::stats::{mean, sem, spearman};
use crate::field::{aperture_psf, circle_peak, ConjugateFlip, FlipCenter, Normalization, Psf};
use crate::metrics::{
    field_error, phase_error, strehl, MetricRecord, NoiseModel, PhaseErrorMode, StrehlReference,
};
use crate::pupil::{PupilEntry, PupilSet};
use crate::zernike::ZernikeBasis;

/// Margins below this are treated as an exact tie between flip candidates.
pub const TIE_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipReference {
    /// Reflection through the grid origin.
    Origin,
    /// Reflection about each pupil's maximum-overlap centre.
    #[default]
    MaxOverlap,
}

impl FlipReference {
    pub fn center(&self, entry: &PupilEntry) -> FlipCenter {
        match self {
            FlipReference::Origin => FlipCenter::ORIGIN,
            FlipReference::MaxOverlap => entry.asymmetry.flip_center(entry.mask.grid().n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Held-out phases evaluated per pupil.
    pub phases_per_pupil: usize,
    pub sigmas: Vec<f64>,
    pub scales: Vec<f64>,
    pub sampler: PhaseSampler,
    pub seed: u64,
    /// Runs the estimator on every record when set; otherwise only the
    /// estimator-free quantities are computed.
    pub retrieval: Option<RetrievalConfig>,
    pub flip_reference: FlipReference,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phases_per_pupil: 50,
            sigmas: vec![0.0],
            scales: vec![1.0],
            sampler: PhaseSampler::default(),
            seed: 0,
            retrieval: None,
            flip_reference: FlipReference::MaxOverlap,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phases_per_pupil == 0 {
            return Err(Error::InvalidConfig("phases_per_pupil must be >= 1".into()));
        }
        if self.sigmas.is_empty() || self.scales.is_empty() {
            return Err(Error::InvalidConfig("sigma and scale lists must be nonempty".into()));
        }
        if self.sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("sigmas must be finite and >= 0".into()));
        }
        if self.scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("scales must be finite and > 0".into()));
        }
        self.sampler.validate()?;
        if let Some(r) = &self.retrieval {
            r.validate()?;
        }
        Ok(())
    }
}

/// Everything measured for one (pupil, phase, sigma, scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRecord {
    pub pupil_id: usize,
    pub bin: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub scale: f64,
    pub phase_index: usize,
    /// Normalized separation of the clean PSF from its flip counterpart.
    pub separation: f64,
    /// Ground-truth-candidate flip classification: 1 correct, 0 wrong,
    /// 0.5 for an exact tie.
    pub flip_score: f64,
    pub flip_margin: f64,
    pub mse: f64,
    pub field_mse: f64,
    pub strehl_self: f64,
    pub strehl_circle: f64,
    pub residual: f64,
    pub psnr: f64,
}

impl TrendRecord {
    pub fn metric_record(&self) -> MetricRecord {
        MetricRecord {
            pupil_id: self.pupil_id,
            alpha: self.alpha,
            sigma: self.sigma,
            scale: self.scale,
            mse: self.mse,
            strehl_self: self.strehl_self,
            strehl_circle: self.strehl_circle,
            separation: self.separation,
            psnr: self.psnr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAggregate {
    pub sigma: f64,
    pub scale: f64,
    pub bin: usize,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub pupils: usize,
    pub records: usize,
    pub mean_alpha: f64,
    pub mean_separation: f64,
    pub sem_separation: f64,
    pub flip_accuracy: f64,
    pub mean_mse: f64,
    pub sem_mse: f64,
    pub mean_strehl_self: f64,
    pub mean_strehl_circle: f64,
    /// Strehl ratio against the circle under perfect correction.
    pub perfect_strehl_circle: f64,
    pub mean_psnr: f64,
}

/// Spearman correlations of bin-mean quantities against bin-mean alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendCorrelations {
    pub separation: f64,
    pub flip_accuracy: f64,
    pub mse: f64,
    pub strehl_self: f64,
    pub strehl_circle: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub sigma: f64,
    pub scale: f64,
    pub bins: Vec<BinAggregate>,
    pub correlations: TrendCorrelations,
    pub records: Vec<TrendRecord>,
}

impl TrendReport {
    pub fn metric_records(&self) -> Vec<MetricRecord> {
        self.records.iter().map(TrendRecord::metric_record).collect()
    }
}

fn noise_seed(seed: u64, sigma_index: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(sigma_index as u64 + 1)
}

fn retrieval_seed(seed: u64, pupil_id: usize, phase_index: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D)
        ^ ((pupil_id as u64) << 24)
        ^ phase_index as u64
}

fn sq_dist(a: &Array2<f64>, b: &Array2<f64>, scale: f64) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v * scale).powi(2)).sum()
}

fn evaluate_pupil(
    entry: &PupilEntry,
    basis: &ZernikeBasis,
    cfg: &ExperimentConfig,
) -> Result<(Vec<TrendRecord>, f64)> {
    let grid = *entry.mask.grid();
    let pupil = &entry.mask;
    let center = cfg.flip_reference.center(entry);
    let pc = circle_peak(&grid);
    let zero = Array2::zeros((grid.n, grid.n));
    let peak = aperture_psf(pupil.values(), &zero)
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        / pc;
    let mut out = Vec::with_capacity(cfg.scales.len() * cfg.sigmas.len() * cfg.phases_per_pupil);
    for &scale in &cfg.scales {
        let sampler = cfg.sampler.with_scale(scale);
        for j in 0..cfg.phases_per_pupil {
            let phase = sampler.phase(basis, cfg.seed, PhaseSplit::Test, j)?;
            let y = aperture_psf(pupil.values(), phase.values());
            let y_star = aperture_psf(pupil.values(), phase.conjugate_flip_about(center).values());
            let energy: f64 = y.iter().map(|v| v * v).sum();
            let separation = sq_dist(&y, &y_star, 1.0) / energy;
            for (si, &sigma) in cfg.sigmas.iter().enumerate() {
                let mut values = y.mapv(|v| v / pc);
                let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(cfg.seed, si));
                rng.set_stream(j as u64);
                NoiseModel::new(sigma)?.apply(&mut values, &mut rng);
                let e_id = sq_dist(&values, &y, 1.0 / pc);
                let e_fl = sq_dist(&values, &y_star, 1.0 / pc);
                let measured: f64 = values.iter().map(|v| v * v).sum();
                let margin = (e_id - e_fl).abs() / measured;
                let flip_score = if margin <= TIE_MARGIN {
                    0.5
                } else if e_id < e_fl {
                    1.0
                } else {
                    0.0
                };
                let psnr = if sigma > 0.0 {
                    20.0 * peak.log10() - 20.0 * sigma.log10()
                } else {
                    f64::INFINITY
                };
                let mut rec = TrendRecord {
                    pupil_id: entry.id,
                    bin: entry.bin,
                    alpha: entry.alpha(),
                    sigma,
                    scale,
                    phase_index: j,
                    separation,
                    flip_score,
                    flip_margin: margin,
                    mse: f64::NAN,
                    field_mse: f64::NAN,
                    strehl_self: f64::NAN,
                    strehl_circle: f64::NAN,
                    residual: f64::NAN,
                    psnr,
                };
                if let Some(rcfg) = &cfg.retrieval {
                    let psf = Psf::new(&grid, values, Normalization::CircleNormalized, sigma)?;
                    let rcfg = RetrievalConfig {
                        seed: retrieval_seed(cfg.seed, entry.id, j),
                        ..rcfg.clone()
                    };
                    let est = retrieve_wavefront(&psf, pupil, &rcfg)?;
                    rec.mse = phase_error(&est.phase, &phase, pupil, PhaseErrorMode::ModPiston)?;
                    rec.field_mse = field_error(&est.phase, &phase, pupil, PhaseErrorMode::ModPiston)?;
                    rec.strehl_self = strehl(pupil, &phase, &est.phase, StrehlReference::SelfPupil)?;
                    rec.strehl_circle =
                        strehl(pupil, &phase, &est.phase, StrehlReference::ReferenceCircle)?;
                    rec.residual = est.residual;
                }
                out.push(rec);
            }
        }
    }
    Ok((out, peak))
}

fn finite_corr(x: &[f64], y: &[f64]) -> f64 {
    let (fx, fy): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    if fx.len() < 2 {
        f64::NAN
    } else {
        spearman(&fx, &fy)
    }
}

fn aggregate(
    set: &PupilSet,
    sigma: f64,
    scale: f64,
    records: Vec<TrendRecord>,
    peaks: &[(usize, f64)],
) -> TrendReport {
    let mut bins = Vec::new();
    for b in 0..set.edges.bins() {
        let recs: Vec<&TrendRecord> = records.iter().filter(|r| r.bin == b).collect();
        if recs.is_empty() {
            continue;
        }
        let col = |f: fn(&TrendRecord) -> f64| -> Vec<f64> { recs.iter().map(|r| f(r)).collect() };
        let pupils: Vec<f64> = set.in_bin(b).map(|e| e.alpha()).collect();
        let bin_peaks: Vec<f64> = set
            .in_bin(b)
            .filter_map(|e| peaks.iter().find(|(id, _)| *id == e.id).map(|(_, p)| *p))
            .collect();
        let (lo, hi) = set.edges.interval(b);
        let sep = col(|r| r.separation);
        let mse = col(|r| r.mse);
        bins.push(BinAggregate {
            sigma,
            scale,
            bin: b,
            alpha_lo: lo,
            alpha_hi: hi,
            pupils: pupils.len(),
            records: recs.len(),
            mean_alpha: mean(&pupils),
            mean_separation: mean(&sep),
            sem_separation: sem(&sep),
            flip_accuracy: mean(&col(|r| r.flip_score)),
            mean_mse: mean(&mse),
            sem_mse: sem(&mse),
            mean_strehl_self: mean(&col(|r| r.strehl_self)),
            mean_strehl_circle: mean(&col(|r| r.strehl_circle)),
            perfect_strehl_circle: mean(&bin_peaks),
            mean_psnr: mean(&col(|r| r.psnr)),
        });
    }
    let alpha: Vec<f64> = bins.iter().map(|b| b.mean_alpha).collect();
    let pick = |f: fn(&BinAggregate) -> f64| -> f64 {
        finite_corr(&alpha, &bins.iter().map(f).collect::<Vec<_>>())
    };
    let correlations = TrendCorrelations {
        separation: pick(|b| b.mean_separation),
        flip_accuracy: pick(|b| b.flip_accuracy),
        mse: pick(|b| b.mean_mse),
        strehl_self: pick(|b| b.mean_strehl_self),
        strehl_circle: pick(|b| b.mean_strehl_circle),
        psnr: pick(|b| b.mean_psnr),
    };
    TrendReport {
        sigma,
        scale,
        bins,
        correlations,
        records,
    }
}

/// Evaluates every pupil of the set on the held-out phases at every
/// (scale, sigma) and aggregates by asymmetry bin. One report per
/// combination, scales outermost.
pub fn run_trend_study(set: &PupilSet, cfg: &ExperimentConfig) -> Result<Vec<TrendReport>> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::InvalidArgument("pupil set is empty".into()));
    }
    let basis = cfg.sampler.basis(&set.grid)?;
    let per_pupil: Vec<(Vec<TrendRecord>, f64)> = set
        .entries
        .par_iter()
        .map(|e| evaluate_pupil(e, &basis, cfg))
        .collect::<Result<_>>()?;
    let peaks: Vec<(usize, f64)> = set
        .entries
        .iter()
        .zip(&per_pupil)
        .map(|(e, (_, p))| (e.id, *p))
        .collect();
    let all: Vec<TrendRecord> = per_pupil.into_iter().flat_map(|(r, _)| r).collect();
    let mut reports = Vec::new();
    for &scale in &cfg.scales {
        for &sigma in &cfg.sigmas {
            let recs: Vec<TrendRecord> = all
                .iter()
                .filter(|r| r.scale == scale && r.sigma == sigma)
                .cloned()
                .collect();
            reports.push(aggregate(set, sigma, scale, recs, &peaks));
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEntry {
    pub scale: f64,
    pub sigma: f64,
    /// High-third minus low-third mean separation.
    pub separation_gap: f64,
    /// Low-third minus high-third mean estimator MSE (NaN without estimator).
    pub mse_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStudy {
    pub entries: Vec<ScaleEntry>,
    /// Per sigma: Spearman correlation of the separation gap with scale.
    pub separation_gap_trend: Vec<(f64, f64)>,
    /// Per sigma: Spearman correlation of the MSE gap with scale.
    pub mse_gap_trend: Vec<(f64, f64)>,
    pub reports: Vec<TrendReport>,
}

/// Records of pupils in the lowest and highest thirds of the binned alpha
/// range.
fn thirds<'a>(set: &PupilSet, recs: &'a [TrendRecord]) -> (Vec<&'a TrendRecord>, Vec<&'a TrendRecord>) {
    let e = set.edges.edges();
    let (lo, hi) = (e[0], e[e.len() - 1]);
    let low_cut = lo + (hi - lo) / 3.0;
    let high_cut = lo + 2.0 * (hi - lo) / 3.0;
    (
        recs.iter().filter(|r| r.alpha < low_cut).collect(),
        recs.iter().filter(|r| r.alpha >= high_cut).collect(),
    )
}

/// Trend study per aberration scale, with the low/high-asymmetry gap of each.
pub fn run_scale_study(set: &PupilSet, cfg: &ExperimentConfig) -> Result<ScaleStudy> {
    let reports = run_trend_study(set, cfg)?;
    let mut entries = Vec::new();
    for r in &reports {
        let (low, high) = thirds(set, &r.records);
        let m = |v: &[&TrendRecord], f: fn(&TrendRecord) -> f64| mean(&v.iter().map(|r| f(r)).collect::<Vec<_>>());
        entries.push(ScaleEntry {
            scale: r.scale,
            sigma: r.sigma,
            separation_gap: m(&high, |r| r.separation) - m(&low, |r| r.separation),
            mse_gap: m(&low, |r| r.mse) - m(&high, |r| r.mse),
        });
    }
    let trend = |f: fn(&ScaleEntry) -> f64| -> Vec<(f64, f64)> {
        cfg.sigmas
            .iter()
            .map(|&s| {
                let (x, y): (Vec<f64>, Vec<f64>) = entries
                    .iter()
                    .filter(|e| e.sigma == s)
                    .map(|e| (e.scale, f(e)))
                    .unzip();
                (s, finite_corr(&x, &y))
            })
            .collect()
    };
    Ok(ScaleStudy {
        separation_gap_trend: trend(|e| e.separation_gap),
        mse_gap_trend: trend(|e| e.mse_gap),
        entries,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSystemBin {
    pub bin: usize,
    pub mean_alpha: f64,
    pub mean_strehl_circle: f64,
    pub perfect_strehl_circle: f64,
    pub mean_strehl_self: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSystemReport {
    pub sigma: f64,
    pub scale: f64,
    pub bins: Vec<SingleSystemBin>,
    /// Bin with the highest mean circle-referenced Strehl ratio: past it the
    /// throughput loss outweighs the recovery gain.
    pub best_bin: Option<usize>,
    /// Whether mean circle Strehl rises and then falls with alpha.
    pub non_monotone: bool,
}

/// Strehl ratio against the full reference circle as a function of alpha.
pub fn single_system_analysis(set: &PupilSet, cfg: &ExperimentConfig) -> Result<Vec<SingleSystemReport>> {
    if cfg.retrieval.is_none() {
        return Err(Error::InvalidConfig("single-system analysis needs an estimator".into()));
    }
    let reports = run_trend_study(set, cfg)?;
    Ok(reports
        .iter()
        .map(|r| {
            let bins: Vec<SingleSystemBin> = r
                .bins
                .iter()
                .map(|b| SingleSystemBin {
                    bin: b.bin,
                    mean_alpha: b.mean_alpha,
                    mean_strehl_circle: b.mean_strehl_circle,
                    perfect_strehl_circle: b.perfect_strehl_circle,
                    mean_strehl_self: b.mean_strehl_self,
                })
                .collect();
            let best = bins
                .iter()
                .enumerate()
                .filter(|(_, b)| b.mean_strehl_circle.is_finite())
                .max_by(|a, b| a.1.mean_strehl_circle.total_cmp(&b.1.mean_strehl_circle));
            let non_monotone = best.is_some_and(|(i, _)| i > 0 && i + 1 < bins.len());
            SingleSystemReport {
                sigma: r.sigma,
                scale: r.scale,
                best_bin: best.map(|(_, b)| b.bin),
                non_monotone,
                bins,
            }
        })
        .collect())
}

/// Writes every record of every report as metric CSV rows.
pub fn write_trend_csv<W: Write>(writer: W, reports: &[TrendReport]) -> Result<()> {
    let records: Vec<MetricRecord> = reports.iter().flat_map(|r| r.metric_records()).collect();
    crate::metrics::write_metric_csv(writer, &records)
}

/// Writes the per-bin aggregates of every report.
pub fn write_bin_csv<W: Write>(writer: W, reports: &[TrendReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for b in reports.iter().flat_map(|r| &r.bins) {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}
