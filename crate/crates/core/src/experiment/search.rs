use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{retrieve_wavefront, RetrievalConfig};
use crate::experiment::phases::{PhaseSampler, PhaseSplit};
use crate::experiment::stats::{mean, sem};
use crate::experiment::trend::FlipReference;
use crate::field::FlipCenter;
use crate::grid::GridSpec;
use crate::metrics::{noisy_normalized_psf, phase_error, psf_separation_about, NoiseModel, PhaseErrorMode};
use crate::pupil::{asymmetry, rasterize_hull, ConvexHullSpec, PupilMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchScoring {
    /// Mean normalized flip separation; higher is better.
    SeparationSurrogate,
    /// Mean estimator phase MSE (mod piston); lower is better.
    EstimatorMse(RetrievalConfig),
}

impl SearchScoring {
    fn higher_is_better(&self) -> bool {
        matches!(self, SearchScoring::SeparationSurrogate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchCandidate {
    pub name: String,
    pub mask: PupilMask,
}

impl SearchCandidate {
    pub fn new(name: impl Into<String>, mask: PupilMask) -> Self {
        Self {
            name: name.into(),
            mask,
        }
    }

    pub fn from_hull(name: impl Into<String>, hull: &ConvexHullSpec, grid: &GridSpec) -> Result<Self> {
        Ok(Self::new(name, rasterize_hull(hull, grid)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub sampler: PhaseSampler,
    pub phases: usize,
    pub sigma: f64,
    pub seed: u64,
    pub scoring: SearchScoring,
    pub flip_reference: FlipReference,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            sampler: PhaseSampler::default(),
            phases: 50,
            sigma: 0.0,
            seed: 0,
            scoring: SearchScoring::SeparationSurrogate,
            flip_reference: FlipReference::MaxOverlap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    /// Index into the candidate list.
    pub candidate: usize,
    pub name: String,
    pub alpha: f64,
    pub score: f64,
    pub sem: f64,
    /// 1-based; tied candidates share the worst rank of their group.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: usize,
    /// Best first; ties keep candidate order.
    pub leaderboard: Vec<LeaderboardEntry>,
}

fn score_candidate(c: &SearchCandidate, cfg: &SearchConfig) -> Result<(f64, f64, f64)> {
    let grid = *c.mask.grid();
    let a = asymmetry(&c.mask)?;
    let center = match cfg.flip_reference {
        FlipReference::Origin => FlipCenter::ORIGIN,
        FlipReference::MaxOverlap => a.flip_center(grid.n),
    };
    let basis = cfg.sampler.basis(&grid)?;
    let noise = NoiseModel::new(cfg.sigma)?;
    let mut scores = Vec::with_capacity(cfg.phases);
    for j in 0..cfg.phases {
        let phase = cfg.sampler.phase(&basis, cfg.seed, PhaseSplit::Test, j)?;
        let s = match &cfg.scoring {
            SearchScoring::SeparationSurrogate => psf_separation_about(&c.mask, &phase, center)?,
            SearchScoring::EstimatorMse(rcfg) => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(j as u64);
                let psf = noisy_normalized_psf(&c.mask, &phase, &noise, &mut rng)?;
                let rcfg = RetrievalConfig {
                    seed: cfg.seed ^ j as u64,
                    ..rcfg.clone()
                };
                let est = retrieve_wavefront(&psf, &c.mask, &rcfg)?;
                phase_error(&est.phase, &phase, &c.mask, PhaseErrorMode::ModPiston)?
            }
        };
        scores.push(s);
    }
    Ok((mean(&scores), sem(&scores), a.alpha))
}

/// Monte-Carlo pupil selection over a finite candidate set. All candidates
/// are scored on the same phases (and noise draws).
pub fn pupil_search(candidates: &[SearchCandidate], cfg: &SearchConfig) -> Result<SearchResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate pupils".into()));
    }
    if cfg.phases == 0 {
        return Err(Error::InvalidConfig("phases must be >= 1".into()));
    }
    cfg.sampler.validate()?;
    let scored: Vec<(f64, f64, f64)> = candidates
        .par_iter()
        .map(|c| score_candidate(c, cfg))
        .collect::<Result<_>>()?;

    let higher = cfg.scoring.higher_is_better();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (scored[a].0, scored[b].0);
        let o = if higher { y.total_cmp(&x) } else { x.total_cmp(&y) };
        o.then(a.cmp(&b))
    });
    let tol = 1e-9 * scored.iter().fold(0.0f64, |m, s| m.max(s.0.abs()));
    let mut ranks = vec![0usize; order.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len()
            && (scored[order[end + 1]].0 - scored[order[start]].0).abs() <= tol
        {
            end += 1;
        }
        for &k in &order[start..=end] {
            ranks[k] = end + 1;
        }
        start = end + 1;
    }
    let leaderboard: Vec<LeaderboardEntry> = order
        .iter()
        .map(|&k| LeaderboardEntry {
            candidate: k,
            name: candidates[k].name.clone(),
            alpha: scored[k].2,
            score: scored[k].0,
            sem: scored[k].1,
            rank: ranks[k],
        })
        .collect();
    Ok(SearchResult {
        best: order[0],
        leaderboard,
    })
}
