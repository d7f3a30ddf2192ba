use log::{debug, warn};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::pupil::{asymmetry, convex_hull, rasterize_hull, Asymmetry, ConvexHullSpec, PupilMask};

/// Random convex-hull pupil generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Inclusive range for the number of random points whose hull is taken.
    pub vertex_range: (usize, usize),
    /// Minimum pupil area as a fraction of the reference circle.
    pub min_area_fraction: f64,
    /// Draws allowed per `sample_pupil` call.
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            vertex_range: (3, 360),
            min_area_fraction: 0.2,
            max_attempts: 10_000,
        }
    }
}

impl SamplerConfig {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.vertex_range;
        if lo < 3 || hi < lo || hi > 360 {
            return Err(Error::InvalidConfig(format!(
                "vertex_range ({lo}, {hi}) must satisfy 3 <= lo <= hi <= 360"
            )));
        }
        if !(0.0..=1.0).contains(&self.min_area_fraction) {
            return Err(Error::InvalidConfig(format!(
                "min_area_fraction {} outside [0, 1]",
                self.min_area_fraction
            )));
        }
        Ok(())
    }
}

fn draw_candidate<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SamplerConfig,
    grid: &GridSpec,
) -> Option<(ConvexHullSpec, PupilMask)> {
    let (lo, hi) = cfg.vertex_range;
    // log-uniform point count
    let t: f64 = rng.gen_range((lo as f64).ln()..((hi + 1) as f64).ln());
    let k = (t.exp().floor() as usize).clamp(lo, hi);
    let points: Vec<[f64; 2]> = (0..k)
        .map(|_| {
            let r = rng.gen::<f64>().sqrt();
            let th = rng.gen::<f64>() * std::f64::consts::TAU;
            [r * th.cos(), r * th.sin()]
        })
        .collect();
    let hull = convex_hull(&points).ok()?;
    let mask = rasterize_hull(&hull, grid).ok()?;
    let min_area = cfg.min_area_fraction * grid.circle_pixel_count() as f64;
    (mask.area() > 0.0 && mask.area() >= min_area).then_some((hull, mask))
}

/// Draws random hulls until one passes the area bound.
pub fn sample_pupil<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SamplerConfig,
    grid: &GridSpec,
) -> Result<(ConvexHullSpec, PupilMask)> {
    cfg.validate()?;
    for _ in 0..cfg.max_attempts {
        if let Some(c) = draw_candidate(rng, cfg, grid) {
            return Ok(c);
        }
    }
    Err(Error::SamplingBudgetExhausted(cfg.max_attempts))
}

/// Uniform asymmetry bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    edges: Vec<f64>,
}

impl BinEdges {
    pub fn uniform(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::InvalidConfig(format!(
                "bins={bins} over [{lo}, {hi}]"
            )));
        }
        let edges = (0..=bins)
            .map(|k| lo + (hi - lo) * k as f64 / bins as f64)
            .collect();
        Ok(Self { edges })
    }

    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("bin edges must be strictly increasing".into()));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Half-open `[lo, hi)` bins, the last one closed.
    pub fn bin_of(&self, alpha: f64) -> Option<usize> {
        let last = self.bins() - 1;
        if alpha < self.edges[0] || alpha > self.edges[last + 1] {
            return None;
        }
        let k = self.edges.partition_point(|&e| e <= alpha);
        Some(k.saturating_sub(1).min(last))
    }

    pub fn interval(&self, bin: usize) -> (f64, f64) {
        (self.edges[bin], self.edges[bin + 1])
    }

    pub fn center(&self, bin: usize) -> f64 {
        0.5 * (self.edges[bin] + self.edges[bin + 1])
    }
}

/// A pupil with its asymmetry and bin assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilEntry {
    pub id: usize,
    pub bin: usize,
    pub hull: Option<ConvexHullSpec>,
    pub mask: PupilMask,
    pub asymmetry: Asymmetry,
}

impl PupilEntry {
    pub fn alpha(&self) -> f64 {
        self.asymmetry.alpha
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillStatus {
    Complete,
    /// Bins left short when the sample budget ran out, as `(bin, count)`.
    Partial { short_bins: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PupilSetConfig {
    pub bins: usize,
    pub alpha_max: f64,
    pub count_per_bin: usize,
    pub sampler: SamplerConfig,
    /// Total candidate draws allowed.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for PupilSetConfig {
    fn default() -> Self {
        Self {
            bins: 30,
            alpha_max: 0.36,
            count_per_bin: 10,
            sampler: SamplerConfig::default(),
            max_samples: 200_000,
            seed: 0,
        }
    }
}

/// Asymmetry-binned pupil collection, entries ordered by bin then id.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilSet {
    pub grid: GridSpec,
    pub edges: BinEdges,
    pub count_per_bin: usize,
    pub entries: Vec<PupilEntry>,
    pub status: FillStatus,
    pub samples_drawn: usize,
    pub seed: u64,
}

impl PupilSet {
    pub fn from_entries(
        grid: GridSpec,
        edges: BinEdges,
        count_per_bin: usize,
        mut entries: Vec<PupilEntry>,
        samples_drawn: usize,
        seed: u64,
    ) -> Self {
        entries.sort_by_key(|e| (e.bin, e.id));
        let mut counts = vec![0usize; edges.bins()];
        for e in &entries {
            counts[e.bin] += 1;
        }
        let short_bins: Vec<(usize, usize)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c < count_per_bin)
            .map(|(b, &c)| (b, c))
            .collect();
        let status = if short_bins.is_empty() {
            FillStatus::Complete
        } else {
            FillStatus::Partial { short_bins }
        };
        Self {
            grid,
            edges,
            count_per_bin,
            entries,
            status,
            samples_drawn,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bin_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.edges.bins()];
        for e in &self.entries {
            counts[e.bin] += 1;
        }
        counts
    }

    pub fn in_bin(&self, bin: usize) -> impl Iterator<Item = &PupilEntry> {
        self.entries.iter().filter(move |e| e.bin == bin)
    }

    pub fn get(&self, id: usize) -> Option<&PupilEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// SHA-256 over the grid, bin edges and every mask, in entry order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.grid.n as u64).to_le_bytes());
        h.update((self.grid.circle_diameter_px as u64).to_le_bytes());
        for e in self.edges.edges() {
            h.update(e.to_le_bytes());
        }
        for e in &self.entries {
            h.update((e.id as u64).to_le_bytes());
            h.update((e.bin as u64).to_le_bytes());
            for v in e.mask.values().iter() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

const BATCH: usize = 256;

fn candidate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Fills `bins` asymmetry bins with `count_per_bin` pupils each, rejecting
/// candidates whose bin is already full.
///
/// Candidate `k` is drawn from its own RNG stream and candidates are accepted
/// in index order, so the result does not depend on the thread count.
pub fn build_pupil_set(grid: &GridSpec, cfg: &PupilSetConfig) -> Result<PupilSet> {
    cfg.sampler.validate()?;
    if cfg.count_per_bin == 0 {
        return Err(Error::InvalidConfig("count_per_bin must be >= 1".into()));
    }
    let edges = BinEdges::uniform(cfg.bins, 0.0, cfg.alpha_max)?;
    let mut counts = vec![0usize; cfg.bins];
    let mut entries = Vec::with_capacity(cfg.bins * cfg.count_per_bin);
    let mut drawn = 0usize;
    let full = |counts: &[usize]| counts.iter().all(|&c| c >= cfg.count_per_bin);

    while drawn < cfg.max_samples && !full(&counts) {
        let end = (drawn + BATCH).min(cfg.max_samples);
        let batch: Vec<Option<(usize, ConvexHullSpec, PupilMask, Asymmetry)>> = (drawn..end)
            .into_par_iter()
            .map(|k| {
                let mut rng = candidate_rng(cfg.seed, k);
                let (hull, mask) = draw_candidate(&mut rng, &cfg.sampler, grid)?;
                let a = asymmetry(&mask).ok()?;
                Some((k, hull, mask, a))
            })
            .collect();
        for (k, hull, mask, a) in batch.into_iter().flatten() {
            let Some(bin) = edges.bin_of(a.alpha) else {
                continue;
            };
            if counts[bin] >= cfg.count_per_bin {
                continue;
            }
            counts[bin] += 1;
            entries.push(PupilEntry {
                id: k,
                bin,
                hull: Some(hull),
                mask,
                asymmetry: a,
            });
            if full(&counts) {
                break;
            }
        }
        drawn = end;
        debug!("pupil sampler: {drawn} draws, counts {counts:?}");
    }
    let set = PupilSet::from_entries(*grid, edges, cfg.count_per_bin, entries, drawn, cfg.seed);
    if let FillStatus::Partial { short_bins } = &set.status {
        warn!(
            "sample budget of {} exhausted with {} bin(s) short: {:?}",
            cfg.max_samples,
            short_bins.len(),
            short_bins
        );
    }
    Ok(set)
}
