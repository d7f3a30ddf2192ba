//! Subcommand arguments and their implementations.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use ndarray::Array2;
use pupil_design::dataset::{self, DatasetMeta};
use pupil_design::estimation::{retrieve_wavefront, RetrievalConfig, RetrievalMode};
use pupil_design::experiment::{
    log_space, property1_sweep, pupil_search, render_correction, run_scale_study, run_trend_study,
    single_system_analysis, standard_property1_pair, write_bin_csv, write_trend_csv, ExperimentConfig,
    FlipReference, PhaseSampler, PhaseSplit, RunManifest, SearchCandidate, SearchConfig, SearchScoring,
};
use pupil_design::metrics::{noisy_normalized_psf, phase_error, NoiseModel, PhaseErrorMode};
use pupil_design::{
    asymmetry, build_pupil_set, checkerboard_carrier, forward_psf, parse_vertex_list, slm_terms, FillStatus,
    GridSpec, Normalization, PhaseMap, Psf, PupilMask, PupilSet, PupilSetConfig, SamplerConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{parse_list, ConfigFile};
use crate::io::{read_array, write_array, PhaseArgs, PupilArgs, Shape};
use crate::{Cli, Command, Usage};

struct Ctx {
    cfg: ConfigFile,
    grid: GridSpec,
    seed: u64,
    out: PathBuf,
    out_given: bool,
}

impl Ctx {
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.cfg.pick(flag, key, default).map_err(|e| Usage::new(format!("{e:#}")).into())
    }

    fn pick_list<T: FromStr>(&self, flag: Option<&str>, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let flag = match flag {
            Some(s) => Some(parse_list(s).map_err(|e| Usage::new(format!("{key}: {e:#}")))?),
            None => None,
        };
        self.cfg
            .pick_list(flag, key, default)
            .map_err(|e| Usage::new(format!("{e:#}")).into())
    }

    fn pick_enum<T: ValueEnum>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        let s: String = self.pick(None, key, String::new())?;
        match (flag, Some(s).filter(|s| !s.is_empty())) {
            (Some(v), _) => Ok(v),
            (None, Some(s)) => T::from_str(&s, true).map_err(|e| Usage::new(format!("config key {key}: {e}")).into()),
            (None, None) => Ok(default),
        }
    }

    fn modes(&self, flag: Option<String>) -> Result<Vec<u32>> {
        self.cfg.pick_modes(flag).map_err(|e| Usage::new(format!("modes: {e:#}")).into())
    }

    fn out_path(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating output directory {}", self.out.display()))?;
        Ok(self.out.join(name))
    }

    fn manifest(&self, command: &str, config: serde_json::Value) -> RunManifest {
        let mut config = config;
        if let Some(obj) = config.as_object_mut() {
            obj.insert("grid".into(), json!(self.grid));
        }
        RunManifest::new(command, self.seed, config)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path).map_err(|e| Usage::new(format!("{e:#}")))?,
        None => ConfigFile::default(),
    };
    let seed = cfg.pick(cli.seed, "seed", 0u64).map_err(|e| Usage::new(format!("{e:#}")))?;
    let n = cfg.pick(cli.n, "n", 128usize).map_err(|e| Usage::new(format!("{e:#}")))?;
    let diameter = cfg
        .pick(cli.diameter, "circle_diameter", n / 2)
        .map_err(|e| Usage::new(format!("{e:#}")))?;
    let grid = GridSpec::new(n, diameter).map_err(|e| Usage::new(e.to_string()))?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Usage::new("--jobs must be >= 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    let ctx = Ctx {
        cfg,
        grid,
        seed,
        out_given: cli.out.is_some(),
        out: cli.out.unwrap_or_else(|| PathBuf::from(".")),
    };
    match cli.command {
        Command::GenPupils(a) => gen_pupils(&ctx, a),
        Command::GenDataset(a) => gen_dataset(&ctx, a),
        Command::Asymmetry(a) => cmd_asymmetry(&ctx, a),
        Command::Psf(a) => cmd_psf(&ctx, a),
        Command::Retrieve(a) => cmd_retrieve(&ctx, a),
        Command::Trend(a) => cmd_trend(&ctx, a),
        Command::Scales(a) => cmd_scales(&ctx, a),
        Command::Property1(a) => cmd_property1(&ctx, a),
        Command::Search(a) => cmd_search(&ctx, a),
        Command::Correct(a) => cmd_correct(&ctx, a),
        Command::Slm(a) => cmd_slm(&ctx, a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Estimator {
    /// No estimator; only estimator-free quantities
    None,
    /// Hybrid input-output with error-reduction polishing
    Hio,
    /// Error reduction only
    Er,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlipRef {
    Origin,
    MaxOverlap,
}

impl From<FlipRef> for FlipReference {
    fn from(f: FlipRef) -> Self {
        match f {
            FlipRef::Origin => FlipReference::Origin,
            FlipRef::MaxOverlap => FlipReference::MaxOverlap,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RetrievalArgs {
    /// Phase estimator (default hio; none is only valid for studies)
    #[arg(long, value_enum)]
    pub estimator: Option<Estimator>,
    /// Independent restarts, best residual wins (default 10)
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Iterations per restart (default 500)
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// HIO feedback parameter (default 0.9)
    #[arg(long)]
    pub beta: Option<f64>,
}

impl RetrievalArgs {
    fn config(&self, ctx: &Ctx, default: Estimator) -> Result<Option<RetrievalConfig>> {
        let est = ctx.pick_enum(self.estimator, "estimator", default)?;
        let mode = match est {
            Estimator::None => return Ok(None),
            Estimator::Hio => RetrievalMode::Hio,
            Estimator::Er => RetrievalMode::ErrorReduction,
        };
        let d = RetrievalConfig::default();
        let cfg = RetrievalConfig {
            restarts: ctx.pick(self.restarts, "restarts", d.restarts)?,
            max_iters: ctx.pick(self.max_iters, "max_iters", d.max_iters)?,
            beta: ctx.pick(self.beta, "beta", d.beta)?,
            mode,
            seed: ctx.seed,
            ..d
        };
        cfg.validate().map_err(|e| Usage::new(e.to_string()))?;
        Ok(Some(cfg))
    }

    fn required(&self, ctx: &Ctx) -> Result<RetrievalConfig> {
        self.config(ctx, Estimator::Hio)?
            .ok_or_else(|| Usage::new("this command needs an estimator (hio or er)").into())
    }
}

#[derive(Debug, Clone, Args)]
pub struct SetArgs {
    /// Read the pupil set from a dataset directory instead of sampling one
    #[arg(long, value_name = "DIR")]
    pub pupils: Option<PathBuf>,
    /// Number of asymmetry bins (default 30)
    #[arg(long)]
    pub bins: Option<usize>,
    /// Pupils per bin (default 10)
    #[arg(long)]
    pub per_bin: Option<usize>,
    /// Upper edge of the last bin (default 0.36)
    #[arg(long)]
    pub alpha_max: Option<f64>,
    /// Candidate draws allowed before giving up on unfilled bins (default 200000)
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// Minimum pupil area as a fraction of the reference circle (default 0.2)
    #[arg(long)]
    pub min_area_fraction: Option<f64>,
    /// Fewest random points per hull (default 3)
    #[arg(long)]
    pub vertex_min: Option<usize>,
    /// Most random points per hull (default 360)
    #[arg(long)]
    pub vertex_max: Option<usize>,
}

impl SetArgs {
    fn config(&self, ctx: &Ctx) -> Result<PupilSetConfig> {
        let d = PupilSetConfig::default();
        let s = SamplerConfig::default();
        Ok(PupilSetConfig {
            bins: ctx.pick(self.bins, "bins", d.bins)?,
            alpha_max: ctx.pick(self.alpha_max, "alpha_max", d.alpha_max)?,
            count_per_bin: ctx.pick(self.per_bin, "per_bin", d.count_per_bin)?,
            max_samples: ctx.pick(self.max_samples, "max_samples", d.max_samples)?,
            sampler: SamplerConfig {
                vertex_range: (
                    ctx.pick(self.vertex_min, "vertex_min", s.vertex_range.0)?,
                    ctx.pick(self.vertex_max, "vertex_max", s.vertex_range.1)?,
                ),
                min_area_fraction: ctx.pick(self.min_area_fraction, "min_area_fraction", s.min_area_fraction)?,
                ..s
            },
            seed: ctx.seed,
        })
    }

    fn load(&self, ctx: &Ctx) -> Result<(PupilSet, serde_json::Value)> {
        match &self.pupils {
            Some(dir) => {
                let manifest = dataset::read_manifest(dir)?;
                let set = dataset::read_pupils(dir, &manifest)?;
                if set.grid != ctx.grid {
                    bail!(
                        "pupil set grid {}x{} (circle {}) differs from the requested grid; pass --n/--diameter to match",
                        set.grid.n,
                        set.grid.n,
                        set.grid.circle_diameter_px
                    );
                }
                Ok((set, json!({ "pupils": dir })))
            }
            None => {
                let cfg = self.config(ctx)?;
                let set = build_pupil_set(&ctx.grid, &cfg)?;
                Ok((set, json!(cfg)))
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub set: SetArgs,
    /// Phases evaluated per pupil (default 50)
    #[arg(long)]
    pub phases_per_pupil: Option<usize>,
    /// Comma-separated noise levels (default 0)
    #[arg(long, value_name = "LIST")]
    pub sigmas: Option<String>,
    /// Noll indices of the phase modes (default 2-15)
    #[arg(long, value_name = "LIST")]
    pub modes: Option<String>,
    /// Flip reference for separation and disambiguation (default max-overlap)
    #[arg(long, value_enum)]
    pub flip_reference: Option<FlipRef>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
}

impl StudyArgs {
    fn config(&self, ctx: &Ctx, scales: Vec<f64>) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let cfg = ExperimentConfig {
            phases_per_pupil: ctx.pick(self.phases_per_pupil, "phases_per_pupil", d.phases_per_pupil)?,
            sigmas: ctx.pick_list(self.sigmas.as_deref(), "sigmas", d.sigmas)?,
            scales,
            sampler: PhaseSampler::new(ctx.modes(self.modes.clone())?, 1.0)?,
            seed: ctx.seed,
            retrieval: self.retrieval.config(ctx, Estimator::None)?,
            flip_reference: ctx.pick_enum(self.flip_reference, "flip_reference", FlipRef::MaxOverlap)?.into(),
        };
        cfg.validate().map_err(|e| Usage::new(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenPupilsArgs {
    #[command(flatten)]
    pub set: SetArgs,
}

fn gen_pupils(ctx: &Ctx, a: GenPupilsArgs) -> Result<()> {
    if a.set.pupils.is_some() {
        return Err(Usage::new("gen-pupils samples a new set; --pupils is not accepted").into());
    }
    let (set, cfg) = a.set.load(ctx)?;
    std::fs::create_dir_all(&ctx.out)?;
    let meta = DatasetMeta {
        seed: ctx.seed,
        ..DatasetMeta::default()
    };
    let manifest = dataset::write_dataset(&ctx.out, &set, &[], &meta)?;
    let reread = dataset::read_manifest(&ctx.out)?;
    let total: usize = reread.counts.iter().sum();
    if total != set.len() || reread.counts != set.bin_counts() {
        bail!("manifest counts {:?} do not match the written set", reread.counts);
    }
    let mut run = ctx.manifest("gen-pupils", cfg);
    run.pupil_set_hash = Some(manifest.pupil_set_hash.clone());
    run.outputs = vec![dataset::MANIFEST_FILE.into(), dataset::PUPILS_FILE.into()];
    run.write(&ctx.out_path("run.json")?)?;
    println!("pupils {}", set.len());
    println!("samples_drawn {}", set.samples_drawn);
    println!("bin_counts {:?}", set.bin_counts());
    match &set.status {
        FillStatus::Complete => println!("status complete"),
        FillStatus::Partial { short_bins } => println!("status partial {short_bins:?}"),
    }
    println!("hash {}", manifest.pupil_set_hash);
    println!("manifest counts verified ({} pupils) in {}", total, ctx.out.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct GenDatasetArgs {
    #[command(flatten)]
    pub set: SetArgs,
    /// Phases per pupil (default 50)
    #[arg(long)]
    pub phases_per_pupil: Option<usize>,
    /// Comma-separated noise levels (default 0)
    #[arg(long, value_name = "LIST")]
    pub sigmas: Option<String>,
    /// Noll indices of the phase modes (default 2-15)
    #[arg(long, value_name = "LIST")]
    pub modes: Option<String>,
    /// Coefficient scale (default 1)
    #[arg(long)]
    pub scale: Option<f64>,
    /// Draw phases from the test split
    #[arg(long)]
    pub test_split: bool,
    /// Store PSF payloads instead of regenerating them on read
    #[arg(long)]
    pub store_psf: bool,
    /// Records per chunk file (default 4096)
    #[arg(long)]
    pub records_per_chunk: Option<usize>,
}

fn gen_dataset(ctx: &Ctx, a: GenDatasetArgs) -> Result<()> {
    let (set, set_cfg) = a.set.load(ctx)?;
    let modes = ctx.modes(a.modes.clone())?;
    let scale = ctx.pick(a.scale, "scale", 1.0)?;
    let sampler = PhaseSampler::new(modes.clone(), scale).map_err(|e| Usage::new(e.to_string()))?;
    let sigmas = ctx.pick_list(a.sigmas.as_deref(), "sigmas", vec![0.0])?;
    let phases = ctx.pick(a.phases_per_pupil, "phases_per_pupil", 50)?;
    let per_chunk = ctx.pick(a.records_per_chunk, "records_per_chunk", 4096)?;
    let split = if a.test_split { PhaseSplit::Test } else { PhaseSplit::Train };
    let records = dataset::generate_triplets(&set, &sampler, &sigmas, phases, split, ctx.seed, a.store_psf)?;
    let meta = DatasetMeta {
        zernike_modes: modes,
        sigmas: sigmas.clone(),
        seed: ctx.seed,
        records_per_chunk: per_chunk,
    };
    std::fs::create_dir_all(&ctx.out)?;
    let manifest = dataset::write_dataset(&ctx.out, &set, &records, &meta)?;
    let mut run = ctx.manifest(
        "gen-dataset",
        json!({
            "pupil_set": set_cfg,
            "phase_sampler": sampler,
            "sigmas": sigmas,
            "phases_per_pupil": phases,
            "split": split,
            "store_psf": a.store_psf,
            "records_per_chunk": per_chunk,
        }),
    );
    run.pupil_set_hash = Some(manifest.pupil_set_hash.clone());
    run.outputs = manifest.chunks.iter().map(|c| c.name.clone()).collect();
    run.write(&ctx.out_path("run.json")?)?;
    println!("pupils {}", set.len());
    println!("records {}", manifest.record_count);
    println!("chunks {}", manifest.chunks.len());
    println!("hash {}", manifest.pupil_set_hash);
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct AsymmetryArgs {
    #[command(flatten)]
    pub pupil: PupilArgs,
    /// Print a JSON object instead of text
    #[arg(long)]
    pub json: bool,
}

fn cmd_asymmetry(ctx: &Ctx, a: AsymmetryArgs) -> Result<()> {
    let mask = a.pupil.load(&ctx.grid)?;
    let asym = asymmetry(&mask)?;
    let center = asym.flip_center(ctx.grid.n);
    if a.json {
        println!(
            "{}",
            json!({
                "alpha": asym.alpha,
                "area": mask.area(),
                "max_overlap": asym.max_overlap,
                "origin_alpha": asym.origin_alpha(),
                "flip_center": [center.0, center.1],
            })
        );
    } else {
        println!("alpha {:.6}", asym.alpha);
        println!("area {}", mask.area());
        println!("max_overlap {}", asym.max_overlap);
        println!("origin_alpha {:.6}", asym.origin_alpha());
        println!("flip_center {} {}", center.0, center.1);
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct PsfArgs {
    #[command(flatten)]
    pub pupil: PupilArgs,
    #[command(flatten)]
    pub phase: PhaseArgs,
    /// Additive Gaussian noise level on the normalized PSF (default 0)
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Write raw |F P x|^2 instead of the circle-normalized PSF
    #[arg(long)]
    pub raw: bool,
    /// Output file (.f32, .pgm or .png; default <out>/psf.f32)
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

fn cmd_psf(ctx: &Ctx, a: PsfArgs) -> Result<()> {
    let mask = a.pupil.load(&ctx.grid)?;
    let basis = a.phase.basis(&ctx.grid)?;
    let phase = a.phase.load(&basis, ctx.seed)?;
    let sigma = ctx.pick(a.sigma, "sigma", 0.0)?;
    let psf = if a.raw {
        if sigma > 0.0 {
            return Err(Usage::new("--sigma applies to the normalized PSF; drop --raw").into());
        }
        forward_psf(&mask, &phase)?
    } else {
        let noise = NoiseModel::new(sigma).map_err(|e| Usage::new(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        noisy_normalized_psf(&mask, &phase, &noise, &mut rng)?
    };
    let path = match a.output {
        Some(p) => p,
        None => ctx.out_path("psf.f32")?,
    };
    write_array(&path, psf.values())?;
    println!("peak {}", psf.max());
    println!("sum {}", psf.sum());
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct RetrieveArgs {
    /// PSF file (.f32, circle-normalized unless --raw)
    #[arg(long, value_name = "FILE")]
    pub psf: PathBuf,
    /// The PSF file holds raw |F P x|^2 values
    #[arg(long)]
    pub raw: bool,
    #[command(flatten)]
    pub pupil: PupilArgs,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Output phase file (.f32; default <out>/estimate.f32)
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

fn cmd_retrieve(ctx: &Ctx, a: RetrieveArgs) -> Result<()> {
    let mask = a.pupil.load(&ctx.grid)?;
    let rcfg = a.retrieval.required(ctx)?;
    let values = read_array(&a.psf)?;
    let norm = if a.raw { Normalization::Raw } else { Normalization::CircleNormalized };
    let psf = Psf::new(&ctx.grid, values, norm, 0.0)?;
    let est = retrieve_wavefront(&psf, &mask, &rcfg)?;
    let path = match a.output {
        Some(p) => p,
        None => ctx.out_path("estimate.f32")?,
    };
    write_array(&path, est.phase.values())?;
    println!("residual {:e}", est.residual);
    println!("iterations {}", est.iterations);
    println!("restart {}", est.restart);
    println!("flip {:?} margin {:e}", est.flip_choice, est.flip_margin);
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct TrendArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// Comma-separated aberration scales (default 1)
    #[arg(long, value_name = "LIST")]
    pub scales: Option<String>,
    /// Also report circle-referenced Strehl against alpha (needs an estimator)
    #[arg(long)]
    pub single_system: bool,
}

fn write_csv(path: &Path, f: impl FnOnce(BufWriter<File>) -> pupil_design::Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f(BufWriter::new(file))?;
    Ok(())
}

fn cmd_trend(ctx: &Ctx, a: TrendArgs) -> Result<()> {
    let scales = ctx.pick_list(a.scales.as_deref(), "scales", vec![1.0])?;
    let cfg = a.study.config(ctx, scales)?;
    if a.single_system && cfg.retrieval.is_none() {
        return Err(Usage::new("--single-system needs --estimator hio or er").into());
    }
    let (set, set_cfg) = a.study.set.load(ctx)?;
    let reports = run_trend_study(&set, &cfg)?;
    let mut outputs = vec!["trend.csv".to_string(), "bins.csv".to_string()];
    write_csv(&ctx.out_path("trend.csv")?, |w| write_trend_csv(w, &reports))?;
    write_csv(&ctx.out_path("bins.csv")?, |w| write_bin_csv(w, &reports))?;
    for r in &reports {
        let c = &r.correlations;
        println!(
            "sigma {} scale {}: spearman separation {:.4} flip_accuracy {:.4} mse {:.4} strehl_self {:.4} strehl_circle {:.4} psnr {:.4}",
            r.sigma, r.scale, c.separation, c.flip_accuracy, c.mse, c.strehl_self, c.strehl_circle, c.psnr
        );
    }
    if a.single_system {
        let single = single_system_analysis(&set, &cfg)?;
        std::fs::write(ctx.out_path("single_system.json")?, serde_json::to_string_pretty(&single)?)?;
        outputs.push("single_system.json".into());
        for s in &single {
            println!(
                "sigma {} scale {}: best bin {:?} non-monotone {}",
                s.sigma, s.scale, s.best_bin, s.non_monotone
            );
        }
    }
    let mut run = ctx.manifest("trend", json!({ "pupil_set": set_cfg, "experiment": cfg }));
    run.pupil_set_hash = Some(set.content_hash());
    run.outputs = outputs;
    run.write(&ctx.out_path("run.json")?)?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ScalesArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// Comma-separated aberration scales (default 0.25,0.5,1,2)
    #[arg(long, value_name = "LIST")]
    pub scales: Option<String>,
}

fn cmd_scales(ctx: &Ctx, a: ScalesArgs) -> Result<()> {
    let scales = ctx.pick_list(a.scales.as_deref(), "scales", vec![0.25, 0.5, 1.0, 2.0])?;
    let cfg = a.study.config(ctx, scales)?;
    let (set, set_cfg) = a.study.set.load(ctx)?;
    let study = run_scale_study(&set, &cfg)?;
    write_csv(&ctx.out_path("bins.csv")?, |w| write_bin_csv(w, &study.reports))?;
    std::fs::write(
        ctx.out_path("scales.json")?,
        serde_json::to_string_pretty(&json!({
            "entries": study.entries,
            "separation_gap_trend": study.separation_gap_trend,
            "mse_gap_trend": study.mse_gap_trend,
        }))?,
    )?;
    for e in &study.entries {
        println!(
            "sigma {} scale {}: separation gap {:.6e} mse gap {:.6e}",
            e.sigma, e.scale, e.separation_gap, e.mse_gap
        );
    }
    for (s, rho) in &study.separation_gap_trend {
        println!("sigma {s}: spearman(scale, separation gap) {rho:.4}");
    }
    let mut run = ctx.manifest("scales", json!({ "pupil_set": set_cfg, "experiment": cfg }));
    run.pupil_set_hash = Some(set.content_hash());
    run.outputs = vec!["bins.csv".into(), "scales.json".into()];
    run.write(&ctx.out_path("run.json")?)?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct Property1Args {
    /// Epsilon range as lo:hi
    #[arg(long, default_value = "1e-3:1e-1")]
    pub eps: String,
    /// Log-spaced epsilon steps
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Peak phase magnitude in radians (at most 0.1)
    #[arg(long, default_value_t = 0.05)]
    pub max_phase: f64,
    /// Noll indices of the phase modes (default 2-15)
    #[arg(long, value_name = "LIST")]
    pub modes: Option<String>,
    /// Index of the sampled phase
    #[arg(long, default_value_t = 0)]
    pub phase_index: usize,
}

fn cmd_property1(ctx: &Ctx, a: Property1Args) -> Result<()> {
    let (lo, hi) = a
        .eps
        .split_once(':')
        .and_then(|(l, h)| Some((l.trim().parse::<f64>().ok()?, h.trim().parse::<f64>().ok()?)))
        .ok_or_else(|| Usage::new(format!("--eps {:?}: expected lo:hi", a.eps)))?;
    if !(lo > 0.0 && hi > lo) || a.steps < 2 {
        return Err(Usage::new("--eps needs 0 < lo < hi and --steps >= 2").into());
    }
    let sampler = PhaseSampler::new(ctx.modes(a.modes.clone())?, 1.0)?;
    let basis = sampler.basis(&ctx.grid)?;
    let even = sampler.phase(&basis, ctx.seed, PhaseSplit::Train, a.phase_index)?.even_part();
    let peak = even.max_abs();
    if peak == 0.0 {
        bail!("sampled phase has no even component");
    }
    let phase = even.scaled(a.max_phase / peak);
    let (p_s, p_a) = standard_property1_pair(&ctx.grid)?;
    let result = property1_sweep(&p_s, &p_a, &phase, &log_space(lo, hi, a.steps))?;
    println!("epsilon separation closed_form ratio");
    for p in &result.points {
        println!("{:.4e} {:.6e} {:.6e} {:.6}", p.epsilon, p.separation, p.closed_form, p.ratio());
    }
    println!("slope {:.4}", result.slope);
    println!("residual_slope {:.4}", result.residual_slope);
    if ctx.out_given {
        std::fs::write(ctx.out_path("property1.json")?, serde_json::to_string_pretty(&result)?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scoring {
    /// Mean flip separation (higher is better)
    Separation,
    /// Mean estimator phase error (lower is better)
    Mse,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// Comma-separated built-in candidate shapes
    #[arg(long, value_delimiter = ',', value_enum, default_value = "circle,square,triangle")]
    pub candidates: Vec<Shape>,
    /// Extra candidate hull files (repeatable)
    #[arg(long = "hull", value_name = "FILE")]
    pub hulls: Vec<PathBuf>,
    /// Phases per candidate (default 50)
    #[arg(long)]
    pub phases: Option<usize>,
    /// Noise level (default 0)
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Coefficient scale (default 1)
    #[arg(long)]
    pub scale: Option<f64>,
    /// Noll indices of the phase modes (default 2-15)
    #[arg(long, value_name = "LIST")]
    pub modes: Option<String>,
    /// Candidate score
    #[arg(long, value_enum, default_value = "separation")]
    pub scoring: Scoring,
    /// Flip reference for the separation score (default max-overlap)
    #[arg(long, value_enum)]
    pub flip_reference: Option<FlipRef>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
}

fn cmd_search(ctx: &Ctx, a: SearchArgs) -> Result<()> {
    let mut candidates = Vec::new();
    for s in &a.candidates {
        candidates.push(SearchCandidate::new(s.name(), s.mask(&ctx.grid)?));
    }
    for path in &a.hulls {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let hull = parse_vertex_list(&text)?;
        candidates.push(SearchCandidate::from_hull(path.display().to_string(), &hull, &ctx.grid)?);
    }
    if candidates.is_empty() {
        return Err(Usage::new("no candidates given").into());
    }
    let scoring = match a.scoring {
        Scoring::Separation => SearchScoring::SeparationSurrogate,
        Scoring::Mse => SearchScoring::EstimatorMse(a.retrieval.required(ctx)?),
    };
    let scale = ctx.pick(a.scale, "scale", 1.0)?;
    let cfg = SearchConfig {
        sampler: PhaseSampler::new(ctx.modes(a.modes.clone())?, scale).map_err(|e| Usage::new(e.to_string()))?,
        phases: ctx.pick(a.phases, "phases_per_pupil", 50)?,
        sigma: ctx.pick(a.sigma, "sigma", 0.0)?,
        seed: ctx.seed,
        scoring,
        flip_reference: ctx.pick_enum(a.flip_reference, "flip_reference", FlipRef::MaxOverlap)?.into(),
    };
    let result = pupil_search(&candidates, &cfg)?;
    println!("rank name alpha score sem");
    for e in &result.leaderboard {
        println!("{} {} {:.6} {:.6e} {:.3e}", e.rank, e.name, e.alpha, e.score, e.sem);
    }
    println!("best {}", result.leaderboard[0].name);
    if ctx.out_given {
        std::fs::write(ctx.out_path("leaderboard.json")?, serde_json::to_string_pretty(&result)?)?;
        let mut run = ctx.manifest("search", json!({ "search": cfg }));
        run.outputs = vec!["leaderboard.json".into()];
        run.write(&ctx.out_path("run.json")?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct CorrectArgs {
    /// Scene image (.pgm, .png or .f32; square with even side)
    #[arg(long, value_name = "FILE")]
    pub image: PathBuf,
    #[command(flatten)]
    pub pupil: PupilArgs,
    #[command(flatten)]
    pub phase: PhaseArgs,
    /// Phase estimate (.f32); retrieved from the clean PSF when absent
    #[arg(long, value_name = "FILE")]
    pub estimate: Option<PathBuf>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Aberrated output image (default <out>/aberrated.png)
    #[arg(long, value_name = "FILE")]
    pub aberrated: Option<PathBuf>,
    /// Corrected output image (default <out>/corrected.png)
    #[arg(long, value_name = "FILE")]
    pub corrected: Option<PathBuf>,
}

fn cmd_correct(ctx: &Ctx, a: CorrectArgs) -> Result<()> {
    let mask = a.pupil.load(&ctx.grid)?;
    let basis = a.phase.basis(&ctx.grid)?;
    let phase = a.phase.load(&basis, ctx.seed)?;
    let image = read_array(&a.image)?;
    let estimate = match &a.estimate {
        Some(path) => PhaseMap::new(&ctx.grid, read_array(path)?)?,
        None => {
            let rcfg = a.retrieval.required(ctx)?;
            let psf = pupil_design::metrics::normalized_psf(&mask, &phase)?;
            retrieve_wavefront(&psf, &mask, &rcfg)?.phase
        }
    };
    let err = phase_error(&estimate, &phase, &mask, PhaseErrorMode::ModPiston)?;
    let (aberrated, corrected): (Array2<f64>, Array2<f64>) = render_correction(&image, &mask, &phase, &estimate)?;
    let pa = match a.aberrated {
        Some(p) => p,
        None => ctx.out_path("aberrated.png")?,
    };
    let pc = match a.corrected {
        Some(p) => p,
        None => ctx.out_path("corrected.png")?,
    };
    write_array(&pa, &aberrated)?;
    write_array(&pc, &corrected)?;
    println!("phase_mse {err:e}");
    println!("wrote {} {}", pa.display(), pc.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SlmArgs {
    #[command(flatten)]
    pub pupil: PupilArgs,
    #[command(flatten)]
    pub phase: PhaseArgs,
    /// Checkerboard cell size in pixels
    #[arg(long, default_value_t = 1)]
    pub pitch: usize,
    /// Output file for the realized PSF (default <out>/slm_psf.f32)
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

fn cmd_slm(ctx: &Ctx, a: SlmArgs) -> Result<()> {
    let mask = a.pupil.load(&ctx.grid)?;
    let basis = a.phase.basis(&ctx.grid)?;
    let phase = a.phase.load(&basis, ctx.seed)?;
    let carrier = checkerboard_carrier(&ctx.grid, a.pitch).map_err(|e| Usage::new(e.to_string()))?;
    let beam = PupilMask::circle(&ctx.grid);
    let terms = slm_terms(&mask, &phase, &carrier, &beam)?;
    let realized = terms.total();
    let path = match a.output {
        Some(p) => p,
        None => ctx.out_path("slm_psf.f32")?,
    };
    write_array(&path, &realized)?;
    let peak = |x: &Array2<f64>| x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("intended_peak {:e}", peak(&terms.intended));
    println!("realized_peak {:e}", peak(&realized));
    println!("carrier_energy {:e}", terms.carrier.sum());
    println!("interference_energy {:e}", terms.interference.iter().map(|v| v.abs()).sum::<f64>());
    println!("wrote {}", path.display());
    Ok(())
}
