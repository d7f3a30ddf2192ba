//! On-disk pupil sets and (pupil, phase, PSF) triplet datasets.
//!
//! A dataset directory holds `manifest.json`, `pupils.bin` and zero or more
//! `records-NNN.bin` chunks. Binary files are little-endian; masks are stored
//! run-length encoded, PSFs as row-major `f32`. Every binary file carries a
//! 64-bit FNV-1a checksum in the manifest.

use std::fs;
use std::hash::Hasher;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fnv::FnvHasher;
use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{PhaseSampler, PhaseSplit};
use crate::field::{Normalization, PhaseMap, Psf};
use crate::grid::GridSpec;
use crate::metrics::{noisy_normalized_psf, NoiseModel};
use crate::pupil::{asymmetry, BinEdges, ConvexHullSpec, FillStatus, PupilEntry, PupilMask, PupilSet};
use crate::zernike::ZernikeBasis;

pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PUPILS_FILE: &str = "pupils.bin";
const PUPIL_MAGIC: &[u8; 4] = b"PUPS";
const RECORD_MAGIC: &[u8; 4] = b"TRIP";
const ALPHA_TOLERANCE: f64 = 1e-6;

/// 64-bit FNV-1a of `bytes`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    /// FNV-1a 64 of the file contents, as 16 hex digits.
    pub checksum: String,
    pub bytes: u64,
    pub records: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub grid: GridSpec,
    pub bin_edges: Vec<f64>,
    pub count_per_bin: usize,
    /// Pupils stored per bin.
    pub counts: Vec<usize>,
    pub fill_status: FillStatus,
    pub pupil_seed: u64,
    pub samples_drawn: usize,
    pub pupil_set_hash: String,
    pub zernike_modes: Vec<u32>,
    pub sigmas: Vec<f64>,
    pub seed: u64,
    pub created_unix: u64,
    pub record_count: u64,
    pub records_per_chunk: usize,
    pub pupils: FileEntry,
    pub chunks: Vec<FileEntry>,
}

/// One (pupil, phase, noise, PSF) sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletRecord {
    pub pupil_id: usize,
    pub phase_index: usize,
    pub alpha: f64,
    pub coefficients: Vec<f64>,
    pub sigma: f64,
    pub noise_seed: Option<u64>,
    /// Circle-normalized PSF; `None` when it is left to regeneration.
    pub psf: Option<Array2<f32>>,
}

impl TripletRecord {
    fn key(&self) -> (usize, usize, u64) {
        (self.pupil_id, self.phase_index, self.sigma.to_bits())
    }
}

/// A dataset as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub pupils: PupilSet,
    pub records: Vec<TripletRecord>,
}

/// Dataset-wide metadata not carried by the pupil set itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub zernike_modes: Vec<u32>,
    pub sigmas: Vec<f64>,
    pub seed: u64,
    pub records_per_chunk: usize,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self {
            zernike_modes: PhaseSampler::default().modes,
            sigmas: vec![0.0],
            seed: 0,
            records_per_chunk: 4096,
        }
    }
}

/// Run lengths over the row-major mask, alternating zero and one runs and
/// starting with a (possibly empty) zero run.
pub fn rle_encode(mask: &Array2<f64>) -> Result<Vec<u32>> {
    let mut runs = Vec::new();
    let mut current = 0.0;
    let mut len = 0u32;
    for &v in mask.iter() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::Dataset(format!("mask value {v} is not binary")));
        }
        if v == current {
            len += 1;
        } else {
            runs.push(len);
            current = v;
            len = 1;
        }
    }
    runs.push(len);
    Ok(runs)
}

pub fn rle_decode(runs: &[u32], n: usize) -> Result<Array2<f64>> {
    let total: u64 = runs.iter().map(|&r| r as u64).sum();
    if total != (n * n) as u64 {
        return Err(Error::Dataset(format!(
            "run lengths cover {total} pixels, expected {}",
            n * n
        )));
    }
    let mut data = Vec::with_capacity(n * n);
    for (k, &r) in runs.iter().enumerate() {
        let v = if k % 2 == 0 { 0.0 } else { 1.0 };
        data.extend(std::iter::repeat(v).take(r as usize));
    }
    Ok(Array2::from_shape_vec((n, n), data).expect("length checked"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.pos + k > self.buf.len() {
            return Err(Error::Dataset(format!("{}: unexpected end of file", self.file)));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Dataset(format!("{}: trailing bytes", self.file)));
        }
        Ok(())
    }
}

fn encode_pupils(set: &PupilSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(PUPIL_MAGIC);
    out.extend_from_slice(&(set.entries.len() as u64).to_le_bytes());
    for e in &set.entries {
        out.extend_from_slice(&(e.id as u64).to_le_bytes());
        out.extend_from_slice(&(e.bin as u32).to_le_bytes());
        out.extend_from_slice(&e.alpha().to_le_bytes());
        let verts = e.hull.as_ref().map(|h| h.vertices()).unwrap_or(&[]);
        out.extend_from_slice(&(verts.len() as u32).to_le_bytes());
        for v in verts {
            out.extend_from_slice(&v[0].to_le_bytes());
            out.extend_from_slice(&v[1].to_le_bytes());
        }
        let runs = rle_encode(e.mask.values())?;
        out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
        for r in runs {
            out.extend_from_slice(&r.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_pupils(bytes: &[u8], manifest: &DatasetManifest) -> Result<PupilSet> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        file: PUPILS_FILE,
    };
    if r.take(4)? != PUPIL_MAGIC {
        return Err(Error::Dataset(format!("{PUPILS_FILE}: bad magic")));
    }
    let count = r.u64()? as usize;
    let grid = manifest.grid;
    let edges = BinEdges::from_edges(manifest.bin_edges.clone())?;
    let mut raw = Vec::with_capacity(count);
    for _ in 0..count {
        let id = r.u64()? as usize;
        let bin = r.u32()? as usize;
        let alpha = r.f64()?;
        let nv = r.u32()? as usize;
        let mut verts = Vec::with_capacity(nv);
        for _ in 0..nv {
            verts.push([r.f64()?, r.f64()?]);
        }
        let nr = r.u32()? as usize;
        let mut runs = Vec::with_capacity(nr);
        for _ in 0..nr {
            runs.push(r.u32()?);
        }
        raw.push((id, bin, alpha, verts, runs));
    }
    r.finish()?;
    let entries = raw
        .into_par_iter()
        .map(|(id, bin, alpha, verts, runs)| {
            let mask = PupilMask::new(&grid, rle_decode(&runs, grid.n)?)?;
            let a = asymmetry(&mask)?;
            if (a.alpha - alpha).abs() > ALPHA_TOLERANCE {
                return Err(Error::Dataset(format!(
                    "pupil {id}: stored alpha {alpha} but mask gives {}",
                    a.alpha
                )));
            }
            if bin >= edges.bins() {
                return Err(Error::Dataset(format!("pupil {id}: bin {bin} out of range")));
            }
            let hull = if verts.is_empty() {
                None
            } else {
                Some(ConvexHullSpec::new(verts)?)
            };
            Ok(PupilEntry {
                id,
                bin,
                hull,
                mask,
                asymmetry: a,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PupilSet::from_entries(
        grid,
        edges,
        manifest.count_per_bin,
        entries,
        manifest.samples_drawn,
        manifest.pupil_seed,
    ))
}

fn encode_records(records: &[TripletRecord], n: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(RECORD_MAGIC);
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for rec in records {
        out.extend_from_slice(&(rec.pupil_id as u64).to_le_bytes());
        out.extend_from_slice(&(rec.phase_index as u64).to_le_bytes());
        out.extend_from_slice(&rec.alpha.to_le_bytes());
        out.extend_from_slice(&rec.sigma.to_le_bytes());
        out.push(rec.noise_seed.is_some() as u8);
        out.extend_from_slice(&rec.noise_seed.unwrap_or(0).to_le_bytes());
        out.extend_from_slice(&(rec.coefficients.len() as u32).to_le_bytes());
        for c in &rec.coefficients {
            out.extend_from_slice(&c.to_le_bytes());
        }
        match &rec.psf {
            Some(p) => {
                out.push(1);
                debug_assert_eq!(p.dim(), (n, n));
                for v in p.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
    }
    out
}

fn decode_records(bytes: &[u8], file: &str, n: usize) -> Result<Vec<TripletRecord>> {
    let mut r = Reader { buf: bytes, pos: 0, file };
    if r.take(4)? != RECORD_MAGIC {
        return Err(Error::Dataset(format!("{file}: bad magic")));
    }
    let count = r.u64()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let pupil_id = r.u64()? as usize;
        let phase_index = r.u64()? as usize;
        let alpha = r.f64()?;
        let sigma = r.f64()?;
        let has_seed = r.u8()? != 0;
        let seed = r.u64()?;
        let nc = r.u32()? as usize;
        let mut coefficients = Vec::with_capacity(nc);
        for _ in 0..nc {
            coefficients.push(r.f64()?);
        }
        let psf = if r.u8()? != 0 {
            let mut v = Vec::with_capacity(n * n);
            for _ in 0..n * n {
                v.push(r.f32()?);
            }
            Some(Array2::from_shape_vec((n, n), v).expect("length matches"))
        } else {
            None
        };
        out.push(TripletRecord {
            pupil_id,
            phase_index,
            alpha,
            coefficients,
            sigma,
            noise_seed: has_seed.then_some(seed),
            psf,
        });
    }
    r.finish()?;
    Ok(out)
}

fn hex(v: u64) -> String {
    format!("{v:016x}")
}

fn parse_hex(s: &str, file: &str) -> Result<u64> {
    u64::from_str_radix(s, 16).map_err(|_| Error::Dataset(format!("{file}: bad checksum field {s:?}")))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], records: u64) -> Result<FileEntry> {
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(name))?;
    Ok(FileEntry {
        name: name.to_string(),
        checksum: hex(fnv1a64(bytes)),
        bytes: bytes.len() as u64,
        records,
    })
}

fn read_checked(dir: &Path, entry: &FileEntry) -> Result<Vec<u8>> {
    let bytes = fs::read(dir.join(&entry.name))?;
    let expected = parse_hex(&entry.checksum, &entry.name)?;
    let found = fnv1a64(&bytes);
    if found != expected {
        return Err(Error::ChecksumMismatch {
            file: entry.name.clone(),
            expected,
            found,
        });
    }
    Ok(bytes)
}

fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, text + "\n")?;
    fs::rename(tmp, dir.join(MANIFEST_FILE))?;
    Ok(())
}

fn check_records(records: &[TripletRecord], set: &PupilSet, meta: &DatasetMeta) -> Result<()> {
    let n = set.grid.n;
    for rec in records {
        let entry = set
            .get(rec.pupil_id)
            .ok_or_else(|| Error::Dataset(format!("record refers to unknown pupil {}", rec.pupil_id)))?;
        if (entry.alpha() - rec.alpha).abs() > ALPHA_TOLERANCE {
            return Err(Error::Dataset(format!(
                "record alpha {} does not match pupil {} alpha {}",
                rec.alpha,
                rec.pupil_id,
                entry.alpha()
            )));
        }
        if rec.coefficients.len() != meta.zernike_modes.len() {
            return Err(Error::Dataset(format!(
                "record has {} coefficients, manifest lists {} modes",
                rec.coefficients.len(),
                meta.zernike_modes.len()
            )));
        }
        if !meta.sigmas.contains(&rec.sigma) {
            return Err(Error::Dataset(format!("record sigma {} not in manifest", rec.sigma)));
        }
        if let Some(p) = &rec.psf {
            if p.dim() != (n, n) {
                return Err(Error::GridMismatch {
                    expected: n,
                    got: p.nrows(),
                });
            }
        }
    }
    Ok(())
}

fn chunk_name(index: usize) -> String {
    format!("records-{index:03}.bin")
}

fn write_chunks(
    dir: &Path,
    records: &[TripletRecord],
    per_chunk: usize,
    first_index: usize,
    n: usize,
) -> Result<Vec<FileEntry>> {
    records
        .chunks(per_chunk.max(1))
        .enumerate()
        .map(|(k, c)| write_file(dir, &chunk_name(first_index + k), &encode_records(c, n), c.len() as u64))
        .collect()
}

/// Writes a pupil set and its records (sorted into canonical
/// `(pupil_id, phase_index, sigma)` order) to `dir`.
pub fn write_dataset(dir: &Path, set: &PupilSet, records: &[TripletRecord], meta: &DatasetMeta) -> Result<DatasetManifest> {
    if meta.records_per_chunk == 0 {
        return Err(Error::InvalidConfig("records_per_chunk must be >= 1".into()));
    }
    check_records(records, set, meta)?;
    fs::create_dir_all(dir)?;
    let mut sorted = records.to_vec();
    sorted.sort_by_key(TripletRecord::key);
    let pupils = write_file(dir, PUPILS_FILE, &encode_pupils(set)?, set.len() as u64)?;
    let chunks = write_chunks(dir, &sorted, meta.records_per_chunk, 0, set.grid.n)?;
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        grid: set.grid,
        bin_edges: set.edges.edges().to_vec(),
        count_per_bin: set.count_per_bin,
        counts: set.bin_counts(),
        fill_status: set.status.clone(),
        pupil_seed: set.seed,
        samples_drawn: set.samples_drawn,
        pupil_set_hash: set.content_hash(),
        zernike_modes: meta.zernike_modes.clone(),
        sigmas: meta.sigmas.clone(),
        seed: meta.seed,
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        record_count: sorted.len() as u64,
        records_per_chunk: meta.records_per_chunk,
        pupils,
        chunks,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Appends records as new chunk files and rewrites the manifest.
pub fn append_records(dir: &Path, records: &[TripletRecord]) -> Result<DatasetManifest> {
    let mut manifest = read_manifest(dir)?;
    let pupils = read_pupils(dir, &manifest)?;
    let meta = DatasetMeta {
        zernike_modes: manifest.zernike_modes.clone(),
        sigmas: manifest.sigmas.clone(),
        seed: manifest.seed,
        records_per_chunk: manifest.records_per_chunk,
    };
    check_records(records, &pupils, &meta)?;
    let mut sorted = records.to_vec();
    sorted.sort_by_key(TripletRecord::key);
    let new = write_chunks(dir, &sorted, manifest.records_per_chunk, manifest.chunks.len(), manifest.grid.n)?;
    manifest.record_count += sorted.len() as u64;
    manifest.chunks.extend(new);
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: DATASET_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}

/// Reads and verifies the pupil file of a dataset.
pub fn read_pupils(dir: &Path, manifest: &DatasetManifest) -> Result<PupilSet> {
    let bytes = read_checked(dir, &manifest.pupils)?;
    let set = decode_pupils(&bytes, manifest)?;
    if set.bin_counts() != manifest.counts {
        return Err(Error::Dataset("pupil counts per bin disagree with manifest".into()));
    }
    Ok(set)
}

/// Reads and verifies one record chunk.
pub fn read_chunk(dir: &Path, manifest: &DatasetManifest, index: usize) -> Result<Vec<TripletRecord>> {
    let entry = manifest
        .chunks
        .get(index)
        .ok_or_else(|| Error::Dataset(format!("no chunk {index}")))?;
    let bytes = read_checked(dir, entry)?;
    let recs = decode_records(&bytes, &entry.name, manifest.grid.n)?;
    if recs.len() as u64 != entry.records {
        return Err(Error::Dataset(format!(
            "{}: {} records, manifest lists {}",
            entry.name,
            recs.len(),
            entry.records
        )));
    }
    Ok(recs)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let pupils = read_pupils(dir, &manifest)?;
    let mut records = Vec::with_capacity(manifest.record_count as usize);
    for k in 0..manifest.chunks.len() {
        records.extend(read_chunk(dir, &manifest, k)?);
    }
    if records.len() as u64 != manifest.record_count {
        return Err(Error::Dataset(format!(
            "{} records on disk, manifest lists {}",
            records.len(),
            manifest.record_count
        )));
    }
    for rec in &records {
        let entry = pupils
            .get(rec.pupil_id)
            .ok_or_else(|| Error::Dataset(format!("record refers to unknown pupil {}", rec.pupil_id)))?;
        if (entry.alpha() - rec.alpha).abs() > ALPHA_TOLERANCE {
            return Err(Error::Dataset(format!("record alpha mismatch for pupil {}", rec.pupil_id)));
        }
    }
    Ok(Dataset {
        manifest,
        pupils,
        records,
    })
}

/// Replays the generation of a record's PSF from its coefficients and noise
/// seed.
pub fn regenerate_psf(record: &TripletRecord, pupil: &PupilMask, basis: &ZernikeBasis) -> Result<Psf> {
    let phase: PhaseMap = basis.synthesize(&record.coefficients)?;
    let noise = NoiseModel::new(record.sigma)?;
    let seed = match (record.noise_seed, record.sigma > 0.0) {
        (Some(s), _) => s,
        (None, false) => 0,
        (None, true) => return Err(Error::MissingSeed),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    noisy_normalized_psf(pupil, &phase, &noise, &mut rng)
}

fn mix_seed(seed: u64, pupil_id: usize, phase_index: usize, sigma_index: usize) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        ^ (pupil_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (phase_index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (sigma_index as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `phases_per_pupil` triplets per pupil and noise level.
pub fn generate_triplets(
    set: &PupilSet,
    sampler: &PhaseSampler,
    sigmas: &[f64],
    phases_per_pupil: usize,
    split: PhaseSplit,
    seed: u64,
    store_psf: bool,
) -> Result<Vec<TripletRecord>> {
    sampler.validate()?;
    let basis = sampler.basis(&set.grid)?;
    let per_pupil: Vec<Vec<TripletRecord>> = set
        .entries
        .par_iter()
        .map(|e| {
            let mut out = Vec::with_capacity(phases_per_pupil * sigmas.len());
            for j in 0..phases_per_pupil {
                let coefficients = sampler.coefficients(seed, split, j);
                for (si, &sigma) in sigmas.iter().enumerate() {
                    let mut rec = TripletRecord {
                        pupil_id: e.id,
                        phase_index: j,
                        alpha: e.alpha(),
                        coefficients: coefficients.clone(),
                        sigma,
                        noise_seed: Some(mix_seed(seed, e.id, j, si)),
                        psf: None,
                    };
                    if store_psf {
                        let psf = regenerate_psf(&rec, &e.mask, &basis)?;
                        rec.psf = Some(psf.values().mapv(|v| v as f32));
                    }
                    out.push(rec);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_pupil.into_iter().flatten().collect())
}

/// Whether the regenerated PSF of `record` matches its stored payload
/// bit for bit.
pub fn verify_regeneration(record: &TripletRecord, pupil: &PupilMask, basis: &ZernikeBasis) -> Result<bool> {
    let stored = record
        .psf
        .as_ref()
        .ok_or_else(|| Error::Dataset("record has no stored PSF".into()))?;
    let psf = regenerate_psf(record, pupil, basis)?;
    debug_assert_eq!(psf.normalization(), Normalization::CircleNormalized);
    Ok(psf
        .values()
        .iter()
        .zip(stored.iter())
        .all(|(a, b)| (*a as f32).to_bits() == b.to_bits()))
}
