use pupil_design::dataset::{
    append_records, generate_triplets, read_dataset, read_manifest, regenerate_psf, verify_regeneration,
    write_dataset, DatasetMeta, TripletRecord, MANIFEST_FILE, PUPILS_FILE,
};
use pupil_design::experiment::{PhaseSampler, PhaseSplit};
use pupil_design::{build_pupil_set, Error, GridSpec, PupilSet, PupilSetConfig};

fn small_set() -> PupilSet {
    let g = GridSpec::new(64, 32).unwrap();
    let cfg = PupilSetConfig {
        bins: 3,
        alpha_max: 0.3,
        count_per_bin: 2,
        seed: 3,
        ..Default::default()
    };
    build_pupil_set(&g, &cfg).unwrap()
}

fn meta(sampler: &PhaseSampler, sigmas: &[f64]) -> DatasetMeta {
    DatasetMeta {
        zernike_modes: sampler.modes.clone(),
        sigmas: sigmas.to_vec(),
        seed: 7,
        records_per_chunk: 5,
    }
}

#[test]
fn round_trip_without_payloads_regenerates_psfs() {
    let set = small_set();
    let sampler = PhaseSampler::default();
    let sigmas = [0.0, 0.02];
    let recs = generate_triplets(&set, &sampler, &sigmas, 4, PhaseSplit::Train, 7, false).unwrap();
    assert_eq!(recs.len(), set.len() * 4 * 2);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &set, &recs, &meta(&sampler, &sigmas)).unwrap();
    assert_eq!(manifest.record_count as usize, recs.len());
    assert!(manifest.chunks.len() > 1);
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.records, recs);
    assert_eq!(back.pupils, set);
    assert_eq!(back.manifest.pupil_set_hash, set.content_hash());

    let stored = generate_triplets(&set, &sampler, &sigmas, 4, PhaseSplit::Train, 7, true).unwrap();
    let basis = sampler.basis(&set.grid).unwrap();
    for (plain, with_psf) in back.records.iter().zip(&stored) {
        let pupil = &back.pupils.get(plain.pupil_id).unwrap().mask;
        let psf = regenerate_psf(plain, pupil, &basis).unwrap();
        assert_eq!(&psf.values().mapv(|v| v as f32), with_psf.psf.as_ref().unwrap());
        assert!(verify_regeneration(with_psf, pupil, &basis).unwrap());
    }
}

#[test]
fn empty_dataset_round_trips() {
    let set = small_set();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &set, &[], &DatasetMeta::default()).unwrap();
    assert_eq!(manifest.record_count, 0);
    assert!(manifest.chunks.is_empty());
    let back = read_dataset(dir.path()).unwrap();
    assert!(back.records.is_empty());
    assert_eq!(back.pupils.bin_counts(), set.bin_counts());
}

#[test]
fn append_adds_chunks() {
    let set = small_set();
    let sampler = PhaseSampler::default();
    let sigmas = [0.0];
    let first = generate_triplets(&set, &sampler, &sigmas, 2, PhaseSplit::Train, 7, false).unwrap();
    let second = generate_triplets(&set, &sampler, &sigmas, 2, PhaseSplit::Test, 7, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &set, &first, &meta(&sampler, &sigmas)).unwrap();
    let m = append_records(dir.path(), &second).unwrap();
    assert_eq!(m.record_count as usize, first.len() + second.len());
    assert_eq!(read_dataset(dir.path()).unwrap().records.len(), first.len() + second.len());
}

#[test]
fn corrupted_files_are_rejected() {
    let set = small_set();
    let sampler = PhaseSampler::default();
    let recs = generate_triplets(&set, &sampler, &[0.0], 2, PhaseSplit::Train, 7, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &set, &recs, &meta(&sampler, &[0.0])).unwrap();

    let pupils = dir.path().join(PUPILS_FILE);
    let mut bytes = std::fs::read(&pupils).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x80;
    std::fs::write(&pupils, &bytes).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::ChecksumMismatch { .. })));
    bytes[last] ^= 0x80;
    std::fs::write(&pupils, &bytes).unwrap();

    let chunk = dir.path().join(&manifest.chunks[0].name);
    let mut bytes = std::fs::read(&chunk).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&chunk, &bytes).unwrap();
    assert!(read_dataset(dir.path()).is_err());
}

#[test]
fn unsupported_version_is_rejected() {
    let set = small_set();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &set, &[], &DatasetMeta::default()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["version"] = serde_json::json!(99);
    std::fs::write(&path, v.to_string()).unwrap();
    assert!(matches!(
        read_manifest(dir.path()),
        Err(Error::UnsupportedVersion { found: 99, .. })
    ));
}

#[test]
fn noisy_record_without_seed_cannot_regenerate() {
    let set = small_set();
    let sampler = PhaseSampler::default();
    let basis = sampler.basis(&set.grid).unwrap();
    let e = &set.entries[0];
    let rec = TripletRecord {
        pupil_id: e.id,
        phase_index: 0,
        alpha: e.alpha(),
        coefficients: sampler.coefficients(1, PhaseSplit::Train, 0),
        sigma: 0.01,
        noise_seed: None,
        psf: None,
    };
    assert!(matches!(regenerate_psf(&rec, &e.mask, &basis), Err(Error::MissingSeed)));
    let clean = TripletRecord { sigma: 0.0, ..rec };
    assert!(regenerate_psf(&clean, &e.mask, &basis).is_ok());
}

#[test]
fn records_must_match_their_pupils() {
    let set = small_set();
    let sampler = PhaseSampler::default();
    let mut recs = generate_triplets(&set, &sampler, &[0.0], 1, PhaseSplit::Train, 7, false).unwrap();
    recs[0].alpha += 0.1;
    let dir = tempfile::tempdir().unwrap();
    assert!(write_dataset(dir.path(), &set, &recs, &meta(&sampler, &[0.0])).is_err());
    recs[0].alpha -= 0.1;
    recs[0].pupil_id = 10_000;
    assert!(write_dataset(dir.path(), &set, &recs, &meta(&sampler, &[0.0])).is_err());
}
