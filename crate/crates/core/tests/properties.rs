use ndarray::Array2;
use proptest::prelude::*;
use pupil_design::dataset::{rle_decode, rle_encode};
use pupil_design::experiment::stats::{pearson, spearman};
use pupil_design::experiment::PhaseSampler;
use pupil_design::metrics::{field_error, phase_error, strehl, wrap_phase, PhaseErrorMode, StrehlReference};
use pupil_design::{
    asymmetry, convex_hull, forward_psf, rasterize_hull, GridSpec, PhaseMap, PupilMask,
};

fn grid() -> GridSpec {
    GridSpec::new(64, 48).unwrap()
}

fn unit_points() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..std::f64::consts::TAU), 3..40).prop_map(|v| {
        v.into_iter()
            .map(|(r, t)| [r.sqrt() * t.cos(), r.sqrt() * t.sin()])
            .collect()
    })
}

fn hull_mask(points: &[[f64; 2]]) -> Option<PupilMask> {
    let hull = convex_hull(points).ok()?;
    let mask = rasterize_hull(&hull, &grid()).ok()?;
    (mask.area() >= 4.0).then_some(mask)
}

fn coefficients() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 14)
}

fn phase(coeffs: &[f64]) -> PhaseMap {
    PhaseSampler::default().basis(&grid()).unwrap().synthesize(coeffs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn alpha_is_bounded_and_flip_invariant(points in unit_points()) {
        let Some(mask) = hull_mask(&points) else { return Ok(()); };
        let a = asymmetry(&mask).unwrap().alpha;
        prop_assert!((0.0..=0.36).contains(&a), "alpha {}", a);
        prop_assert_eq!(asymmetry(&mask.flipped()).unwrap().alpha, a);
    }

    #[test]
    fn rasterized_hull_lies_in_circle(points in unit_points()) {
        let g = grid();
        let Some(mask) = hull_mask(&points) else { return Ok(()); };
        for ((i, j), &v) in mask.values().indexed_iter() {
            prop_assert!(v == 0.0 || g.in_circle(i, j));
        }
        prop_assert!(mask.is_binary());
    }

    #[test]
    fn psf_energy_follows_parseval(points in unit_points(), c in coefficients()) {
        let Some(mask) = hull_mask(&points) else { return Ok(()); };
        let n = grid().n as f64;
        let psf = forward_psf(&mask, &phase(&c)).unwrap();
        prop_assert!((psf.sum() / (n * n * mask.area()) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rle_round_trips(bits in prop::collection::vec(any::<bool>(), 256)) {
        let m = Array2::from_shape_vec((16, 16), bits.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let runs = rle_encode(&m).unwrap();
        prop_assert_eq!(runs.iter().map(|&r| r as usize).sum::<usize>(), 256);
        prop_assert_eq!(rle_decode(&runs, 16).unwrap(), m);
    }

    #[test]
    fn wrap_phase_is_congruent_and_bounded(v in -100.0f64..100.0) {
        let w = wrap_phase(v);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI);
        let k = (v - w) / std::f64::consts::TAU;
        prop_assert!((k - k.round()).abs() < 1e-9);
    }

    #[test]
    fn phase_error_ignores_piston(points in unit_points(), c in coefficients(), piston in -3.0f64..3.0) {
        let Some(mask) = hull_mask(&points) else { return Ok(()); };
        let phi = phase(&c);
        let shifted = PhaseMap::new(&grid(), phi.values().mapv(|v| v + piston)).unwrap();
        prop_assert!(phase_error(&shifted, &phi, &mask, PhaseErrorMode::ModPiston).unwrap() < 1e-20);
        prop_assert!(field_error(&shifted, &phi, &mask, PhaseErrorMode::ModPiston).unwrap().abs() < 1e-12);
        let raw = phase_error(&shifted, &phi, &mask, PhaseErrorMode::Raw).unwrap();
        prop_assert!((raw - piston * piston).abs() < 1e-9);
    }

    #[test]
    fn strehl_never_exceeds_one(points in unit_points(), c in coefficients(), d in coefficients()) {
        let Some(mask) = hull_mask(&points) else { return Ok(()); };
        let s = strehl(&mask, &phase(&c), &phase(&d), StrehlReference::SelfPupil).unwrap();
        prop_assert!(s > 0.0 && s <= 1.0 + 1e-12);
        let sc = strehl(&mask, &phase(&c), &phase(&d), StrehlReference::ReferenceCircle).unwrap();
        prop_assert!(sc <= s + 1e-12);
    }

    #[test]
    fn spearman_is_invariant_under_monotone_maps(x in prop::collection::vec(-10.0f64..10.0, 3..30)) {
        let y: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0).collect();
        let r = spearman(&x, &y);
        let distinct = x.iter().any(|v| *v != x[0]);
        if distinct {
            prop_assert!((r - 1.0).abs() < 1e-12, "{}", r);
        }
        let p = pearson(&x, &y);
        prop_assert!(p.is_nan() || (-1.0 - 1e-12..=1.0 + 1e-12).contains(&p));
    }
}
