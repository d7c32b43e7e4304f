mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor::{Tape, Tensor};
use urolith::vtt::*;

fn record(age: f64, gender: Gender, location: StoneLocation) -> EhrRecord {
    EhrRecord {
        age,
        gender,
        blood_leukocyte: 7.5,
        serum_creatinine: 90.0,
        urine_leukocyte: 40.0,
        urine_ph: 6.2,
        stone_location: location,
    }
}

fn cohort(rng: &mut ChaCha8Rng, n: usize) -> Vec<EhrRecord> {
    (0..n)
        .map(|_| EhrRecord {
            age: rng.random_range(18.0..90.0),
            gender: Gender::ALL[rng.random_range(0..2)],
            blood_leukocyte: rng.random_range(3.0..15.0),
            serum_creatinine: rng.random_range(40.0..200.0),
            urine_leukocyte: rng.random_range(0.0..500.0),
            urine_ph: rng.random_range(4.0..9.0),
            stone_location: StoneLocation::ALL[rng.random_range(0..8)],
        })
        .collect()
}

#[test]
fn patch_counts_follow_the_grid() {
    let big = Tensor::zeros(&[48, 48, 48]);
    assert_eq!(patchify(&big, 16).unwrap().shape(), &[27, 4096]);
    let toy = Tensor::zeros(&[16, 16, 16]);
    assert_eq!(patchify(&toy, 4).unwrap().shape(), &[64, 64]);
    for (s, p) in [(8, 2), (8, 4), (12, 4), (16, 8), (32, 16), (6, 3)] {
        let n = patchify(&Tensor::zeros(&[s, s, s]), p).unwrap().shape()[0];
        assert_eq!(n, (s * s * s) / (p * p * p));
    }
}

#[test]
fn single_patch_is_the_flat_volume() {
    let v = Tensor::from_fn(&[4, 4, 4], |i| i as f64 * 0.5);
    let p = patchify(&v, 4).unwrap();
    assert_eq!(p.shape(), &[1, 64]);
    assert_eq!(p.data(), v.data());
}

#[test]
fn non_divisible_side_is_rejected() {
    assert!(patchify(&Tensor::zeros(&[10, 10, 10]), 4).is_err());
}

#[test]
fn patch_rows_are_lexicographic() {
    let v = Tensor::from_fn(&[8, 8, 8], |i| i as f64);
    let p = patchify(&v, 4).unwrap();
    for (row, (gz, gy, gx)) in [(0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1), (1, 0, 0)].iter().enumerate() {
        // first voxel of each patch
        assert_eq!(p.data()[row * 64], ((gz * 4 * 8 + gy * 4) * 8 + gx * 4) as f64);
    }
}

#[test]
fn embed_patch_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, d, e) = (5, 8, 6);
    let pos = Tensor::from_fn(&[n, e], |_| rng.random());
    let proj = Tensor::from_fn(&[d, e], |_| rng.random());

    let tape = Tape::new();
    let zero = tape.constant(Tensor::zeros(&[n, d]));
    let out = embed_patches(&tape, zero, tape.constant(proj.clone()), tape.constant(pos.clone())).unwrap();
    assert_eq!(*tape.value(out), pos);

    // identity-extended projection, zero positions
    let ident = Tensor::from_fn(&[d, d + 2], |i| (i / (d + 2) == i % (d + 2)) as u8 as f64);
    let patches = Tensor::from_fn(&[n, d], |_| rng.random());
    let out = embed_patches(
        &tape,
        tape.constant(patches.clone()),
        tape.constant(ident),
        tape.constant(Tensor::zeros(&[n, d + 2])),
    )
    .unwrap();
    let v = tape.value(out);
    for i in 0..n {
        for j in 0..d {
            assert_eq!(v.at2(i, j), patches.at2(i, j));
        }
        assert_eq!((v.at2(i, d), v.at2(i, d + 1)), (0.0, 0.0));
    }

    let out = embed_patches(&tape, tape.constant(patches.clone()), tape.constant(proj.clone()), tape.constant(pos.clone()))
        .unwrap();
    let expect = common::add(&common::mm(&common::to_mat(&patches), &common::to_mat(&proj)), &common::to_mat(&pos));
    assert!(common::max_abs_diff(tape.value(out).data(), &common::flat(&expect)) < 1e-12);
}

#[test]
fn mean_age_maps_to_zero_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train = cohort(&mut rng, 30);
    let stats = EhrStats::fit(&train).unwrap();
    let r = record(stats.mean[0], Gender::Male, StoneLocation::ALL[0]);
    let emb = Tensor::from_fn(&[EHR_FEATURE_WIDTH, 4], |_| rng.random());
    let tape = Tape::new();
    let tokens = tape.value(encode_ehr(&tape, &r, &stats, tape.constant(emb)).unwrap());
    assert_eq!(tokens.shape(), &[7, 4]);
    assert!(tokens.data()[..4].iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn gender_selects_distinct_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let stats = EhrStats::fit(&cohort(&mut rng, 20)).unwrap();
    let emb = Tensor::from_fn(&[EHR_FEATURE_WIDTH, 3], |_| rng.random());
    let token = |g| {
        let tape = Tape::new();
        let r = record(50.0, g, StoneLocation::ALL[2]);
        let t = tape.value(encode_ehr(&tape, &r, &stats, tape.constant(emb.clone())).unwrap());
        t.data()[3..6].to_vec()
    };
    let (m, f) = (token(Gender::Male), token(Gender::Female));
    assert_eq!(m, emb.data()[3..6].to_vec());
    assert_eq!(f, emb.data()[6..9].to_vec());
    assert_ne!(m, f);
}

#[test]
fn encode_matches_hand_standardization() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let train = cohort(&mut rng, 40);
    let stats = EhrStats::fit(&train).unwrap();
    let e = 5;
    let emb = Tensor::from_fn(&[EHR_FEATURE_WIDTH, e], |_| rng.random_range(-1.0..1.0));
    let row = |k: usize| emb.data()[k * e..(k + 1) * e].to_vec();
    let r = &cohort(&mut rng, 1)[0];
    let z = |v: f64, f: usize| (v - stats.mean[f]) / stats.std[f];
    let expect: Vec<Vec<f64>> = vec![
        row(0).iter().map(|w| w * z(r.age, 0)).collect(),
        row(1 + r.gender.index()),
        row(3).iter().map(|w| w * z(r.blood_leukocyte, 1)).collect(),
        row(4).iter().map(|w| w * z(r.serum_creatinine, 2)).collect(),
        row(5).iter().map(|w| w * z(r.urine_leukocyte, 3)).collect(),
        row(6).iter().map(|w| w * z(r.urine_ph, 4)).collect(),
        row(7 + r.stone_location.index()),
    ];
    let tape = Tape::new();
    let got = tape.value(encode_ehr(&tape, r, &stats, tape.constant(emb.clone())).unwrap());
    assert!(common::max_abs_diff(got.data(), &common::flat(&expect)) < 1e-12);
}

#[test]
fn zero_variance_is_rejected() {
    let r = record(40.0, Gender::Female, StoneLocation::ALL[1]);
    let err = EhrStats::fit(&[r.clone(), r]).unwrap_err();
    assert!(err.to_string().contains("zero variance"));
}

#[test]
fn unknown_categories_are_rejected() {
    assert!("other".parse::<Gender>().is_err());
    assert!("liver".parse::<StoneLocation>().is_err());
    for l in StoneLocation::ALL {
        assert_eq!(l.as_str().parse::<StoneLocation>().unwrap(), l);
    }
    assert_eq!(StoneLocation::ALL.len(), 8);
}

#[test]
fn record_validation() {
    let mut r = record(40.0, Gender::Male, StoneLocation::ALL[0]);
    assert!(r.validate().is_ok());
    r.urine_ph = 9.5;
    assert!(r.validate().is_err());
    r.urine_ph = 6.0;
    r.serum_creatinine = -1.0;
    assert!(r.validate().is_err());
}

proptest! {
    #[test]
    fn patchify_roundtrip(seed in 0u64..1000, grid in 1usize..4, p in prop::sample::select(vec![1usize, 2, 4])) {
        let s = grid * p;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = Tensor::from_fn(&[s, s, s], |_| rng.random());
        let patches = patchify(&v, p).unwrap();
        prop_assert_eq!(patches.shape(), &[grid * grid * grid, p * p * p]);
        prop_assert_eq!(unpatchify(&patches, p).unwrap(), v);
    }

    #[test]
    fn standardized_training_split_is_unit(seed in 0u64..1000, n in 3usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = cohort(&mut rng, n);
        let stats = EhrStats::fit(&train).unwrap();
        let z: Vec<[f64; 5]> = train.iter().map(|r| stats.standardize(r)).collect();
        for f in 0..5 {
            let mean = z.iter().map(|r| r[f]).sum::<f64>() / n as f64;
            let var = z.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
    }
}
