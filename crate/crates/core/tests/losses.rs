use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor::{grad_check, Tape, Tensor, Var};
use urolith::config::ClassLosses;
use urolith::losses::*;

fn eval(f: impl Fn(&Tape, Var) -> urolith::Result<Var>, p: &Tensor) -> f64 {
    let tape = Tape::new();
    let pv = tape.constant(p.clone());
    tape.value(f(&tape, pv).unwrap()).item()
}

fn vec1(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len()], v.to_vec()).unwrap()
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> (Tensor, Tensor) {
    let p = Tensor::from_fn(&[n], |_| rng.random_range(0.001..0.999));
    let g = Tensor::from_fn(&[n], |_| rng.random_bool(0.5) as u8 as f64);
    (p, g)
}

#[test]
fn dice_examples() {
    let g = vec1(&[1.0, 0.0, 1.0, 1.0]);
    assert!(eval(|t, p| dice_loss(t, p, &g), &g) <= 1e-6);
    let zero = vec1(&[0.0; 4]);
    assert!((eval(|t, p| dice_loss(t, p, &g), &zero) - 1.0).abs() < 1e-12);
    let g2 = vec1(&[1.0, 0.0]);
    let d = eval(|t, p| dice_loss(t, p, &g2), &vec1(&[0.5, 0.5]));
    assert!((d - (1.0 - 1.0 / (2.0 + DICE_EPS))).abs() < 1e-15);
}

#[test]
fn empty_target_does_not_abort() {
    let g = vec1(&[0.0; 3]);
    let d = eval(|t, p| dice_loss(t, p, &g), &vec1(&[0.0; 3]));
    assert_eq!(d, 1.0);
}

#[test]
fn bce_examples() {
    let one = vec1(&[1.0]);
    assert!((eval(|t, p| bce_loss(t, p, &one), &vec1(&[0.5])) - 2f64.ln()).abs() < 1e-15);
    assert!(eval(|t, p| bce_loss(t, p, &one), &one) < 2e-7);
    let g = vec1(&[1.0, 0.0]);
    let v = eval(|t, p| bce_loss(t, p, &g), &vec1(&[0.9, 0.1]));
    assert!((v - 0.105_360_515_657_826_3).abs() < 1e-12);
}

#[test]
fn focal_examples() {
    let one = vec1(&[1.0]);
    let v = eval(|t, p| focal_loss(t, p, &one, 2.0, 0.25), &vec1(&[0.5]));
    assert!((v - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15);
    let easy = eval(|t, p| focal_loss(t, p, &one, 2.0, 0.25), &vec1(&[0.99]));
    let easy_bce = eval(|t, p| bce_loss(t, p, &one), &vec1(&[0.99]));
    assert!(easy <= 1e-4 * 0.25 * easy_bce * 1.000_001);
}

#[test]
fn focal_without_modulation_is_half_bce() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (p, g) = random_batch(&mut rng, 16);
        let f = eval(|t, x| focal_loss(t, x, &g, 0.0, 0.5), &p);
        let b = eval(|t, x| bce_loss(t, x, &g), &p);
        assert!((f - 0.5 * b).abs() < 1e-12);
    }
}

#[test]
fn total_loss_examples() {
    let tape = Tape::new();
    let z = tape.constant(Tensor::scalar(0.0));
    let w = update_weights(0.3, 0.1).unwrap();
    assert_eq!(tape.value(total_loss(&tape, z, z, z, &w).unwrap()).item(), 0.0);
    let o = tape.constant(Tensor::scalar(1.0));
    let w = LossWeights { dice: 0.2, bce: 0.08, focal: 0.72 };
    assert!((tape.value(total_loss(&tape, o, o, o, &w).unwrap()).item() - 1.0).abs() < 1e-15);
}

#[test]
fn total_loss_matches_two_level_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let s: f64 = rng.random();
        let lambda = 0.1;
        let w = update_weights(s, lambda).unwrap();
        let (ld, lb, lf): (f64, f64, f64) = (rng.random(), rng.random::<f64>() * 3.0, rng.random());
        let tape = Tape::new();
        let [d, b, f] = [ld, lb, lf].map(|v| tape.constant(Tensor::scalar(v)));
        let flat = tape.value(total_loss(&tape, d, b, f, &w).unwrap()).item();
        let class = 1.0 - w.dice;
        let two_level = w.dice * ld + class * (lambda * lb + (1.0 - lambda) * lf);
        assert!((flat - two_level).abs() < 1e-12);
    }
}

#[test]
fn scheduler_closed_form() {
    let cases = [
        (0.0, [1.0, 0.0, 0.0]),
        (0.3, [0.7, 0.03, 0.27]),
        (0.6, [0.4, 0.06, 0.54]),
        (0.8, [0.2, 0.08, 0.72]),
        (0.81, [0.2, 0.08, 0.72]),
        (0.9, [0.2, 0.08, 0.72]),
        (1.0, [0.2, 0.08, 0.72]),
    ];
    for (s, [d, b, f]) in cases {
        let w = update_weights(s, 0.1).unwrap();
        assert!((w.dice - d).abs() < 1e-12, "s={s}: {w:?}");
        assert!((w.bce - b).abs() < 1e-12, "s={s}: {w:?}");
        assert!((w.focal - f).abs() < 1e-12, "s={s}: {w:?}");
    }
}

#[test]
fn scheduler_rejects_out_of_range() {
    for s in [-0.01, 1.01, f64::NAN] {
        assert!(update_weights(s, 0.1).is_err());
    }
}

#[test]
fn initial_weights_split_by_lambda() {
    let w = LossWeights::INITIAL;
    assert!((w.dice + w.class() - 1.0).abs() < 1e-15);
    assert!((w.bce / w.class() - 0.1).abs() < 1e-12);
}

#[test]
fn restricted_weights_keep_class_total() {
    let w = update_weights(0.5, 0.1).unwrap();
    for which in [ClassLosses::Both, ClassLosses::BceOnly, ClassLosses::FocalOnly] {
        let r = w.restrict(which);
        assert!((r.class() - w.class()).abs() < 1e-15);
        assert_eq!(r.dice, w.dice);
    }
    assert_eq!(w.restrict(ClassLosses::BceOnly).focal, 0.0);
    assert_eq!(w.restrict(ClassLosses::FocalOnly).bce, 0.0);
}

#[test]
fn loss_gradients_pass_gradcheck() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, g) = random_batch(&mut rng, 10);
        let p = p.map(|v| v.clamp(0.05, 0.95));
        assert!(grad_check(|t: &Tape, x| dice_loss(t, x, &g), &p, 1e-6).unwrap() < 1e-6);
        assert!(grad_check(|t: &Tape, x| bce_loss(t, x, &g), &p, 1e-6).unwrap() < 1e-6);
        assert!(grad_check(|t: &Tape, x| focal_loss(t, x, &g, 2.0, 0.25), &p, 1e-6).unwrap() < 1e-6);
    }
}

proptest! {
    #[test]
    fn scheduler_invariants(s in 0.0f64..=1.0, s2 in 0.0f64..=1.0) {
        let w = update_weights(s, 0.1).unwrap();
        prop_assert!((w.dice + w.bce + w.focal - 1.0).abs() < 1e-12);
        prop_assert!((w.bce / w.class() - 0.1).abs() < 1e-12 || w.class() == 0.0);
        if w.bce > 0.0 {
            prop_assert!((w.focal / w.bce - 9.0).abs() < 1e-9);
        }
        let w2 = update_weights(s2, 0.1).unwrap();
        if s <= s2 {
            prop_assert!(w.dice >= w2.dice);
        }
    }

    #[test]
    fn threshold_branch_is_continuous(t in 0.5f64..0.95, lambda in 0.0f64..=1.0) {
        let at = update_weights_with_threshold(t, lambda, t).unwrap();
        let above = update_weights_with_threshold((t + 0.01).min(1.0), lambda, t).unwrap();
        prop_assert!((at.dice - above.dice).abs() < 1e-12);
        prop_assert!((at.dice - (1.0 - t)).abs() < 1e-12);
    }

    #[test]
    fn losses_are_bounded(seed in 0u64..1000, n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, g) = random_batch(&mut rng, n);
        let d = eval(|t, x| dice_loss(t, x, &g), &p);
        let b = eval(|t, x| bce_loss(t, x, &g), &p);
        let f = eval(|t, x| focal_loss(t, x, &g, 2.0, 0.25), &p);
        prop_assert!((0.0..=1.0 + DICE_EPS).contains(&d));
        prop_assert!(b >= 0.0 && f >= 0.0);
        prop_assert!(f <= b);
    }

    #[test]
    fn perfect_binary_overlap(mut bits in proptest::collection::vec(any::<bool>(), 1..64), at in 0usize..64) {
        let n = bits.len();
        bits[at % n] = true;
        let g = Tensor::from_fn(&[bits.len()], |i| bits[i] as u8 as f64);
        prop_assert!(eval(|t, x| dice_loss(t, x, &g), &g) <= 1e-6);
    }
}
