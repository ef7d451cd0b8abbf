use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vibrancy_core::model::{evaluate, fit, fit_from, gradient_check, Design, FitParams, Init, MultinomialLogit};

fn instance(n: usize, p: usize, c: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(1..=c)).collect();
    for (i, l) in y.iter_mut().take(c).enumerate() {
        *l = i + 1;
    }
    (x, y)
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

/// Confusion matrix first, then the per-class scores read off it.
fn oracle(y: &[usize], yhat: &[usize], classes: &[usize]) -> (f64, f64, f64) {
    let c = classes.len();
    let idx = |l: usize| classes.iter().position(|&k| k == l).unwrap();
    let mut cm = vec![vec![0usize; c]; c];
    for (&t, &p) in y.iter().zip(yhat) {
        cm[idx(t)][idx(p)] += 1;
    }
    let n = y.len();
    let mut f1s = Vec::new();
    let mut weighted = 0.0;
    let mut correct = 0;
    for i in 0..c {
        let tp = cm[i][i];
        correct += tp;
        let fp: usize = (0..c).filter(|&r| r != i).map(|r| cm[r][i]).sum();
        let fn_: usize = (0..c).filter(|&q| q != i).map(|q| cm[i][q]).sum();
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        f1s.push(f1);
        weighted += (tp + fn_) as f64 * f1;
    }
    (
        correct as f64 / n as f64,
        f1s.iter().sum::<f64>() / c as f64,
        weighted / n as f64,
    )
}

fn decode(mut code: usize, len: usize) -> Vec<usize> {
    (0..len)
        .map(|_| {
            let v = code % 3 + 1;
            code /= 3;
            v
        })
        .collect()
}

#[test]
fn evaluate_matches_oracle_exhaustively_up_to_length_3() {
    for len in 1..=3 {
        let total = 3usize.pow(len as u32);
        for a in 0..total {
            for b in 0..total {
                let (y, yhat) = (decode(a, len), decode(b, len));
                let r = evaluate(&y, &yhat, &[1, 2, 3]).unwrap();
                let (acc, macro_f1, weighted) = oracle(&y, &yhat, &[1, 2, 3]);
                assert_eq!((r.accuracy, r.macro_f1, r.weighted_f1), (acc, macro_f1, weighted));
                assert_eq!(r.per_class.iter().map(|m| m.support).sum::<usize>(), len);
            }
        }
    }
}

proptest! {
    #[test]
    fn evaluate_matches_oracle(
        y in prop::collection::vec(1usize..=3, 1..=6),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let yhat: Vec<usize> = y.iter().map(|_| rng.random_range(1..=3)).collect();
        let r = evaluate(&y, &yhat, &[1, 2, 3]).unwrap();
        let (acc, macro_f1, weighted) = oracle(&y, &yhat, &[1, 2, 3]);
        prop_assert_eq!(r.accuracy, acc);
        prop_assert_eq!(r.macro_f1, macro_f1);
        prop_assert_eq!(r.weighted_f1, weighted);
    }

    #[test]
    fn equal_supports_make_weighted_equal_macro(per_class in 1usize..4, seed in any::<u64>()) {
        let y: Vec<usize> = (1..=3).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let yhat: Vec<usize> = y.iter().map(|_| rng.random_range(1..=3)).collect();
        let r = evaluate(&y, &yhat, &[1, 2, 3]).unwrap();
        prop_assert!((r.weighted_f1 - r.macro_f1).abs() < 1e-15);
    }

    #[test]
    fn softmax_ignores_a_shared_logit_shift(
        w in prop::collection::vec(-3.0f64..3.0, 6),
        b in prop::collection::vec(-3.0f64..3.0, 3),
        x in prop::collection::vec(-3.0f64..3.0, 2),
        shift in -20.0f64..20.0,
    ) {
        let m = MultinomialLogit::from_parameters(vec![1, 2, 3], names(2), w.clone(), b.clone()).unwrap();
        let shifted: Vec<f64> = b.iter().map(|v| v + shift).collect();
        let s = MultinomialLogit::from_parameters(vec![1, 2, 3], names(2), w, shifted).unwrap();
        let (p, q) = (m.predict_proba(&x).unwrap(), s.predict_proba(&x).unwrap());
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(*a > 0.0);
        }
    }
}

#[test]
fn gradient_check_at_random_and_zero_parameters() {
    for (i, lambda) in [0.0, 0.1, 1.0, 10.0].into_iter().enumerate() {
        for seed in 0..5u64 {
            let (x, y) = instance(30, 4, 3, seed + 100 * i as u64);
            let d = Design::new(&x, 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut m = MultinomialLogit::from_parameters(vec![1, 2, 3], names(4), w, b).unwrap();
            m.lambda = lambda;
            assert!(gradient_check(&m, &d, &y, 1e-5).unwrap() < 1e-5);
            let mut zero =
                MultinomialLogit::from_parameters(vec![1, 2, 3], names(4), vec![0.0; 12], vec![0.0; 3]).unwrap();
            zero.lambda = lambda;
            assert!(gradient_check(&zero, &d, &y, 1e-5).unwrap() < 1e-6);
        }
    }
}

#[test]
fn different_starts_reach_the_same_optimum() {
    for seed in 0..4u64 {
        let (x, y) = instance(50, 12, 3, seed);
        let d = Design::new(&x, 12).unwrap();
        let params = FitParams::default();
        let a = fit(&d, &y, &names(12), &params).unwrap();
        let b = fit_from(&d, &y, &names(12), &params, Init::Seeded(seed + 7)).unwrap();
        assert!(a.converged() && b.converged());
        let (la, lb) = (a.loss(&d, &y).unwrap(), b.loss(&d, &y).unwrap());
        assert!((la - lb).abs() < 1e-6, "{la} vs {lb}");
        assert_eq!(a.predict_all(&d).unwrap(), b.predict_all(&d).unwrap());
    }
}

#[test]
fn loss_never_increases_along_the_path() {
    let (x, y) = instance(40, 5, 3, 3);
    let d = Design::new(&x, 5).unwrap();
    let mut last = f64::INFINITY;
    for iters in [0, 1, 2, 5, 10, 50, 200] {
        let params = FitParams {
            max_iter: iters,
            ..Default::default()
        };
        let m = fit_from(&d, &y, &names(5), &params, Init::Seeded(1)).unwrap();
        let loss = m.fit.as_ref().unwrap().loss;
        assert!(
            loss <= last + 1e-15,
            "loss rose from {last} to {loss} at {iters} iterations"
        );
        last = loss;
    }
}
