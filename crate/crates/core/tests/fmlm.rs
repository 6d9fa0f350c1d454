use fewsim_core::fmlm::{
    fmlm_fit, fmlm_predict, log_likelihood, log_likelihood_gradient, FitOptions,
    FmlmCoefficients, PanelRow, SharePanel,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn coefs(betas: Vec<Vec<f64>>) -> FmlmCoefficients {
    let j = betas.len() + 1;
    let k = betas[0].len();
    let mut c = FmlmCoefficients::zeros(names("c", j), names("x", k));
    c.betas = betas;
    c
}

fn random_panel(rng: &mut ChaCha8Rng, rows: usize, truth: &FmlmCoefficients) -> SharePanel {
    let k = truth.num_predictors();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows = (0..rows)
        .map(|i| {
            let mut x = vec![1.0];
            x.extend((1..k).map(|_| normal.sample(rng)));
            let p = fmlm_predict(truth, &x).unwrap();
            // Observed shares: fractions of 200 draws from the true shares.
            let mut counts = vec![0.0; p.len()];
            for _ in 0..200 {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let pick = p.iter().position(|pj| {
                    acc += pj;
                    u < acc
                });
                counts[pick.unwrap_or(p.len() - 1)] += 1.0;
            }
            PanelRow {
                district: format!("d{}", i % 7),
                year: 2000 + (i / 7) as i32,
                predictors: x,
                shares: counts.iter().map(|c| c / 200.0).collect(),
            }
        })
        .collect();
    SharePanel {
        crops: truth.crops.clone(),
        predictors: truth.predictors.clone(),
        rows,
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let truth = coefs(vec![vec![0.3, 0.8, -0.5], vec![-0.2, 0.1, 0.9], vec![0.5, -0.7, 0.2]]);
    let panel = random_panel(&mut rng, 300, &truth);
    let spread = Normal::new(0.0, 1.0).unwrap();
    let h = 1e-5;
    for point in 0..20 {
        let mut at = truth.clone();
        for b in at.betas.iter_mut().flatten() {
            *b = spread.sample(&mut rng);
        }
        let grad = log_likelihood_gradient(&panel, &at).unwrap();
        for r in 0..at.betas.len() {
            for c in 0..at.num_predictors() {
                let mut up = at.clone();
                up.betas[r][c] += h;
                let mut down = at.clone();
                down.betas[r][c] -= h;
                let fd = (log_likelihood(&panel, &up).unwrap() - log_likelihood(&panel, &down).unwrap())
                    / (2.0 * h);
                let a = grad[r][c];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                assert!(rel <= 1e-5, "point {point} [{r}][{c}]: analytic {a} vs fd {fd} (rel {rel:e})");
            }
        }
    }
}

#[test]
fn fit_recovers_synthetic_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5000);
    let truth = coefs(vec![vec![0.4, 0.9, -0.6], vec![-0.3, -0.5, 0.8]]);
    let panel = random_panel(&mut rng, 5000, &truth);
    let report = fmlm_fit(&panel, &FitOptions::default()).unwrap();
    assert!(report.converged, "gradient {}", report.gradient_norm);
    assert!(!report.warning());
    for (fitted, true_row) in report.coefficients.betas.iter().zip(&truth.betas) {
        for (f, t) in fitted.iter().zip(true_row) {
            assert!((f - t).abs() <= 0.05, "fitted {f} vs true {t}");
        }
    }
}

#[test]
fn shares_sum_to_one_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let wide = Normal::new(0.0, 5.0).unwrap();
    for _ in 0..1000 {
        let j = rng.random_range(2..8);
        let k = rng.random_range(1..6);
        let c = coefs((0..j - 1).map(|_| (0..k).map(|_| wide.sample(&mut rng)).collect()).collect());
        let x: Vec<f64> = (0..k).map(|_| wide.sample(&mut rng)).collect();
        let p = fmlm_predict(&c, &x).unwrap();
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn coefficient_csv_round_trip_is_exact() {
    let truth = coefs(vec![vec![0.25, -1.5], vec![1e-17, 3.0]]);
    let mut buf = Vec::new();
    truth.write_csv(&mut buf).unwrap();
    let back = FmlmCoefficients::read_csv(buf.as_slice(), &truth.crops).unwrap();
    assert_eq!(back, truth);
}

fn betas_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..6, 1usize..5).prop_flat_map(|(j, k)| {
        (
            proptest::collection::vec(proptest::collection::vec(-4.0f64..4.0, k), j - 1),
            proptest::collection::vec(-3.0f64..3.0, k),
        )
    })
}

proptest! {
    /// Changing which crop is the reference category only relabels shares.
    #[test]
    fn rebasing_leaves_shares_unchanged((betas, x) in betas_strategy(), pick in 0usize..8) {
        let j = betas.len() + 1;
        let k = x.len();
        let new_base = pick % j;
        let full: Vec<Vec<f64>> = std::iter::once(vec![0.0; k]).chain(betas.iter().cloned()).collect();
        let order: Vec<usize> = std::iter::once(new_base).chain((0..j).filter(|&c| c != new_base)).collect();
        let rebased: Vec<Vec<f64>> = order[1..]
            .iter()
            .map(|&c| full[c].iter().zip(&full[new_base]).map(|(a, b)| a - b).collect())
            .collect();
        let p = fmlm_predict(&coefs(betas), &x).unwrap();
        let q = fmlm_predict(&coefs(rebased), &x).unwrap();
        for (slot, &c) in order.iter().enumerate() {
            prop_assert!((q[slot] - p[c]).abs() <= 1e-12, "crop {c}: {} vs {}", q[slot], p[c]);
        }
    }

    /// Shares match a direct softmax evaluated after shifting every utility,
    /// base included, by an arbitrary common amount.
    #[test]
    fn common_utility_shift_is_invisible((betas, x) in betas_strategy(), shift in -30.0f64..30.0) {
        let p = fmlm_predict(&coefs(betas.clone()), &x).unwrap();
        let utilities: Vec<f64> = std::iter::once(0.0)
            .chain(betas.iter().map(|r| r.iter().zip(&x).map(|(b, v)| b * v).sum::<f64>()))
            .map(|u| u + shift)
            .collect();
        let total: f64 = utilities.iter().map(|u| u.exp()).sum();
        for (a, u) in p.iter().zip(&utilities) {
            let direct = u.exp() / total;
            prop_assert!((a - direct).abs() <= 1e-12, "{a} vs {direct}");
        }
    }

    /// Swapping two non-base crops swaps their predicted shares.
    #[test]
    fn permutation_equivariance((betas, x) in betas_strategy(), a in 0usize..8, b in 0usize..8) {
        let n = betas.len();
        let (a, b) = (a % n, b % n);
        let p = fmlm_predict(&coefs(betas.clone()), &x).unwrap();
        let mut swapped = betas;
        swapped.swap(a, b);
        let q = fmlm_predict(&coefs(swapped), &x).unwrap();
        let mut expect = p.clone();
        expect.swap(a + 1, b + 1);
        for (e, v) in expect.iter().zip(&q) {
            prop_assert!((e - v).abs() <= 1e-15);
        }
    }
}
