use proptest::prelude::*;

use ksib::harness::{aggregate, Scenario};
use ksib::index::{ipw_weight, IndexAccumulator};
use ksib::index_inference::{align_sign, infer_direction, WeightedRow};
use ksib::kernel_ridge::{GaussianKernel, Gram, KrrModel, SupportPoint};
use ksib::log::{read_log, write_log};
use ksib::np_inference::build_covariance;
use ksib::numerics::{chi2_cdf, chi2_quantile, min_eigenvalue, Rng};
use ksib::policy::{arm_propensity, EpsilonSchedule, RoundRecord};

/// Rows and their estimator Gram for a random weighted design.
fn design(seed: u64, d: usize, n: usize) -> (Vec<WeightedRow>, Vec<f64>, ksib::numerics::SymMatrix) {
    let mut rng = Rng::new(seed);
    let beta = rng.normal_vec(d);
    let mut acc = IndexAccumulator::new(0, d);
    let mut rows = Vec::new();
    for _ in 0..n {
        let w = rng.normal_vec(d);
        let z: f64 = w.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let y = z.tanh() + 0.3 * rng.normal();
        let p = 0.05 + 0.95 * rng.uniform();
        acc.observe(&w, y, p, true, 1e-3).unwrap();
        rows.push(WeightedRow {
            w,
            y,
            weight: ipw_weight(p, 1e-3),
        });
    }
    let est = acc.estimate_beta(2e-3).unwrap();
    (rows, est.beta_hat, est.gram)
}

fn kernel_support(seed: u64, n: usize) -> Vec<SupportPoint> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| SupportPoint {
            u: 2.0 * rng.normal(),
            y: rng.normal(),
            w: 1.0 + 9.0 * rng.uniform(),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn directional_covariance_annihilates_the_direction(seed in any::<u64>(), d in 2usize..7, n in 15usize..80) {
        let (rows, beta, gram) = design(seed, d, n);
        let rep = infer_direction(&rows, &beta, &gram, n, 0.5, 0.05).unwrap();
        let q = rep.v_dir.quad_form(&rep.direction);
        prop_assert!(q.abs() <= 1e-12 * rep.v_dir.trace().max(f64::MIN_POSITIVE), "{q:e}");
        prop_assert!(min_eigenvalue(&rep.v_beta_hat) >= -1e-10);
    }

    #[test]
    fn ellipsoid_decision_ignores_alpha(seed in any::<u64>(), d in 2usize..6, n in 20usize..60, jitter in 0.0f64..0.5) {
        let (rows, beta, gram) = design(seed, d, n);
        let a = infer_direction(&rows, &beta, &gram, n, 0.25, 0.05).unwrap();
        let b = infer_direction(&rows, &beta, &gram, n, 0.5, 0.05).unwrap();
        let mut rng = Rng::new(seed ^ 1);
        let mut u: Vec<f64> = a.direction.iter().map(|c| c + jitter * rng.normal()).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        let u = align_sign(&u, &a.direction);
        let (da, db) = (a.studentized_distance(&u), b.studentized_distance(&u));
        prop_assert!((da - db).abs() <= 1e-8 * (1.0 + da.abs()) || (da.is_infinite() && db.is_infinite()));
        prop_assert_eq!(a.contains(&u), b.contains(&u));
    }

    #[test]
    fn center_is_inside_its_ellipsoid(seed in any::<u64>(), d in 2usize..6) {
        let (rows, beta, gram) = design(seed, d, 40);
        let rep = infer_direction(&rows, &beta, &gram, 40, 0.5, 0.05).unwrap();
        prop_assert_eq!(rep.studentized_distance(&rep.direction), 0.0);
    }

    #[test]
    fn d2_is_nonnegative(seed in any::<u64>(), n in 2usize..40, h in 0.2f64..3.0, probe in -4.0f64..4.0) {
        let pts = kernel_support(seed, n);
        let lambda = 0.05;
        let (model, gram) = KrrModel::fit_keep_gram(&pts, lambda, GaussianKernel::new(h).unwrap(), n).unwrap();
        let cov = build_covariance(&model, Some(&gram), 0.5, lambda, 0).unwrap();
        prop_assert!(cov.d2(probe) >= -1e-12);
        prop_assert!(min_eigenvalue(&cov.core_matrix()) >= -1e-10 * (1.0 + cov.core_matrix().trace()));
    }

    #[test]
    fn gram_growth_matches_batch(seed in any::<u64>(), n in 1usize..30, h in 0.2f64..2.0) {
        let kernel = GaussianKernel::new(h).unwrap();
        let us: Vec<f64> = kernel_support(seed, n).iter().map(|p| p.u).collect();
        let mut g = Gram::new(&kernel, &us[..1]);
        for i in 1..n {
            g.push(&kernel, &us[..i], us[i]);
        }
        prop_assert_eq!(g.to_dense(), Gram::new(&kernel, &us).to_dense());
    }

    #[test]
    fn krr_interpolates_as_ridge_vanishes(seed in any::<u64>(), n in 2usize..8) {
        let mut pts = kernel_support(seed, n);
        // well separated abscissae keep the gram well conditioned
        for (i, p) in pts.iter_mut().enumerate() {
            p.u = 3.0 * i as f64;
        }
        let model = KrrModel::fit(&pts, 1e-12, GaussianKernel::new(1.0).unwrap()).unwrap();
        for p in &pts {
            prop_assert!((model.predict(p.u) - p.y).abs() < 1e-6);
        }
    }

    #[test]
    fn propensities_form_a_distribution(eps in 0.0f64..=1.0, arms in 2usize..6, greedy_seed in any::<u64>()) {
        let greedy = (greedy_seed % arms as u64) as usize;
        let total: f64 = (0..arms).map(|a| arm_propensity(a, greedy, eps, arms)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(arm_propensity(greedy, greedy, eps, arms) >= 1.0 - eps);
    }

    #[test]
    fn epsilon_stays_in_bounds(t in 1usize..1_000_000) {
        let s = EpsilonSchedule::default();
        let e = s.epsilon(t);
        prop_assert!(e >= s.floor && e <= s.cap, "{e}");
    }

    #[test]
    fn ipw_weight_is_clipped(p in 1e-9f64..=1.0, p_min in 1e-4f64..0.5) {
        let w = ipw_weight(p, p_min);
        prop_assert!(w >= 1.0 && w <= 1.0 / p_min + 1e-12);
    }

    #[test]
    fn chi_square_round_trip(p in 0.001f64..0.999, dof in 1u32..30) {
        let x = chi2_quantile(p, dof).unwrap();
        prop_assert!((chi2_cdf(x, dof) - p).abs() < 1e-10);
    }

    #[test]
    fn split_streams_are_reproducible(seed in any::<u64>(), key in any::<u64>()) {
        let root = Rng::new(seed);
        let mut drained = root.clone();
        for _ in 0..17 {
            drained.uniform();
        }
        let (mut a, mut b) = (root.split(key), drained.split(key));
        for _ in 0..8 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn log_round_trips(seed in any::<u64>(), n in 1usize..20, d in 1usize..5) {
        let mut rng = Rng::new(seed);
        let recs: Vec<RoundRecord> = (0..n)
            .map(|i| RoundRecord {
                t: i + 1,
                x: rng.normal_vec(d),
                greedy_arm: rng.below(2),
                pulled_arm: rng.below(2),
                propensity: 0.01 + 0.99 * rng.uniform(),
                reward: rng.normal() * 1e3,
                epsilon: rng.uniform(),
            })
            .collect();
        let mut buf = Vec::new();
        write_log(&mut buf, &recs).unwrap();
        prop_assert_eq!(read_log(buf.as_slice()).unwrap(), recs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn rates_are_probabilities(seed in 0u64..1000) {
        let sc = Scenario {
            horizon: 150,
            warm_start: 20,
            reps: 3,
            inference_times: vec![60, 120],
            ..Scenario::new(2, 0.2)
        };
        let recs = ksib::harness::run_scenario(&sc, seed, 1, false).unwrap();
        let table = aggregate(&sc.id(), 2, 0.2, &recs).unwrap();
        for c in &table.coverage {
            prop_assert!((0.0..=1.0).contains(&c.rate));
            prop_assert!((c.se - (c.rate * (1.0 - c.rate) / c.n as f64).sqrt()).abs() < 1e-15);
        }
    }
}
