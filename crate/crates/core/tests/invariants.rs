//! Property tests for the cross-module invariants.

use guidelab::estimators::{categorical_kl, Kl, RunningStats};
use guidelab::logistic::LogisticModel;
use guidelab::sampler::{demo_cloud, oracle_fields, run_reverse, GuidedRun};
use guidelab::schedule::{kappa_bound, lambda_of, make_grid, sigma_sq_of, verify_grid};
use guidelab::{ConditionalModel, Error, LabeledPointCloud};
use proptest::prelude::*;

fn pmf(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

/// Random cloud in the plane: 2–5 points inside the unit disc, 2 labels.
fn cloud() -> impl Strategy<Value = LabeledPointCloud> {
    (2usize..=5)
        .prop_flat_map(|k| {
            (
                prop::collection::vec((0.0f64..1.0, 0.0f64..std::f64::consts::TAU), k),
                prop::collection::vec(0usize..2, k),
                pmf(k),
            )
        })
        .prop_map(|(polar, mut labels, weights)| {
            labels[0] = 0;
            labels[1] = 1;
            let points = polar.iter().map(|(r, a)| vec![r * a.cos(), r * a.sin()]).collect();
            LabeledPointCloud::with_radius(points, labels, weights, 1.0).unwrap()
        })
}

proptest! {
    #[test]
    fn variance_preserving(t in 0.0f64..50.0) {
        let l = lambda_of(t).unwrap();
        prop_assert!((l * l + sigma_sq_of(t).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn grid_round_trip(horizon in 1.0f64..12.0, delta in 1e-3f64..0.5, extra in 0usize..300) {
        let steps = match make_grid(horizon, delta, 1) {
            Ok(g) => g.steps(),
            Err(Error::InfeasibleGrid { min_steps, .. }) => min_steps,
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        } + extra;
        let grid = make_grid(horizon, delta, steps).unwrap();
        prop_assert_eq!(grid.steps(), steps);
        let check = verify_grid(&grid, kappa_bound(horizon, delta, steps));
        prop_assert!(check.ok, "{:?}", check.first_violation);
        prop_assert!((grid.forward_time(0) - horizon).abs() < 1e-12);
        prop_assert!((grid.forward_time(steps) - delta).abs() < 1e-12);
    }

    #[test]
    fn kl_nonnegative_zero_iff_equal(p in pmf(4), q in pmf(4)) {
        let kl = categorical_kl(&p, &q).finite().unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert_eq!(categorical_kl(&p, &p), Kl::Finite(0.0));
        if p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-6) {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn stats_merge_is_order_free(xs in prop::collection::vec(-1e3f64..1e3, 2..60), cut in 0usize..60) {
        let cut = cut.min(xs.len());
        let mut whole = RunningStats::new();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut a, mut b) = (RunningStats::new(), RunningStats::new());
        xs[..cut].iter().for_each(|&x| a.push(x));
        xs[cut..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        prop_assert_eq!(a.count(), whole.count());
        prop_assert!((a.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
        prop_assert!((a.variance() - whole.variance()).abs() <= 1e-8 * (1.0 + whole.variance()));
    }

    #[test]
    fn cloud_identities_and_bounds(
        cloud in cloud(),
        t in 0.02f64..4.0,
        x in prop::collection::vec(-3.0f64..3.0, 2),
        y in 0usize..2,
    ) {
        let post = cloud.posterior(t, &x).unwrap();
        let score = cloud.score(t, &x).unwrap();
        let guidance = cloud.guidance(t, &x, y).unwrap();
        let conditional = cloud.conditional_score(t, &x, y).unwrap();
        let scale = 1.0 + score.iter().chain(&guidance).fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..2 {
            prop_assert!((conditional[i] - score[i] - guidance[i]).abs() <= 1e-10 * scale);
        }
        let norm = guidance.iter().map(|g| g * g).sum::<f64>().sqrt();
        let r = cloud.radius();
        prop_assert!(norm <= post.guidance_norm_bound(r) * (1.0 + 1e-12));
        prop_assert!(post.hessian_trace(y).abs() <= post.hessian_trace_bound(r) * (1.0 + 1e-12));
        let total: f64 = post.label_pmf.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_label_gradients_differ_by_beta(
        beta in prop::collection::vec(-3.0f64..3.0, 3),
        x in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let model = LogisticModel::new(beta.clone()).unwrap();
        let g1 = model.log_grad(&x, 1);
        let g0 = model.log_grad(&x, 0);
        for i in 0..3 {
            prop_assert!((g1[i] - g0[i] - beta[i]).abs() <= 1e-12 * (1.0 + beta[i].abs()));
        }
        prop_assert!((model.prob(&x, 0) + model.prob(&x, 1) - 1.0).abs() < 1e-15);
    }
}

#[test]
fn guided_runs_are_bit_identical() {
    let cloud = demo_cloud();
    let (score, guidance) = oracle_fields(&cloud, 1);
    let run = GuidedRun::new(make_grid(4.0, 0.05, 60).unwrap(), 1.0, 99, 500, 2).unwrap();
    let a = run_reverse(&run, &score, &guidance).unwrap();
    let b = run_reverse(&run, &score, &guidance).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.as_flat()), bits(b.as_flat()));
    assert_eq!(a.meta().grid_hash, b.meta().grid_hash);
    assert!(a.as_flat().iter().all(|v| v.is_finite()));
}
