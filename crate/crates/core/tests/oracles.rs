//! Checks against independent implementations: statrs for the t and beta
//! distributions, and straight-line brute force for plan search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ContinuousCDF, StudentsT};

use swphm_core::model::{EnvironmentSpec, Kind, Severity, Sign, StoryPoints};
use swphm_core::plan::{best_plan, evaluate_plan, PlanSpec, Strategy};
use swphm_core::prognosis::RtThreshold;
use swphm_core::regress::{ols_fit, RegressionModel};
use swphm_core::stats::{regularized_incomplete_beta, student_t_two_sided_p};
use swphm_core::weighting::{ImpactTable, WeightedItem};
use swphm_core::Error;

#[test]
fn t_p_values_match_statrs() {
    for df in [1.0, 2.0, 3.0, 5.0, 8.0, 13.0, 30.0, 120.0] {
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        for t in [0.0, 0.1, 0.5, 1.0, 1.96, 2.5, 4.0, 10.0, -3.0] {
            let expected = 2.0 * (1.0 - dist.cdf(f64::abs(t)));
            let got = student_t_two_sided_p(t, df);
            assert!(
                (got - expected).abs() < 1e-10,
                "df={df} t={t}: {got} vs {expected}"
            );
        }
    }
}

#[test]
fn incomplete_beta_matches_statrs() {
    for (a, b) in [
        (0.5, 0.5),
        (1.0, 3.0),
        (2.5, 7.0),
        (10.0, 0.5),
        (40.0, 60.0),
    ] {
        let dist = Beta::new(a, b).unwrap();
        for x in [0.0, 0.01, 0.2, 0.5, 0.77, 0.99, 1.0] {
            let got = regularized_incomplete_beta(x, a, b);
            assert!((got - dist.cdf(x)).abs() < 1e-10, "a={a} b={b} x={x}");
        }
    }
}

#[test]
fn regression_p_value_matches_statrs_on_noisy_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let n = rng.random_range(4..20);
        let xs: Vec<f64> = (0..n).map(|i| i as f64 + rng.random::<f64>()).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 3.0 + 0.2 * x + rng.random_range(-5.0..5.0))
            .collect();
        let m = ols_fit(&xs, &ys).unwrap();
        // t statistic from its textbook definition
        let mx = xs.iter().sum::<f64>() / n as f64;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sse: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - m.intercept - m.slope * x).powi(2))
            .sum();
        let se = (sse / (n as f64 - 2.0) / sxx).sqrt();
        let t = m.slope / se;
        let dist = StudentsT::new(0.0, 1.0, n as f64 - 2.0).unwrap();
        let expected = 2.0 * (1.0 - dist.cdf(t.abs()));
        assert!((m.slope_p_value - expected).abs() < 1e-9);
    }
}

fn model(intercept: f64, slope: f64) -> RegressionModel {
    RegressionModel {
        slope,
        intercept,
        n: 10,
        r_squared: 1.0,
        adj_r_squared: 1.0,
        slope_p_value: 0.0,
        residual_std: 0.0,
        cluster_id: None,
    }
}

fn random_item(rng: &mut ChaCha8Rng, id: usize) -> WeightedItem {
    let sp = StoryPoints::SCALE[rng.random_range(0..5)];
    let sev = Severity::ALL[rng.random_range(0..4)];
    let sign = if rng.random_bool(0.2) {
        Sign::Negative
    } else {
        Sign::Positive
    };
    WeightedItem::new(
        format!("I{id}"),
        Kind::Fault,
        sev,
        StoryPoints::new(sp as i64).unwrap(),
        &ImpactTable::default(),
        sign,
    )
}

/// Scores one allocation straight from the definition: RT of release `k` is
/// the line evaluated at the running cumulative weight; RUL counts the
/// leading releases below the threshold.
fn brute_score(
    weights: &[f64],
    alloc: &[usize],
    h: usize,
    m: &RegressionModel,
    cpv0: f64,
    thr: f64,
) -> (usize, f64) {
    let mut pv = vec![0.0; h];
    for (w, r) in weights.iter().zip(alloc) {
        pv[*r] += w;
    }
    let mut cpv = cpv0;
    let mut rts = Vec::new();
    for p in pv {
        cpv += p;
        rts.push(m.intercept + m.slope * cpv);
    }
    let rul = rts.iter().take_while(|v| **v < thr).count();
    (rul, *rts.last().unwrap())
}

fn all_allocations(n: usize, h: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|a| {
                (0..h).map(move |r| {
                    let mut b = a.clone();
                    b.push(r);
                    b
                })
            })
            .collect();
    }
    out
}

#[test]
fn exhaustive_search_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..40 {
        let n = rng.random_range(1..=5);
        let h = rng.random_range(1..=4);
        let items: Vec<WeightedItem> = (0..n).map(|i| random_item(&mut rng, i)).collect();
        let weights: Vec<f64> = items.iter().map(|i| i.weight).collect();
        let m = model(
            rng.random_range(1000.0..3000.0),
            rng.random_range(10.0..300.0),
        );
        let cpv0 = rng.random_range(0.0..30.0);
        let thr = rng.random_range(2000.0..9000.0);
        let spec = PlanSpec::new(items, h, EnvironmentSpec::reference());
        let best = best_plan(&spec, &m, cpv0, RtThreshold::from_ms(thr).unwrap()).unwrap();

        let mut oracle: Option<((usize, f64), Vec<usize>)> = None;
        for alloc in all_allocations(n, h) {
            let s = brute_score(&weights, &alloc, h, &m, cpv0, thr);
            let better = match &oracle {
                None => true,
                Some((b, _)) => s.0 > b.0 || (s.0 == b.0 && s.1 < b.1 - 1e-9),
            };
            if better {
                oracle = Some((s, alloc));
            }
        }
        let ((rul, rt), _) = oracle.unwrap();
        assert_eq!(best.rul.rul_releases, rul);
        assert!((best.final_rt_ms - rt).abs() < 1e-6);
        // the winner dominates every allocation
        for alloc in all_allocations(n, h) {
            let r =
                evaluate_plan(&alloc, &spec, &m, cpv0, RtThreshold::from_ms(thr).unwrap()).unwrap();
            assert!(r.rul.rul_releases <= best.rul.rul_releases);
        }
    }
}

#[test]
fn best_plan_is_invariant_to_item_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.random_range(2..=5);
        let items: Vec<WeightedItem> = (0..n).map(|i| random_item(&mut rng, i)).collect();
        let mut reversed = items.clone();
        reversed.reverse();
        let m = model(2000.0, 150.0);
        let thr = RtThreshold::from_ms(5000.0).unwrap();
        let a = best_plan(
            &PlanSpec::new(items, 3, EnvironmentSpec::reference()),
            &m,
            4.0,
            thr,
        )
        .unwrap();
        let b = best_plan(
            &PlanSpec::new(reversed, 3, EnvironmentSpec::reference()),
            &m,
            4.0,
            thr,
        )
        .unwrap();
        assert_eq!(a.rank_values().0, b.rank_values().0);
        assert!((a.final_rt_ms - b.final_rt_ms).abs() < 1e-9);
    }
}

#[test]
fn greedy_never_beats_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let n = rng.random_range(1..=6);
        let items: Vec<WeightedItem> = (0..n).map(|i| random_item(&mut rng, i)).collect();
        let m = model(1500.0, rng.random_range(50.0..250.0));
        let thr = RtThreshold::from_ms(rng.random_range(2000.0..6000.0)).unwrap();
        let mut spec = PlanSpec::new(items, 3, EnvironmentSpec::reference());
        let ex = best_plan(&spec, &m, 2.0, thr).unwrap();
        spec.strategy = Strategy::Greedy;
        let gr = best_plan(&spec, &m, 2.0, thr).unwrap();
        assert!(gr.rul.rul_releases <= ex.rul.rul_releases);
    }
}

#[test]
fn enumeration_cap_is_enforced() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let items: Vec<WeightedItem> = (0..12).map(|i| random_item(&mut rng, i)).collect();
    let spec = PlanSpec::new(items, 4, EnvironmentSpec::reference());
    let err = best_plan(&spec, &model(1.0, 1.0), 0.0, RtThreshold::default()).unwrap_err();
    assert!(matches!(err, Error::EnumerationCap { .. }));
    assert_eq!(err.code(), "ENUMERATION_CAP");
}
