use atcn::evaluation::{evaluate_predictions, point_adjust, segments_from_labels};
use atcn::thresholds::{
    apply_threshold, best_f1_threshold, epsilon_threshold, gpd_log_likelihood, pot_threshold, Diagnostics, GpdSearch,
    PotConfig, ThresholdResult,
};
use proptest::prelude::*;
use std::path::Path;

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..120).prop_flat_map(|n| {
        (
            prop::collection::vec((0u32..50).prop_map(|v| v as f64 / 10.0), n),
            prop::collection::vec(prop::bool::weighted(0.3), n),
        )
    })
}

proptest! {
    #[test]
    fn grid_equals_exhaustive_search((scores, labels) in scored_labels()) {
        let r = best_f1_threshold(&scores, &labels).unwrap();
        let Diagnostics::Grid { f1, counts } = r.diagnostics else { unreachable!() };
        let mut candidates = scores.clone();
        candidates.push(f64::INFINITY);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &th in &candidates {
            let c = evaluate_predictions(&apply_threshold(&scores, th), &labels).unwrap();
            if c.f1() > best.1 || (c.f1() == best.1 && th > best.0) {
                best = (th, c.f1());
            }
        }
        prop_assert_eq!(f1, best.1);
        prop_assert_eq!(r.threshold, best.0);
        prop_assert_eq!(counts, evaluate_predictions(&apply_threshold(&scores, r.threshold), &labels).unwrap());
    }

    #[test]
    fn point_adjust_only_adds_inside_segments(labels in prop::collection::vec(any::<bool>(), 1..80), seed in any::<u64>()) {
        let pred: Vec<bool> = (0..labels.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let segs = segments_from_labels(&labels);
        let adjusted = point_adjust(&pred, &segs).unwrap();
        for t in 0..labels.len() {
            if pred[t] { prop_assert!(adjusted[t]); }
            if adjusted[t] && !pred[t] { prop_assert!(labels[t]); }
        }
        prop_assert_eq!(point_adjust(&adjusted, &segs).unwrap(), adjusted.clone());
    }

    #[test]
    fn epsilon_threshold_is_a_grid_point_or_fallback(scores in prop::collection::vec(0.0f64..10.0, 2..200)) {
        let grid = [1.0, 2.0, 3.0];
        let r = epsilon_threshold(&scores, &grid).unwrap();
        let Diagnostics::Epsilon { z, degenerate } = r.diagnostics else { unreachable!() };
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match z {
            Some(z) => {
                prop_assert!(grid.contains(&z));
                prop_assert!(scores.iter().any(|&s| s > r.threshold));
            }
            None => prop_assert!(degenerate || r.threshold == max),
        }
    }
}

fn gpd_sample(gamma: f64, beta: f64, n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            beta / gamma * ((1.0 - u).powf(-gamma) - 1.0)
        })
        .collect()
}

#[test]
fn gpd_fit_is_at_least_as_good_as_every_grid_point() {
    let excesses = gpd_sample(0.3, 2.0, 800, 1);
    let search = GpdSearch::for_excesses(&excesses);
    let (g, b, ll) = search.fit(&excesses).unwrap();
    assert!(b > 0.0);
    assert_eq!(ll, gpd_log_likelihood(&excesses, g, b));
    for (gg, bb) in search.grid() {
        assert!(ll >= gpd_log_likelihood(&excesses, gg, bb));
    }
}

#[test]
fn pot_threshold_rises_as_q_falls() {
    let scores = gpd_sample(0.2, 1.0, 5000, 2);
    let at = |q: f64| pot_threshold(&scores, PotConfig { q, ..PotConfig::default() }).unwrap().threshold;
    let (loose, tight) = (at(1e-2), at(1e-4));
    assert!(tight > at(1e-3) && at(1e-3) > loose, "{loose} {tight}");
    let Diagnostics::Pot(fit) = pot_threshold(&scores, PotConfig::default()).unwrap().diagnostics else { unreachable!() };
    assert_eq!(fit.exceedances, 100);
    assert!(fit.beta > 0.0);
}

#[test]
fn threshold_result_csv_round_trip() {
    let r = best_f1_threshold(&[0.1, 0.9, 0.2, 0.8], &[false, true, false, true]).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("method,threshold,best_f1"));
    assert_eq!(ThresholdResult::read_threshold(&buf[..], Path::new("mem")).unwrap(), r.threshold);
}
