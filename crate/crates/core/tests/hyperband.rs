use std::collections::{BTreeMap, BTreeSet};

use mvc_core::hyperband::{
    bracket_schedule, hyperband_search, sample_config, HyperConfig, SearchSpace,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Schedule = Vec<(usize, usize, Vec<(usize, usize)>)>;

/// The published algorithm written with floating point logs and powers.
fn reference_schedule(r_max: f64, eta: f64) -> Schedule {
    let s_max = ((r_max.ln() / eta.ln()) + 1e-9).floor() as i32;
    let b = (s_max as f64 + 1.0) * r_max;
    (0..=s_max)
        .rev()
        .map(|s| {
            let n = (b / r_max * eta.powi(s) / (s as f64 + 1.0)).ceil() as usize;
            let r = r_max * eta.powi(-s);
            let rungs = (0..=s)
                .map(|i| {
                    let n_i = (n as f64 * eta.powi(-i)).floor() as usize;
                    let r_i = (r * eta.powi(i)).round() as usize;
                    (n_i, r_i)
                })
                .collect();
            (n, r.round() as usize, rungs)
        })
        .collect()
}

fn score(c: &HyperConfig, epochs: usize) -> f64 {
    // Deterministic, config dependent and occasionally tied.
    let h = c.kernels[0] * 31 + c.filters * 7 + (c.lambda * 1e4) as usize + epochs;
    (h % 13) as f64 / 13.0
}

#[test]
fn schedule_matches_reference_algorithm() {
    for (r, eta) in [(27, 3), (81, 3), (9, 3), (16, 2), (1, 3), (3, 3)] {
        let ours = bracket_schedule(r, eta).unwrap();
        let reference = reference_schedule(r as f64, eta as f64);
        assert_eq!(ours.len(), reference.len(), "R={r} eta={eta}");
        for (b, (n, r0, rungs)) in ours.iter().zip(&reference) {
            assert_eq!((b.n, b.r), (*n, *r0));
            let got: Vec<(usize, usize)> = b.rungs.iter().map(|x| (x.configs, x.epochs)).collect();
            assert_eq!(&got, rungs);
            for w in b.rungs.windows(2) {
                assert_eq!(w[0].survivors, w[0].configs / eta);
                assert_eq!(w[1].configs, w[0].survivors);
            }
            assert!(b.total_epochs() <= (ours.len()) * r);
            assert!(b.rungs.iter().all(|x| x.epochs <= r));
        }
    }
}

#[test]
fn survivors_are_top_scores_with_earlier_ties() {
    let space = SearchSpace::default();
    let result = hyperband_search(&space, 27, 3, 11, |c, e| Ok(score(c, e))).unwrap();
    let mut by_rung: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for t in &result.trials {
        assert!(t.epochs <= 27);
        by_rung
            .entry((t.bracket, t.rung))
            .or_default()
            .push((t.trial, t.dev_micro_f1));
    }
    for b in &result.schedule {
        for (i, rung) in b.rungs.iter().enumerate() {
            let here = &by_rung[&(b.s, i)];
            assert_eq!(here.len(), rung.configs);
            if i + 1 < b.rungs.len() {
                let mut sorted = here.clone();
                sorted.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
                let expect: BTreeSet<usize> =
                    sorted.iter().take(rung.configs / 3).map(|x| x.0).collect();
                let next: BTreeSet<usize> = by_rung[&(b.s, i + 1)].iter().map(|x| x.0).collect();
                assert_eq!(next, expect);
            }
        }
    }
    let max = result
        .trials
        .iter()
        .map(|t| t.dev_micro_f1)
        .fold(f64::MIN, f64::max);
    assert_eq!(result.best_dev_micro_f1, max);
    let total: usize = result.schedule.iter().map(|b| b.total_epochs()).sum();
    assert_eq!(total, result.trials.iter().map(|t| t.epochs).sum::<usize>());
}

#[test]
fn trial_log_is_reproducible() {
    let space = SearchSpace::default();
    let a = hyperband_search(&space, 27, 3, 5, |c, e| Ok(score(c, e))).unwrap();
    let b = hyperband_search(&space, 27, 3, 5, |c, e| Ok(score(c, e))).unwrap();
    assert_eq!(a.trials_jsonl(), b.trials_jsonl());
    let first = a.trials_jsonl().lines().next().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    for key in [
        "bracket",
        "rung",
        "trial",
        "config",
        "epochs",
        "dev_micro_f1",
    ] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn samples_cover_the_space() {
    let space = SearchSpace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lambdas = BTreeSet::new();
    for _ in 0..1000 {
        let c = sample_config(&space, &mut rng);
        let s0 = c.kernels[0];
        assert!((2..=8).contains(&s0));
        assert_eq!(c.kernels, [s0, s0 + 2, s0 + 4, s0 + 6]);
        assert!((30..=100).contains(&c.filters));
        lambdas.insert(c.lambda.to_bits());
    }
    assert_eq!(lambdas.len(), space.lambdas.len());
    let mut r1 = ChaCha8Rng::seed_from_u64(9);
    let mut r2 = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        assert_eq!(
            sample_config(&space, &mut r1),
            sample_config(&space, &mut r2)
        );
    }
}
