//! Each metric against a brute-force reimplementation on random matrices.

use mvc_core::metrics::{
    macro_f1, micro_f1, pr_auc, precision_at_n, MetricsReport, PredictionMatrix, ReportOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: usize = 200;
const GRID: usize = 10_001;

struct Case {
    scores: Vec<Vec<f64>>,
    gold: Vec<Vec<bool>>,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let docs = rng.gen_range(1..=20);
    let labels = rng.gen_range(1..=30);
    let density = rng.gen_range(0.05..0.6);
    // Coarse scores produce many ties; fine ones sit on a 1/2000 lattice so the
    // threshold grid can separate every distinct value.
    let coarse = rng.gen_bool(0.3);
    let mut scores = vec![vec![0.0; labels]; docs];
    let mut gold = vec![vec![false; labels]; docs];
    for d in 0..docs {
        for j in 0..labels {
            scores[d][j] = if coarse {
                [0.0, 0.2, 0.5, 0.7, 1.0][rng.gen_range(0..5)]
            } else {
                rng.gen_range(0..=2000) as f64 / 2000.0
            };
            gold[d][j] = rng.gen_bool(density);
        }
    }
    Case { scores, gold }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn counts(c: &Case, labels: &[usize]) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for d in 0..c.scores.len() {
        for &j in labels {
            let p = c.scores[d][j] > 0.5;
            let g = c.gold[d][j];
            tp += (p && g) as usize;
            fp += (p && !g) as usize;
            fn_ += (!p && g) as usize;
        }
    }
    (tp, fp, fn_)
}

fn oracle_p_at(c: &Case, n: usize) -> f64 {
    let mut total = 0.0;
    for (row, gold) in c.scores.iter().zip(&c.gold) {
        let mut hits = 0;
        for j in 0..row.len() {
            let rank = (0..row.len())
                .filter(|&k| row[k] > row[j] || (row[k] == row[j] && k < j))
                .count();
            if rank < n && gold[j] {
                hits += 1;
            }
        }
        total += hits as f64 / n as f64;
    }
    total / c.scores.len() as f64
}

fn oracle_pr_auc(c: &Case) -> f64 {
    let cells: Vec<(f64, bool)> = c
        .scores
        .iter()
        .zip(&c.gold)
        .flat_map(|(s, g)| s.iter().copied().zip(g.iter().copied()))
        .collect();
    let positives = cells.iter().filter(|x| x.1).count() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for i in (0..GRID).rev() {
        let t = i as f64 / (GRID - 1) as f64;
        let tp = cells.iter().filter(|x| x.0 > t && x.1).count() as f64;
        let fp = cells.iter().filter(|x| x.0 > t && !x.1).count() as f64;
        let recall = tp / positives;
        if recall > prev_recall {
            area += (recall - prev_recall) * tp / (tp + fp);
            prev_recall = recall;
        }
    }
    area
}

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked_pr = 0;
    for case_no in 0..CASES {
        let c = random_case(&mut rng);
        let m = PredictionMatrix::from_rows(&c.scores, &c.gold).unwrap();
        let n_labels = c.scores[0].len();
        let all: Vec<usize> = (0..n_labels).collect();

        let (tp, fp, fn_) = counts(&c, &all);
        let micro = micro_f1(&m, &all).unwrap();
        assert!(
            (micro - f1(tp, fp, fn_)).abs() <= 1e-12,
            "case {case_no}: micro {micro}"
        );

        let supported: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&j| c.gold.iter().any(|g| g[j]))
            .collect();
        if !supported.is_empty() {
            let expect = supported
                .iter()
                .map(|&j| {
                    let (tp, fp, fn_) = counts(&c, &[j]);
                    f1(tp, fp, fn_)
                })
                .sum::<f64>()
                / supported.len() as f64;
            let got = macro_f1(&m, &supported).unwrap();
            assert!(
                (got - expect).abs() <= 1e-12,
                "case {case_no}: macro {got} vs {expect}"
            );
        }

        for n in [1, 5, 8, n_labels] {
            if n <= n_labels {
                let got = precision_at_n(&m, n).unwrap();
                let expect = oracle_p_at(&c, n);
                assert!(
                    (got - expect).abs() <= 1e-12,
                    "case {case_no}: P@{n} {got} vs {expect}"
                );
            }
        }

        if c.gold.iter().flatten().any(|&g| g) {
            let got = pr_auc(&m).unwrap();
            let expect = oracle_pr_auc(&c);
            assert!(
                (got - expect).abs() <= 1e-3,
                "case {case_no}: PR AUC {got} vs {expect}"
            );
            checked_pr += 1;
        } else {
            assert!(pr_auc(&m).is_err());
        }

        let opts = ReportOptions {
            p_at: vec![1],
            macro_subset: Some(all.clone()),
            ..Default::default()
        };
        let report = MetricsReport::compute(&m, &opts).unwrap();
        assert_eq!(report.micro_f1, micro);
        assert_eq!(report.macro_labels, supported.len());
    }
    assert!(checked_pr > CASES / 2);
}
