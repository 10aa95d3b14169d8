//! Invariants of the numerical components, checked on generated inputs.

mod common;

use std::collections::BTreeSet;

use common::{planted_label_matrix, planted_selection_data};
use lrn_core::concordance::bootstrap_p;
use lrn_core::discriminative::classifier::{gradient, objective};
use lrn_core::discriminative::{select_features, SelectionConfig, SparseVector};
use lrn_core::label_model::{fit, majority_vote, posterior, posteriors, LabelMatrix, LabelModelConfig, LabelModelParams};
use lrn_core::types::{Label, Pmid};
use lrn_core::xai::{bh_adjust, chi_square, cramers_v, ContingencyTable2x2};
use proptest::prelude::*;

fn matrix_strategy() -> impl Strategy<Value = LabelMatrix> {
    (1usize..6, 2usize..40).prop_flat_map(|(rules, rows)| {
        proptest::collection::vec(proptest::collection::vec(-1i8..=1, rules), rows).prop_filter_map(
            "needs a vote",
            move |votes| {
                votes.iter().flatten().any(|&v| v != 0).then(|| LabelMatrix {
                    record_ids: (1..=votes.len()).map(|i| Pmid::new(i.to_string()).unwrap()).collect(),
                    rule_ids: (1..=rules as u32).collect(),
                    votes,
                })
            },
        )
    })
}

#[test]
fn label_model_recovers_planted_parameters() {
    let acc = [0.9, 0.8, 0.8, 0.7, 0.6];
    let (m, _) = planted_label_matrix(42, 1000, 0.6, &acc, &[1.0; 5]);
    let p = fit(&m, &LabelModelConfig::default()).unwrap();
    for (j, (&want, &got)) in acc.iter().zip(&p.accuracies).enumerate() {
        assert!((want - got).abs() <= 0.05, "rule {j}: planted {want}, fitted {got}");
    }
    assert!((p.class_prior - 0.6).abs() <= 0.05, "prior {}", p.class_prior);
}

#[test]
fn feature_selection_finds_planted_features() {
    let informative: BTreeSet<u32> = [0, 1, 2].into();
    let mut hits = 0;
    for seed in 0..20 {
        let (v, y) = planted_selection_data(seed, 200, 50);
        let cfg = SelectionConfig {
            budget: 8,
            seed,
            ..SelectionConfig::default()
        };
        let r = select_features(&v, &y, &cfg).unwrap();
        let chosen: BTreeSet<u32> = r.features.iter().copied().collect();
        if chosen.is_superset(&informative) {
            hits += 1;
        }
        if seed == 0 {
            assert_eq!(select_features(&v, &y, &cfg).unwrap(), r, "same seed, same subset");
        }
    }
    assert!(hits >= 19, "planted features found in {hits}/20 runs");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn em_log_likelihood_never_decreases(m in matrix_strategy(), init in 0.55f64..0.9) {
        let cfg = LabelModelConfig { init_accuracy: init, ..LabelModelConfig::default() };
        let p = fit(&m, &cfg).unwrap();
        for w in p.log_likelihood.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        prop_assert!(p.class_prior > 0.0 && p.class_prior < 1.0);
        prop_assert!(p.accuracies.iter().all(|a| (0.05..=0.95).contains(a)));
        prop_assert_eq!(fit(&m, &cfg).unwrap(), p);
    }

    #[test]
    fn permuting_rules_permutes_accuracies(m in matrix_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let k = m.n_rules();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let permuted = LabelMatrix {
            record_ids: m.record_ids.clone(),
            rule_ids: perm.iter().map(|&j| m.rule_ids[j]).collect(),
            votes: m.votes.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect(),
        };
        let cfg = LabelModelConfig::default();
        let a = fit(&m, &cfg).unwrap();
        let b = fit(&permuted, &cfg).unwrap();
        for (pos, &j) in perm.iter().enumerate() {
            prop_assert!((b.accuracies[pos] - a.accuracies[j]).abs() < 1e-9);
        }
        let pa = posteriors(&a, &m).unwrap();
        let pb = posteriors(&b, &permuted).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_accuracies_order_rows_like_majority_margin(
        rows in proptest::collection::vec(proptest::collection::vec(-1i8..=1, 4), 2..20),
        a in 0.55f64..0.95,
        prior in 0.05f64..0.95,
    ) {
        let params = LabelModelParams {
            class_prior: prior,
            rule_ids: vec![1, 2, 3, 4],
            accuracies: vec![a; 4],
            log_likelihood: vec![],
        };
        let margin = |r: &Vec<i8>| r.iter().map(|&v| i32::from(v)).sum::<i32>();
        for r in &rows {
            for s in &rows {
                let (pr, ps) = (posterior(&params, r).unwrap(), posterior(&params, s).unwrap());
                if margin(r) > margin(s) && r.iter().any(|&v| v != 0) && s.iter().any(|&v| v != 0) {
                    prop_assert!(pr > ps);
                }
            }
            if margin(r) != 0 {
                prop_assert_eq!(majority_vote(r), if margin(r) > 0 { Label::Include } else { Label::Exclude });
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = 6;
        let rows: Vec<SparseVector> = (0..25)
            .map(|_| {
                let mut pairs = Vec::new();
                for i in 0..dim as u32 {
                    if rng.random_bool(0.5) {
                        pairs.push((i, rng.random_range(0.0..1.0)));
                    }
                }
                SparseVector::from_pairs(dim, pairs)
            })
            .collect();
        let t: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..=1.0)).collect();
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = rng.random_range(-1.0..1.0);
        prop_assert!(max_gradient_rel_err(&rows, &t, &w, b, 0.1) < 1e-4);
    }

    #[test]
    fn chi_square_matches_brute_force(a in 0u64..60, b in 0u64..60, c in 0u64..60, d in 0u64..60) {
        let t = ContingencyTable2x2 { a, b, c, d };
        let (chi2, p) = chi_square(&t);
        prop_assert!((chi2 - brute_chi_square(&t)).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&p));
        let v = cramers_v(chi2, t.n());
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn bh_is_monotone_and_bounded(p in proptest::collection::vec(0.0f64..=1.0, 1..60)) {
        let adj = bh_adjust(&p).unwrap();
        for i in 0..p.len() {
            // p·m/rank may round one ulp below p at the top rank.
            prop_assert!(adj[i] >= p[i] - 1e-12 && adj[i] <= 1.0);
            for j in 0..p.len() {
                if p[i] <= p[j] {
                    prop_assert!(adj[i] <= adj[j]);
                }
            }
        }
    }

    #[test]
    fn bootstrap_p_depends_only_on_seed(seed in any::<u64>(), ka in 1usize..40, kb in 1usize..40) {
        let universe: BTreeSet<Pmid> = (1..=80).map(|i| Pmid::new(i.to_string()).unwrap()).collect();
        let a: BTreeSet<Pmid> = universe.iter().take(ka).cloned().collect();
        let b: BTreeSet<Pmid> = universe.iter().rev().take(kb).cloned().collect();
        let p1 = bootstrap_p(&a, &b, &universe, 3000, seed).unwrap();
        let p2 = bootstrap_p(&a, &b, &universe, 3000, seed).unwrap();
        prop_assert_eq!(p1, p2);
        prop_assert!(p1 > 0.0 && p1 <= 1.0);
    }
}

fn brute_chi_square(t: &ContingencyTable2x2) -> f64 {
    let obs = [[t.a as f64, t.b as f64], [t.c as f64, t.d as f64]];
    let n: f64 = obs.iter().flatten().sum();
    let rows = [obs[0][0] + obs[0][1], obs[1][0] + obs[1][1]];
    let cols = [obs[0][0] + obs[1][0], obs[0][1] + obs[1][1]];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / n;
            s += (obs[i][j] - e).powi(2) / e;
        }
    }
    s
}

fn max_gradient_rel_err(rows: &[SparseVector], t: &[f64], w: &[f64], b: f64, l2: f64) -> f64 {
    let h = 1e-6;
    let (gw, gb) = gradient(rows, t, w, b, l2);
    let rel = |g: f64, fd: f64| (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
    let mut worst = {
        let fd = (objective(rows, t, w, b + h, l2) - objective(rows, t, w, b - h, l2)) / (2.0 * h);
        rel(gb, fd)
    };
    for i in 0..w.len() {
        let (mut up, mut down) = (w.to_vec(), w.to_vec());
        up[i] += h;
        down[i] -= h;
        let fd = (objective(rows, t, &up, b, l2) - objective(rows, t, &down, b, l2)) / (2.0 * h);
        worst = worst.max(rel(gw[i], fd));
    }
    worst
}
