mod common;

use common::*;
use proptest::prelude::*;
use tmd_core::density::{fit_gaussian, mahalanobis, relative_mahalanobis};
use tmd_core::embedstore::{read_store, write_store, EmbeddingStore, HiddenStates, ResponseRecord};
use tmd_core::features::{atmd, atrmd, fit_projector, msp_uncertainty, perplexity, sequence_probability, Density};
use tmd_core::hybrid::{huq_score, rank, tune_huq, HuqParams};
use tmd_core::linalg::Matrix;
use tmd_core::metrics::{prr, roc_auc, rouge_l};
use tmd_core::regress::ols_fit;

fn matrix(rows: &[Vec<f64>]) -> Matrix<f64> {
    Matrix::from_rows(rows)
}

fn records(seed: u64, n: usize, l: usize, d: usize) -> Vec<ResponseRecord> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let t = 1 + (i % 4);
            let data = (0..t * l * d).map(|_| normal(&mut r) as f32).collect();
            ResponseRecord {
                id: format!("r{i:03}"),
                hidden: HiddenStates::new(t, l, d, data).unwrap(),
                logprobs: (0..t).map(|_| -(normal(&mut r).abs() as f32)).collect(),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn store_round_trip_is_bit_exact(seed in any::<u64>(), n in 1usize..6, l in 1usize..4, d in 1usize..5) {
        let recs = records(seed, n, l, d);
        let bytes = write_store(&recs).unwrap();
        prop_assert_eq!(&bytes, &write_store(&recs).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.tmd");
        std::fs::write(&path, &bytes).unwrap();
        let store = read_store(&path).unwrap();
        for r in &recs {
            let got = store.get(&r.id).unwrap();
            prop_assert_eq!(got.hidden.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                r.hidden.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(&got.logprobs, &r.logprobs);
        }
    }

    #[test]
    fn truncated_store_is_rejected(seed in any::<u64>(), cut in 1usize..64) {
        let bytes = write_store(&records(seed, 2, 2, 3)).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(EmbeddingStore::from_bytes(&bytes[..keep]).is_err());
    }

    #[test]
    fn md_matches_inverse_oracle(seed in any::<u64>(), d in 1usize..9, extra in 0usize..40) {
        let mut r = rng(seed);
        let rows = gaussian_sample(&mut r, 50 + extra, d);
        let stats = fit_gaussian(&matrix(&rows), 0.0).unwrap();
        prop_assert_eq!(stats.ridge, 0.0);
        let inv = inverse(&covariance(&rows));
        let mu = mean(&rows);
        for _ in 0..5 {
            let x: Vec<f64> = mu.iter().map(|m| m + 3.0 * normal(&mut r)).collect();
            let got = mahalanobis(&stats, &x).unwrap();
            let want = md_oracle(&mu, &inv, &x);
            prop_assert!((got - want).abs() <= 1e-8 * want.abs(), "{} vs {}", got, want);
            prop_assert!(got >= 0.0);
        }
        prop_assert!(mahalanobis(&stats, &stats.mu).unwrap() == 0.0);
    }

    #[test]
    fn rmd_is_difference_of_two_calls(seed in any::<u64>(), d in 1usize..6) {
        let mut r = rng(seed);
        let a = fit_gaussian(&matrix(&gaussian_sample(&mut r, 30, d)), 1e-6).unwrap();
        let b = fit_gaussian(&matrix(&gaussian_sample(&mut r, 30, d)), 1e-6).unwrap();
        let x: Vec<f64> = (0..d).map(|_| 4.0 * normal(&mut r)).collect();
        let want = mahalanobis(&a, &x).unwrap() - mahalanobis(&b, &x).unwrap();
        prop_assert_eq!(relative_mahalanobis(&a, &b, &x).unwrap().to_bits(), want.to_bits());
    }

    #[test]
    fn gaussian_fit_ignores_row_order(seed in any::<u64>(), d in 1usize..6) {
        let mut r = rng(seed);
        let rows = gaussian_sample(&mut r, 40, d);
        let mut shuffled = rows.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut r);
        let a = fit_gaussian(&matrix(&rows), 1e-6).unwrap();
        let b = fit_gaussian(&matrix(&shuffled), 1e-6).unwrap();
        for (x, y) in a.mu.iter().zip(&b.mu) {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
        for (x, y) in a.chol.as_slice().iter().zip(b.chol.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }

    #[test]
    fn huge_ridge_gives_scaled_euclidean(seed in any::<u64>(), d in 1usize..6) {
        let mut r = rng(seed);
        let rows = gaussian_sample(&mut r, 30, d);
        let lambda = 1e9;
        let stats = fit_gaussian(&matrix(&rows), lambda).unwrap();
        let cov = covariance(&rows);
        let mbar = (0..d).map(|i| cov[i][i]).sum::<f64>() / d as f64;
        let x: Vec<f64> = (0..d).map(|_| 10.0 * normal(&mut r)).collect();
        let dist2: f64 = x.iter().zip(&stats.mu).map(|(a, b)| (a - b) * (a - b)).sum();
        let want = dist2 / (lambda * mbar);
        let got = mahalanobis(&stats, &x).unwrap();
        prop_assert!((got - want).abs() <= 1e-6 * want, "{} vs {}", got, want);
    }

    #[test]
    fn atmd_is_mean_of_token_distances(seed in any::<u64>()) {
        let recs = records(seed, 4, 3, 2);
        let mut r = rng(seed ^ 1);
        let stats: Vec<_> = (0..3).map(|_| fit_gaussian(&matrix(&gaussian_sample(&mut r, 20, 2)), 1e-6).unwrap()).collect();
        let bg: Vec<_> = (0..3).map(|_| fit_gaussian(&matrix(&gaussian_sample(&mut r, 20, 2)), 1e-6).unwrap()).collect();
        for rec in &recs {
            let h = &rec.hidden;
            let got = atmd(h, &stats).unwrap();
            for (layer, g) in got.iter().enumerate() {
                let mut acc = 0.0;
                for t in 0..h.tokens() {
                    let x: Vec<f64> = h.embedding(t, layer).iter().map(|&v| v as f64).collect();
                    acc += mahalanobis(&stats[layer], &x).unwrap();
                }
                prop_assert_eq!(*g, acc / h.tokens() as f64);
            }
            let rel = atrmd(h, &stats, &bg).unwrap();
            let diff: Vec<f64> = atmd(h, &stats).unwrap().iter().zip(atmd(h, &bg).unwrap()).map(|(a, b)| a - b).collect();
            for (a, b) in rel.iter().zip(&diff) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
            let same = tmd_core::features::whole_sequence(h, Density::Rmd { in_domain: &stats, background: &stats }).unwrap();
            prop_assert!(same.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn probability_scores_in_range(lp in proptest::collection::vec(-3.0f64..0.0, 1..10)) {
        let p = sequence_probability(&lp).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
        let m = msp_uncertainty(&lp).unwrap();
        prop_assert!((0.0..1.0).contains(&m));
        prop_assert!(perplexity(&lp).unwrap() >= 1.0);
    }

    #[test]
    fn pca_components_orthonormal_and_decorrelating(seed in any::<u64>(), f in 2usize..12, n in 20usize..60, k in 1usize..12) {
        let mut r = rng(seed);
        let rows = gaussian_sample(&mut r, n, f);
        let p = fit_projector(&matrix(&rows), k).unwrap();
        let nc = p.n_components();
        prop_assert_eq!(nc, k.min(f).min(n - 1));
        for a in 0..nc {
            for b in 0..nc {
                let g: f64 = p.components.row(a).iter().zip(p.components.row(b)).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((g - want).abs() < 1e-8);
            }
        }
        let proj: Vec<Vec<f64>> = rows.iter().map(|x| p.project(x).unwrap()).collect();
        let c = covariance(&proj);
        for a in 0..nc {
            for b in 0..nc {
                if a != b {
                    prop_assert!(c[a][b].abs() < 1e-8 * c[0][0].max(1.0));
                }
            }
            if a > 0 {
                prop_assert!(c[a][a] <= c[a - 1][a - 1] * (1.0 + 1e-10));
            }
        }
        prop_assert!(p.project(&p.feature_means).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn ols_recovers_planted_weights(seed in any::<u64>(), k in 1usize..12) {
        let mut r = rng(seed);
        let w: Vec<f64> = (0..k).map(|_| normal(&mut r)).collect();
        let b = normal(&mut r);
        let rows: Vec<Vec<f64>> = (0..(5 * k + 20)).map(|_| (0..k).map(|_| normal(&mut r)).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|x| b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>()).collect();
        let (wh, bh) = ols_fit(&matrix(&rows), &y, 0.0).unwrap();
        for (a, c) in wh.iter().zip(&w) {
            prop_assert!((a - c).abs() < 1e-8);
        }
        prop_assert!((bh - b).abs() < 1e-8);
    }

    #[test]
    fn prr_invariant_under_monotone_transform(u in proptest::collection::vec(-5.0f64..5.0, 2..30), seed in any::<u64>()) {
        let mut r = rng(seed);
        let q: Vec<f64> = u.iter().map(|_| rand::Rng::random::<f64>(&mut r)).collect();
        let t: Vec<f64> = u.iter().map(|v| (v * 0.7).exp() + 3.0).collect();
        prop_assert_eq!(prr(&u, &q).unwrap(), prr(&t, &q).unwrap());
        let want = prr_oracle(&u, &q);
        prop_assert!((prr(&u, &q).unwrap() - want).abs() < 1e-12);
    }

    // Co-ranking mirrors anti-ranking only for quality symmetric about its
    // mean, e.g. equally spaced values.
    #[test]
    fn prr_co_ranking_on_equally_spaced_quality(perm_seed in any::<u64>(), n in 2usize..9, step in 0.1f64..3.0) {
        let mut r = rng(perm_seed);
        let mut q: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        rand::seq::SliceRandom::shuffle(q.as_mut_slice(), &mut r);
        let anti: Vec<f64> = q.iter().map(|v| -v).collect();
        prop_assert!((prr(&anti, &q).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((prr(&q, &q).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_matches_pairwise_and_complements(s in proptest::collection::vec(0u8..6, 2..40), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut y: Vec<bool> = s.iter().map(|_| rand::Rng::random::<bool>(&mut r)).collect();
        y[0] = true;
        y[1] = false;
        let s: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        let a = roc_auc(&s, &y).unwrap();
        prop_assert_eq!(a, roc_oracle(&s, &y));
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((a + roc_auc(&neg, &y).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rouge_is_symmetric(a in proptest::collection::vec(0u8..5, 0..12), b in proptest::collection::vec(0u8..5, 0..12)) {
        prop_assert_eq!(rouge_l(&a, &b), rouge_l(&b, &a));
    }

    #[test]
    fn rank_monotone_and_huq_bounded(seed in any::<u64>(), n in 4usize..30) {
        let mut r = rng(seed);
        let u1: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let u2: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let mut sorted = u1.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (x, y) = (normal(&mut r), normal(&mut r));
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(rank(lo, &sorted).unwrap() <= rank(hi, &sorted).unwrap());
        let dmin = if seed % 4 == 0 { f64::NEG_INFINITY } else { u2[seed as usize % n] };
        let p = HuqParams::new(dmin, normal(&mut r), rand::Rng::random::<f64>(&mut r), &u1, &u2).unwrap();
        let below = u2.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
        prop_assert!(HuqParams::new(below, 0.0, 0.5, &u1, &u2).is_err());
        for _ in 0..10 {
            let v = huq_score(&p, 2.0 * normal(&mut r), 2.0 * normal(&mut r)).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn huq_extremes_order_like_components(seed in any::<u64>(), n in 4usize..30) {
        let mut r = rng(seed);
        let u1: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let u2: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let test1: Vec<f64> = (0..n).map(|_| 1.5 * normal(&mut r)).collect();
        let test2: Vec<f64> = (0..n).map(|_| 1.5 * normal(&mut r)).collect();
        for (alpha, reference) in [(1.0, &test1), (0.0, &test2)] {
            let p = HuqParams::new(f64::NEG_INFINITY, 0.0, alpha, &u1, &u2).unwrap();
            let h: Vec<f64> = test1.iter().zip(&test2).map(|(&a, &b)| huq_score(&p, a, b).unwrap()).collect();
            prop_assert!(order_consistent(&h, reference));
        }
    }

    #[test]
    fn tuned_huq_not_worse_than_components(seed in any::<u64>(), n in 8usize..40) {
        let mut r = rng(seed);
        let q: Vec<f64> = (0..n).map(|_| rand::Rng::random::<f64>(&mut r)).collect();
        let u1: Vec<f64> = q.iter().map(|v| -v + 0.5 * normal(&mut r)).collect();
        let u2: Vec<f64> = q.iter().map(|v| -v + 0.5 * normal(&mut r)).collect();
        let p = tune_huq(&u1, &u2, &q).unwrap();
        let h: Vec<f64> = u1.iter().zip(&u2).map(|(&a, &b)| huq_score(&p, a, b).unwrap()).collect();
        let best = prr(&u1, &q).unwrap().max(prr(&u2, &q).unwrap());
        prop_assert!(prr(&h, &q).unwrap() >= best - 1e-12);
    }
}
