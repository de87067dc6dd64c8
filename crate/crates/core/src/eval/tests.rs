use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn index(vs: &[Vec<f32>]) -> EvalIndex {
    EvalIndex::with_line_ids(vs).unwrap()
}

fn brute_cos(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Double loop over raw vectors; gold target of query i is target i.
fn brute_p_at_1(q: &[Vec<f32>], t: &[Vec<f32>], margin_k: Option<usize>) -> f64 {
    let knn_mean = |sims: Vec<f64>, k: usize| {
        let mut s = sims;
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s.iter().take(k).sum::<f64>() / k as f64
    };
    let mut correct = 0;
    for (i, x) in q.iter().enumerate() {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (j, y) in t.iter().enumerate() {
            let c = brute_cos(x, y);
            let s = match margin_k {
                None => c,
                Some(k) => {
                    let fx = knn_mean(t.iter().map(|z| brute_cos(x, z)).collect(), k);
                    let fy = knn_mean(q.iter().map(|z| brute_cos(y, z)).collect(), k);
                    c / (fx / 2.0 + fy / 2.0)
                }
            };
            if s > best.1 {
                best = (j, s);
            }
        }
        correct += (best.0 == i) as usize;
    }
    correct as f64 / q.len() as f64
}

#[test]
fn self_retrieval_is_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v: Vec<Vec<f32>> = (0..20).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ix = index(&v);
    assert_eq!(retrieve_p_at_1(&ix, &ix, Scoring::Cosine).unwrap(), 1.0);
}

#[test]
fn hand_built_two_of_three() {
    let q = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    // query 1 lands closer to target 2 than to its own target
    let t = vec![vec![1.0, 0.1], vec![1.0, 0.3], vec![0.6, 1.0]];
    let p = retrieve_p_at_1(&index(&q), &index(&t), Scoring::Cosine).unwrap();
    assert!((p - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(p, brute_p_at_1(&q, &t, None));
}

#[test]
fn ties_go_to_lowest_index() {
    let v = vec![vec![1.0f32, 0.0]; 5];
    let ix = index(&v);
    for scoring in [
        Scoring::Cosine,
        Scoring::Margin {
            kind: MarginKind::Ratio,
            k: 4,
        },
    ] {
        let hits = retrieve(&ix, &ix, scoring).unwrap();
        assert!(hits.iter().all(|h| h.top1 == 0), "{scoring:?}");
    }
}

#[test]
fn hub_defeats_cosine_but_not_margin() {
    let s = std::f32::consts::FRAC_1_SQRT_2;
    let q = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    // targets: gold of q0, gold of q1, hub near both queries
    let t = vec![vec![1.0, 0.1], vec![-1.2, 1.0], vec![s, s]];
    let (qi, ti) = (index(&q), index(&t));
    assert_eq!(retrieve_p_at_1(&qi, &ti, Scoring::Cosine).unwrap(), 0.5);
    let margin = Scoring::Margin {
        kind: MarginKind::Ratio,
        k: 2,
    };
    assert_eq!(retrieve_p_at_1(&qi, &ti, margin).unwrap(), 1.0);
    assert_eq!(brute_p_at_1(&q, &t, None), 0.5);
    assert_eq!(brute_p_at_1(&q, &t, Some(2)), 1.0);
}

#[test]
fn errors() {
    let empty: Vec<Vec<f32>> = Vec::new();
    assert!(matches!(EvalIndex::with_line_ids(&empty), Err(EvalError::EmptyIndex)));
    assert!(matches!(
        EvalIndex::with_line_ids(&[vec![0.0f32, 0.0]]),
        Err(EvalError::ZeroVector(_))
    ));
    let ix = index(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let k5 = Scoring::Margin {
        kind: MarginKind::Ratio,
        k: 5,
    };
    assert!(matches!(retrieve(&ix, &ix, k5), Err(EvalError::BadK { .. })));
}

#[test]
fn report_tsv_and_gold_by_id() {
    let q = EvalIndex::new(vec!["a".into(), "b".into()], &[vec![1.0f32, 0.0], vec![0.0, 1.0]]).unwrap();
    let t = EvalIndex::new(vec!["b".into(), "a".into()], &[vec![0.0f32, 1.0], vec![1.0, 0.1]]).unwrap();
    let r = evaluate_retrieval(&q, &t, Scoring::Cosine).unwrap();
    assert_eq!(r.p_at_1(), 1.0);
    let tsv = r.to_tsv();
    assert!(tsv.starts_with("query_id\tgold_id\ttop1_id\tscore\tcorrect\n"));
    assert!(tsv.contains("b\tb\tb\t1.000000\t1"));
}

#[test]
fn embeddings_roundtrip() {
    let e = Embeddings {
        ids: vec!["x".into(), "żółw".into()],
        vectors: vec![vec![1.0, -2.5, 0.0], vec![f32::MAX, 1e-40, 3.0]],
    };
    let bytes = e.to_bytes();
    assert_eq!(&bytes[..4], b"DEMB");
    assert_eq!(Embeddings::from_bytes(&bytes, "m").unwrap(), e);
    assert!(Embeddings::from_bytes(&bytes[..bytes.len() - 1], "m").is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Embeddings::from_bytes(&extra, "m").is_err());
}

#[test]
fn probe_separable_two_class() {
    let xs: Vec<Vec<f32>> = (0..40).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }, (i as f32).sin()]).collect();
    let ys: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let p = train_probe(&xs, &ys, &xs, &ys, &ProbeConfig::default()).unwrap();
    assert_eq!(p.accuracy(&xs, &ys), 1.0);
}

#[test]
fn probe_shuffled_labels_at_chance() {
    let mut accs = Vec::new();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = |rng: &mut ChaCha8Rng, n: usize| -> (Vec<Vec<f32>>, Vec<usize>) {
            let xs = (0..n).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let ys = (0..n).map(|i| i % 4).collect();
            (xs, ys)
        };
        let (xt, yt) = gen(&mut rng, 400);
        let (xv, yv) = gen(&mut rng, 400);
        let (xs, ys) = gen(&mut rng, 2000);
        let p = train_probe(&xt, &yt, &xv, &yv, &ProbeConfig::default()).unwrap();
        accs.push(p.accuracy(&xs, &ys));
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() <= 0.05, "{accs:?}");
}

#[test]
fn probe_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d, c, n) = (5, 3, 4);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<usize> = (0..n).map(|i| i % c).collect();
    let w: Vec<f64> = (0..d * c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let b: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let l2 = 0.3;
    let (_, gw, gb) = probe_loss_and_grad(&w, &b, &xs, &ys, l2);
    let h = 1e-6;
    let mut num_w = vec![0.0; w.len()];
    for i in 0..w.len() {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp[i] += h;
        wm[i] -= h;
        num_w[i] = (probe_loss_and_grad(&wp, &b, &xs, &ys, l2).0 - probe_loss_and_grad(&wm, &b, &xs, &ys, l2).0) / (2.0 * h);
    }
    let mut num_b = vec![0.0; b.len()];
    for i in 0..b.len() {
        let (mut bp, mut bm) = (b.clone(), b.clone());
        bp[i] += h;
        bm[i] -= h;
        num_b[i] = (probe_loss_and_grad(&w, &bp, &xs, &ys, l2).0 - probe_loss_and_grad(&w, &bm, &xs, &ys, l2).0) / (2.0 * h);
    }
    let rel = |a: &[f64], n: &[f64]| {
        let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / scale
    };
    assert!(rel(&gw, &num_w) < 1e-4);
    assert!(rel(&gb, &num_b) < 1e-4);
}

#[test]
fn probe_rejects_single_class() {
    let xs = vec![vec![1.0f32], vec![2.0]];
    assert!(matches!(
        train_probe(&xs, &[1, 1], &xs, &[1, 1], &ProbeConfig::default()),
        Err(EvalError::SingleClass)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn index_matches_brute_force(seed in any::<u64>(), n in 5usize..40, d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<Vec<f32>> {
            (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).map(|x| if x == 0.0 { 0.5 } else { x }).collect()).collect()
        };
        let q = draw(n);
        let t = draw(n);
        let (qi, ti) = (index(&q), index(&t));
        prop_assert_eq!(retrieve_p_at_1(&qi, &ti, Scoring::Cosine).unwrap(), brute_p_at_1(&q, &t, None));
        let m = Scoring::Margin { kind: MarginKind::Ratio, k: 4 };
        prop_assert_eq!(retrieve_p_at_1(&qi, &ti, m).unwrap(), brute_p_at_1(&q, &t, Some(4)));
    }

    #[test]
    fn cosine_is_scale_free(seed in any::<u64>(), scale in 0.01f32..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<Vec<f32>> = (0..15).map(|_| (0..4).map(|_| rng.gen_range(0.1f32..1.0)).collect()).collect();
        let t: Vec<Vec<f32>> = (0..15).map(|_| (0..4).map(|_| rng.gen_range(0.1f32..1.0)).collect()).collect();
        let ts: Vec<Vec<f32>> = t.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
        let a = retrieve(&index(&q), &index(&t), Scoring::Cosine).unwrap();
        let b = retrieve(&index(&q), &index(&ts), Scoring::Cosine).unwrap();
        let tops = |h: &[Hit]| h.iter().map(|h| h.top1).collect::<Vec<_>>();
        prop_assert_eq!(tops(&a), tops(&b));
    }
}
