use duosent::corpus::{ugt_label, LabelWeighting};
use duosent::losses::{align_loss, kl_divergence, sim_loss, Reduction};
use duosent::tensor::{Graph, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0f64..2.0, rows * cols)
}

fn eval(u: &[f64], v: &[f64], b: usize, d: usize, red: Reduction) -> (f64, f64) {
    let mut g = Graph::<f64>::new();
    let u = g.constant(Tensor::new(&[b, d], u.to_vec()).unwrap()).unwrap();
    let v = g.constant(Tensor::new(&[b, d], v.to_vec()).unwrap()).unwrap();
    let a = align_loss(&mut g, u, v, red).unwrap();
    let s = sim_loss(&mut g, u, v, red).unwrap();
    (g.value(a).item(), g.value(s).item())
}

fn permute_rows(m: &[f64], d: usize, perm: &[usize]) -> Vec<f64> {
    perm.iter().flat_map(|&i| m[i * d..(i + 1) * d].to_vec()).collect()
}

fn reduction() -> impl Strategy<Value = Reduction> {
    prop_oneof![Just(Reduction::Mean), Just(Reduction::PaperSum)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contrastive_losses_ignore_row_order(
        (b, d, u, v, perm) in (2usize..6, 1usize..5).prop_flat_map(|(b, d)| {
            (Just(b), Just(d), matrix(b, d), matrix(b, d), Just((0..b).collect::<Vec<_>>()).prop_shuffle())
        }),
        red in reduction(),
    ) {
        let (a0, s0) = eval(&u, &v, b, d, red);
        let (a1, s1) = eval(&permute_rows(&u, d, &perm), &permute_rows(&v, d, &perm), b, d, red);
        prop_assert!((a0 - a1).abs() <= 1e-9 * (1.0 + a0.abs()));
        prop_assert!((s0 - s1).abs() <= 1e-9 * (1.0 + s0.abs()));
    }

    #[test]
    fn contrastive_losses_are_symmetric(
        (b, d, u, v) in (1usize..6, 1usize..5).prop_flat_map(|(b, d)| (Just(b), Just(d), matrix(b, d), matrix(b, d))),
        red in reduction(),
    ) {
        let (a0, s0) = eval(&u, &v, b, d, red);
        let (a1, s1) = eval(&v, &u, b, d, red);
        prop_assert!((a0 - a1).abs() <= 1e-9 * (1.0 + a0.abs()));
        prop_assert!((s0 - s1).abs() <= 1e-9 * (1.0 + s0.abs()));
        prop_assert!(a0 >= 0.0 && s0 >= 0.0);
    }

    #[test]
    fn align_strictly_decreases_with_diagonal_scale(b in 2usize..6, s1 in 0.1f64..3.0, ds in 0.1f64..3.0, red in reduction()) {
        let d = b;
        let eye: Vec<f64> = (0..b * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect();
        let scaled = |s: f64| eye.iter().map(|x| x * s).collect::<Vec<_>>();
        let (lo, _) = eval(&eye, &scaled(s1 + ds), b, d, red);
        let (hi, _) = eval(&eye, &scaled(s1), b, d, red);
        prop_assert!(lo < hi);
    }

    #[test]
    fn mean_is_paper_sum_over_batch(
        (b, d, u, v) in (1usize..6, 1usize..5).prop_flat_map(|(b, d)| (Just(b), Just(d), matrix(b, d), matrix(b, d))),
    ) {
        let (am, sm) = eval(&u, &v, b, d, Reduction::Mean);
        let (ap, sp) = eval(&u, &v, b, d, Reduction::PaperSum);
        prop_assert!((am * b as f64 - ap).abs() <= 1e-9 * (1.0 + ap.abs()));
        prop_assert!((sm * b as f64 - sp).abs() <= 1e-9 * (1.0 + sp.abs()));
    }

    #[test]
    fn generative_loss_is_non_negative(
        logits in proptest::collection::vec(-5.0f64..5.0, 3 * 12),
        words in proptest::collection::vec(5usize..12, 3),
        opposite in proptest::collection::vec(proptest::collection::vec(5usize..12, 1..6), 3),
    ) {
        let q: Vec<_> = words.iter().zip(&opposite).map(|(&w, o)| ugt_label(w, o, LabelWeighting::Distinct)).collect();
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::new(&[3, 12], logits).unwrap()).unwrap();
        let kl = kl_divergence(&mut g, l, &q).unwrap();
        prop_assert!(g.value(kl).item() >= -1e-9);
    }
}
