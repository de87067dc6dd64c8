//! Retrieval on noisy copies with a few hub vectors planted among the
//! targets. Plain cosine is drawn to the hubs; margin scoring is not.

use duosent::eval::{evaluate_retrieval, EvalIndex, MarginKind, Scoring};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n, d, hubs) = (300, 12, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let queries: Vec<Vec<f32>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut targets: Vec<Vec<f32>> =
        queries.iter().map(|q| q.iter().map(|x| x + rng.gen_range(-0.6..0.6)).collect()).collect();
    // hubs: targets pulled toward the centroid of everything
    let centroid: Vec<f32> = (0..d).map(|j| queries.iter().map(|q| q[j]).sum::<f32>() / n as f32).collect();
    for t in targets.iter_mut().take(hubs) {
        for (x, c) in t.iter_mut().zip(&centroid) {
            *x = 0.2 * *x + 5.0 * c;
        }
    }
    let (qi, ti) = (EvalIndex::with_line_ids(&queries)?, EvalIndex::with_line_ids(&targets)?);
    for scoring in [
        Scoring::Cosine,
        Scoring::Margin { kind: MarginKind::Ratio, k: 4 },
        Scoring::Margin { kind: MarginKind::Distance, k: 4 },
    ] {
        let report = evaluate_retrieval(&qi, &ti, scoring)?;
        println!("{scoring:?}: P@1 {:.3}", report.p_at_1());
    }
    Ok(())
}
