use duosent::corpus::SentencePair;
use duosent::trainer::{TrainSetup, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pairs(n: usize, vocab: usize, seed: u64, copy: bool) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let sent = |rng: &mut ChaCha8Rng| (0..rng.gen_range(3..9)).map(|_| rng.gen_range(5..vocab)).collect::<Vec<_>>();
            let src = sent(&mut rng);
            let tgt = if copy { src.clone() } else { src.iter().rev().map(|t| (t + 7) % (vocab - 5) + 5).collect() };
            SentencePair::new(src, tgt).unwrap()
        })
        .collect()
}

fn setup(vocab: usize, epochs: usize) -> TrainSetup {
    let mut s = TrainSetup::default();
    s.model.vocab_size = vocab;
    s.train.epochs = epochs;
    s.train.warmup_epochs = 1;
    s.train.batch_size = 32;
    s.train.seed = 11;
    s
}

#[test]
fn loss_goes_down_on_small_corpus() {
    let pairs = random_pairs(200, 120, 1, false);
    let mut t = Trainer::new(setup(120, 30), &pairs).unwrap();
    t.run(None).unwrap();
    let e = t.epoch_losses();
    assert_eq!(e.len(), 30);
    let first = e[..3].iter().sum::<f64>() / 3.0;
    let last = e[e.len() - 3..].iter().sum::<f64>() / 3.0;
    assert!(last < 0.7 * first, "{e:?}");
    assert!(t.records().iter().all(|r| !r.skipped));
}

#[test]
fn align_only_learns_copy_task() {
    let pairs = random_pairs(64, 60, 2, true);
    let mut s = setup(60, 40);
    s.train.batch_size = 16;
    s.loss.use_generative = false;
    s.loss.use_sim = false;
    s.model.dropout_p = 0.0;
    let mut t = Trainer::new(s, &pairs).unwrap();
    t.run(None).unwrap();
    let per_epoch = t.records().len() / 40;
    let tail = &t.records()[t.records().len() - per_epoch..];
    let align = tail.iter().map(|r| r.loss.align).sum::<f64>() / tail.len() as f64;
    assert!(align < 0.05, "final align loss per sentence {align}");
}
