use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::SentencePair;
use crate::model::EncoderConfig;

fn tiny_setup() -> TrainSetup {
    TrainSetup {
        model: EncoderConfig {
            n_layers: 1,
            d_model: 16,
            d_ff: 32,
            n_heads: 2,
            vocab_size: 40,
            max_len: 12,
            ..EncoderConfig::desk()
        },
        train: TrainConfig {
            epochs: 4,
            warmup_epochs: 1,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        },
        ..TrainSetup::default()
    }
}

fn toy_pairs(n: usize, seed: u64) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..8);
            let src: Vec<usize> = (0..len).map(|_| rng.gen_range(5..22)).collect();
            let tgt: Vec<usize> = src.iter().rev().map(|t| t + 17).collect();
            SentencePair::new(src, tgt).unwrap()
        })
        .collect()
}

#[test]
fn warmup_schedule() {
    assert_eq!(lr_at(0, 300, 0.001), 0.0);
    assert_eq!(lr_at(300, 300, 0.001), 0.001);
    assert!((lr_at(150, 300, 0.001) - 0.0005).abs() < 1e-18);
    assert_eq!(lr_at(5000, 300, 0.001), 0.001);
    assert_eq!(lr_at(0, 0, 0.001), 0.001);
}

#[test]
fn config_validation() {
    let mut s = tiny_setup();
    s.train.warmup_epochs = s.train.epochs;
    assert!(s.validate().is_err());
    let mut s = tiny_setup();
    s.train.lr = 0.0;
    assert!(s.validate().is_err());
    let pairs = toy_pairs(5, 1);
    assert!(matches!(
        Trainer::new(tiny_setup(), &pairs),
        Err(TrainError::CorpusTooSmall { pairs: 5, batch: 8 })
    ));
}

#[test]
fn zero_gated_loss_never_updates() {
    let mut s = tiny_setup();
    s.loss.weights = [0.0; 3];
    let pairs = toy_pairs(20, 2);
    let mut t = Trainer::new(s, &pairs).unwrap();
    let before = t.model.params.clone();
    t.run_until(5, None).unwrap();
    assert_eq!(t.model.params, before);
    assert!(t.records().iter().all(|r| r.skipped));
}

#[test]
fn identical_seeds_give_bitwise_identical_runs() {
    let pairs = toy_pairs(24, 3);
    let run = || {
        let mut t = Trainer::new(tiny_setup(), &pairs).unwrap();
        t.run(None).unwrap();
        (model_file(&t.model).to_bytes(), metrics_text(t.records()))
    };
    assert_eq!(run(), run());
    let mut other = tiny_setup();
    other.train.seed = 6;
    let mut t = Trainer::new(other, &pairs).unwrap();
    t.run(None).unwrap();
    assert_ne!(model_file(&t.model).to_bytes(), run().0);
}

#[test]
fn resume_continues_the_same_trajectory() {
    let pairs = toy_pairs(24, 4);
    let mut full = Trainer::new(tiny_setup(), &pairs).unwrap();
    full.run(None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(tiny_setup(), &pairs).unwrap();
    first.run_until(5, Some(dir.path())).unwrap();
    let ckpt = TensorFile::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt.meta("final"), Some("false"));
    let mut resumed = Trainer::resume(tiny_setup(), &pairs, dir.path()).unwrap();
    assert_eq!(resumed.step(), 5);
    resumed.run(Some(dir.path())).unwrap();

    assert_eq!(metrics_text(resumed.records()), metrics_text(full.records()));
    assert_eq!(model_file(&resumed.model).to_bytes(), model_file(&full.model).to_bytes());
    let ckpt = TensorFile::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt.meta("final"), Some("true"));
}

#[test]
fn checkpoint_roundtrip_encodes_identically() {
    let pairs = toy_pairs(16, 5);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny_setup(), &pairs).unwrap();
    t.run_until(3, Some(dir.path())).unwrap();
    let loaded = load_model(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(loaded.config, t.model.config);
    let seqs: Vec<Vec<usize>> = pairs.iter().map(|p| p.src.clone()).collect();
    let a = t.model.embed(&seqs, 4).unwrap();
    let b = loaded.embed(&seqs, 4).unwrap();
    let bits = |v: &Vec<Vec<f32>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn metrics_log_has_one_line_per_step() {
    let pairs = toy_pairs(16, 6);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny_setup(), &pairs).unwrap();
    t.run(Some(dir.path())).unwrap();
    let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 1 + t.total_steps());
    assert!(lines[1..].iter().all(|l| l.split('\t').count() == 6));
}

#[test]
fn every_loss_mode_takes_a_step() {
    use crate::losses::GenerativeMode::*;
    let pairs = toy_pairs(16, 7);
    for mode in [Mlm, Smlm, Xtr, MlmXtr, Ugt] {
        let mut s = tiny_setup();
        s.loss.generative_mode = mode;
        let mut t = Trainer::new(s, &pairs).unwrap();
        t.run_until(3, None).unwrap();
        assert!(t.records().iter().all(|r| r.loss.is_finite()), "{mode}");
    }
}
