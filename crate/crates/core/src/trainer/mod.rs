//! Optimization loop: Adam with linear warmup, alternating mask direction,
//! periodic checkpoints and a per-step metrics log.

mod adam;
mod checkpoint;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use adam::{adam_step, clip_global_norm, AdamConfig, OptimizerState};
pub use checkpoint::{CheckpointError, TensorFile, MAGIC, VERSION};

use crate::corpus::{make_batch, shuffled_order, BatchConfig, CorpusError, SentencePair};
use crate::io::write_atomic;
use crate::losses::{batch_objective, LossConfig, LossError, LossReport};
use crate::model::{EncoderConfig, Model, ModelError};
use crate::tensor::{Graph, TensorError};

/// Consecutive non-finite losses tolerated before the run is aborted.
pub const MAX_BAD_STEPS: usize = 3;

pub const CHECKPOINT_FILE: &str = "model.duos";
pub const OPTIMIZER_FILE: &str = "model.duos.opt";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const METRICS_HEADER: &str = "step\tlr\tgen\talign\tsim\ttotal";

// Stream ids for the seeded generators; steps use 1.. directly.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM_BASE: u64 = 1 << 48;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("corpus has {pairs} pairs, fewer than one batch of {batch}")]
    CorpusTooSmall { pairs: usize, batch: usize },
    #[error("loss diverged: {count} consecutive non-finite losses ending at step {step}")]
    Diverged { step: usize, count: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every_steps: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            lr: 0.001,
            warmup_epochs: 3,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every_steps: 0,
            grad_clip: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err(format!("train.lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return err("train.epochs must be at least 1".into());
        }
        if self.warmup_epochs >= self.epochs {
            return err(format!(
                "train.warmup_epochs ({}) must be below train.epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return err("train.batch_size must be at least 1".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return err("train.betas must lie in [0, 1) and train.eps must be positive".into());
        }
        if !(self.grad_clip >= 0.0) {
            return err("train.grad_clip must be non-negative".into());
        }
        Ok(())
    }
}

/// Everything that determines a training run besides the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSetup {
    pub model: EncoderConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Its `mode` is overridden by `loss.generative_mode`.
    pub batch: BatchConfig,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }

    fn batch_config(&self) -> BatchConfig {
        BatchConfig {
            mode: self.loss.generative_mode,
            ..self.batch.clone()
        }
    }
}

/// Learning rate for 1-based update `step`: linear ramp from 0 over
/// `warmup_steps`, then constant.
pub fn lr_at(step: usize, warmup_steps: usize, lr: f64) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        lr
    } else {
        lr * step as f64 / warmup_steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based update index.
    pub step: usize,
    pub lr: f64,
    pub loss: LossReport,
    /// Parameters were left untouched (zero-gated, non-finite loss or gradient).
    pub skipped: bool,
}

impl StepRecord {
    pub fn to_tsv(&self) -> String {
        let l = &self.loss;
        format!(
            "{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.step, self.lr, l.generative, l.align, l.sim, l.total
        )
    }
}

/// Stateful training run. Every step is a pure function of (setup, corpus,
/// step index, current parameters and optimizer state), so stopping and
/// resuming from a checkpoint continues the identical trajectory.
pub struct Trainer<'a> {
    setup: TrainSetup,
    pairs: &'a [SentencePair],
    pub model: Model<f32>,
    pub opt: OptimizerState,
    step: usize,
    steps_per_epoch: usize,
    order: Option<(usize, Vec<usize>)>,
    bad_streak: usize,
    records: Vec<StepRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(setup: TrainSetup, pairs: &'a [SentencePair]) -> Result<Self, TrainError> {
        setup.validate()?;
        let b = setup.train.batch_size;
        if pairs.len() < b {
            return Err(TrainError::CorpusTooSmall { pairs: pairs.len(), batch: b });
        }
        let mut rng = stream_rng(setup.train.seed, INIT_STREAM);
        let model = Model::init(setup.model.clone(), &mut rng)?;
        let opt = OptimizerState::new(model.params.named().into_iter().map(|(_, t)| t));
        Ok(Self {
            steps_per_epoch: pairs.len().div_ceil(b),
            setup,
            pairs,
            model,
            opt,
            step: 0,
            order: None,
            bad_streak: 0,
            records: Vec::new(),
        })
    }

    /// Restores parameters, optimizer state and metrics from a run directory.
    pub fn resume(setup: TrainSetup, pairs: &'a [SentencePair], dir: &Path) -> Result<Self, TrainError> {
        let mut t = Self::new(setup, pairs)?;
        let ckpt_path = dir.join(CHECKPOINT_FILE);
        let ckpt = TensorFile::load(&ckpt_path)?;
        let names: Vec<String> = t.model.params.named().into_iter().map(|(n, _)| n).collect();
        ckpt.fill(&ckpt_path, &names, t.model.params.tensors_mut())?;

        let opt_path = dir.join(OPTIMIZER_FILE);
        let opt = TensorFile::load(&opt_path)?;
        let m_names: Vec<String> = names.iter().map(|n| format!("m.{n}")).collect();
        let v_names: Vec<String> = names.iter().map(|n| format!("v.{n}")).collect();
        opt.fill(&opt_path, &m_names, t.opt.m.iter_mut().collect())?;
        opt.fill(&opt_path, &v_names, t.opt.v.iter_mut().collect())?;
        let meta_num = |key: &str| -> Result<u64, TrainError> {
            opt.meta(key).and_then(|v| v.parse().ok()).ok_or_else(|| {
                TrainError::Checkpoint(CheckpointError::Format {
                    path: opt_path.display().to_string(),
                    detail: format!("missing or invalid meta {key}"),
                })
            })
        };
        t.opt.t = meta_num("adam_t")?;
        t.opt.skipped = meta_num("skipped")?;
        t.step = meta_num("step")? as usize;

        let metrics_path = dir.join(METRICS_FILE);
        if let Ok(text) = std::fs::read_to_string(&metrics_path) {
            t.records = parse_metrics(&text)
                .into_iter()
                .filter(|r| r.step <= t.step)
                .collect();
        }
        log::info!("resumed from {} at step {}", dir.display(), t.step);
        Ok(t)
    }

    pub fn setup(&self) -> &TrainSetup {
        &self.setup
    }

    /// Updates completed so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.setup.train.epochs * self.steps_per_epoch
    }

    pub fn warmup_steps(&self) -> usize {
        self.setup.train.warmup_epochs * self.steps_per_epoch
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// Mean total loss per epoch over the recorded steps.
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.records
            .chunks(self.steps_per_epoch)
            .map(|c| c.iter().map(|r| r.loss.total).sum::<f64>() / c.len() as f64)
            .collect()
    }

    fn batch_indices(&mut self, step: usize) -> Vec<usize> {
        let epoch = step / self.steps_per_epoch;
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = stream_rng(self.setup.train.seed, SHUFFLE_STREAM_BASE + epoch as u64);
            self.order = Some((epoch, shuffled_order(self.pairs.len(), &mut rng)));
        }
        let order = &self.order.as_ref().expect("order was just filled").1;
        let b = self.setup.train.batch_size;
        let start = (step % self.steps_per_epoch) * b;
        // the last batch of an epoch wraps to the front of the permutation
        (start..start + b).map(|i| order[i % order.len()]).collect()
    }

    /// Runs one update and records it.
    pub fn train_step(&mut self) -> Result<StepRecord, TrainError> {
        let step = self.step;
        let lr = lr_at(step + 1, self.warmup_steps(), self.setup.train.lr);
        let idx = self.batch_indices(step);
        let pairs: Vec<&SentencePair> = idx.iter().map(|&i| &self.pairs[i]).collect();
        let mut rng = stream_rng(self.setup.train.seed, 1 + step as u64);
        let batch = make_batch(&pairs, self.setup.model.vocab_size, &self.setup.batch_config(), step, &mut rng)?;

        let mut g = Graph::<f32>::new();
        let bound = self.model.params.bind(&mut g, true)?;
        // blown-up activations surface as numeric errors inside the forward
        // pass; they count as a non-finite loss
        let (loss, report) =
            match batch_objective(&mut g, &bound, &self.setup.model, &self.setup.loss, &batch, Some(&mut rng)) {
                Ok((loss, report, _)) => (Some(loss), report),
                Err(
                    LossError::Tensor(TensorError::Numeric { op, detail })
                    | LossError::Model(ModelError::Tensor(TensorError::Numeric { op, detail })),
                ) => {
                    log::warn!("step {}: {op}: {detail}", step + 1);
                    (None, LossReport::nan())
                }
                Err(e) => return Err(e.into()),
            };

        let mut skipped = true;
        if loss.is_none() || !report.is_finite() {
            self.bad_streak += 1;
            log::warn!("step {}: non-finite loss {:?}", step + 1, report);
            if self.bad_streak >= MAX_BAD_STEPS {
                return Err(TrainError::Diverged {
                    step: step + 1,
                    count: self.bad_streak,
                });
            }
        } else {
            self.bad_streak = 0;
            if let (false, Some(loss)) = (self.setup.loss.is_zero_gated(), loss) {
                let mut grads = g.backward(loss)?;
                let mut gs: Vec<_> = bound
                    .all
                    .iter()
                    .zip(self.model.params.named())
                    .map(|(&v, (_, t))| grads.take(v).unwrap_or_else(|| crate::tensor::Tensor::zeros(t.shape())))
                    .collect();
                if self.setup.train.grad_clip > 0.0 {
                    clip_global_norm(&mut gs, self.setup.train.grad_clip);
                }
                let mut params = self.model.params.tensors_mut();
                skipped = !adam_step(&mut params, &gs, &mut self.opt, lr, &self.setup.train.adam);
            }
        }
        self.step += 1;
        let rec = StepRecord {
            step: self.step,
            lr,
            loss: report,
            skipped,
        };
        self.records.push(rec);
        Ok(rec)
    }

    /// Trains until `until` updates have been made (capped at the schedule
    /// length), writing checkpoints into `out` when given.
    pub fn run_until(&mut self, until: usize, out: Option<&Path>) -> Result<(), TrainError> {
        let until = until.min(self.total_steps());
        let every = self.setup.train.checkpoint_every_steps;
        while self.step < until {
            let rec = self.train_step()?;
            if rec.step % self.steps_per_epoch == 0 {
                let epoch = rec.step / self.steps_per_epoch;
                let mean = self.epoch_losses().get(epoch - 1).copied().unwrap_or(f64::NAN);
                log::info!("epoch {epoch}: mean loss {mean:.4}");
            }
            if let Some(dir) = out {
                if every > 0 && rec.step % every == 0 && rec.step < self.total_steps() {
                    self.save(dir)?;
                }
            }
        }
        if let Some(dir) = out {
            self.save(dir)?;
        }
        Ok(())
    }

    pub fn run(&mut self, out: Option<&Path>) -> Result<(), TrainError> {
        self.run_until(self.total_steps(), out)
    }

    /// Writes checkpoint, optimizer state and metrics into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        let is_final = self.step >= self.total_steps();
        let mut ckpt = model_file(&self.model);
        ckpt.meta.push(("step".into(), self.step.to_string()));
        ckpt.meta.push(("final".into(), is_final.to_string()));
        ckpt.save(&dir.join(CHECKPOINT_FILE))?;

        let mut opt = TensorFile::default();
        opt.meta.push(("step".into(), self.step.to_string()));
        opt.meta.push(("adam_t".into(), self.opt.t.to_string()));
        opt.meta.push(("skipped".into(), self.opt.skipped.to_string()));
        let named = self.model.params.named();
        for (prefix, moments) in [("m", &self.opt.m), ("v", &self.opt.v)] {
            for ((name, _), t) in named.iter().zip(moments) {
                opt.tensors.push((format!("{prefix}.{name}"), t.clone()));
            }
        }
        opt.save(&dir.join(OPTIMIZER_FILE))?;

        let path = dir.join(METRICS_FILE);
        write_atomic(&path, metrics_text(&self.records).as_bytes()).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Parameters and encoder config as a checkpoint container.
pub fn model_file(model: &Model<f32>) -> TensorFile {
    let meta = crate::config::encoder_entries(&model.config);
    let tensors = model
        .params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    TensorFile { meta, tensors }
}

/// Loads a model written by [`Trainer::save`]; the encoder config comes
/// from the checkpoint's metadata.
pub fn load_model(path: &Path) -> Result<Model<f32>, TrainError> {
    let file = TensorFile::load(path)?;
    let mut cfg = EncoderConfig::desk();
    for (k, v) in &file.meta {
        if k.starts_with("model.") {
            crate::config::apply_encoder_key(&mut cfg, k, v).map_err(|e| {
                TrainError::Checkpoint(CheckpointError::Format {
                    path: path.display().to_string(),
                    detail: e,
                })
            })?;
        }
    }
    let mut model = Model::init(cfg, &mut stream_rng(0, INIT_STREAM))?;
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    file.fill(path, &names, model.params.tensors_mut())?;
    Ok(model)
}

pub fn metrics_text(records: &[StepRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.to_tsv());
    }
    s
}

fn parse_metrics(text: &str) -> Vec<StepRecord> {
    text.lines()
        .skip(1)
        .filter_map(|line| {
            let f: Vec<f64> = line.split('\t').map(|x| x.parse().ok()).collect::<Option<_>>()?;
            (f.len() == 6).then(|| StepRecord {
                step: f[0] as usize,
                lr: f[1],
                loss: LossReport {
                    generative: f[2],
                    align: f[3],
                    sim: f[4],
                    total: f[5],
                },
                skipped: false,
            })
        })
        .collect()
}

/// Default run directory layout: `dir/model.duos` etc.
pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_FILE)
}

#[cfg(test)]
mod tests;
