//! Flat `key=value` run configuration with dotted keys.
//!
//! Sources are applied in order: config file, then the `DUOSENT_SEED`
//! environment variable, then `--set` overrides. `model.preset` is applied
//! before every other key regardless of where it appears, so explicit
//! model keys always win over the preset.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{BatchConfig, CharsetRule, FilterRules, LabelWeighting, UnmaskedLabel};
use crate::eval::{MarginKind, ProbeConfig, Scoring};
use crate::losses::{GenerativeMode, LossConfig, Reduction};
use crate::model::{EncoderConfig, GenSource, HeadActivation};
use crate::synthetic::SynthConfig;
use crate::trainer::{TrainConfig, TrainSetup};

pub const SEED_ENV: &str = "DUOSENT_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {key:?}; valid keys: {valid}")]
    UnknownKey { key: String, valid: String },
    #[error("bad value {value:?} for {key}: {detail}")]
    BadValue { key: String, value: String, detail: String },
    #[error("{source_name}:{line}: expected key=value, got {text:?}")]
    Syntax { source_name: String, line: usize, text: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Retrieval scoring and encoding batch size for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Margin scoring when true, plain cosine otherwise.
    pub margin: bool,
    pub margin_kind: MarginKind,
    pub k: usize,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            margin: true,
            margin_kind: MarginKind::Ratio,
            k: 4,
            batch_size: 256,
        }
    }
}

impl EvalConfig {
    pub fn scoring(&self) -> Scoring {
        if self.margin {
            Scoring::Margin {
                kind: self.margin_kind,
                k: self.k,
            }
        } else {
            Scoring::Cosine
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub setup: TrainSetup,
    pub filter: FilterRules,
    /// Target size of the subword vocabulary.
    pub vocab_size: usize,
    pub eval: EvalConfig,
    pub probe: ProbeConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            setup: TrainSetup::default(),
            filter: FilterRules::default(),
            vocab_size: 1000,
            eval: EvalConfig::default(),
            probe: ProbeConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl Default for TrainSetup {
    fn default() -> Self {
        Self {
            model: EncoderConfig::desk(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            batch: BatchConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "model.preset",
    "model.n_layers",
    "model.d_model",
    "model.d_ff",
    "model.n_heads",
    "model.vocab_size",
    "model.max_len",
    "model.dropout",
    "model.pre_norm",
    "model.head_activation",
    "model.gen_source",
    "loss.generative",
    "loss.use_generative",
    "loss.use_align",
    "loss.use_sim",
    "loss.weights",
    "loss.reduction",
    "train.epochs",
    "train.lr",
    "train.warmup_epochs",
    "train.batch_size",
    "train.betas",
    "train.eps",
    "train.seed",
    "train.checkpoint_every_steps",
    "train.grad_clip",
    "corpus.label_weighting",
    "corpus.unmasked_label",
    "corpus.mlm_prob",
    "filter.max_len",
    "filter.src_charset",
    "filter.tgt_charset",
    "vocab.size",
    "eval.scoring",
    "eval.margin",
    "eval.k",
    "eval.batch_size",
    "probe.lr",
    "probe.iters",
    "probe.l2",
    "probe.standardize",
    "synth.words_per_lang",
    "synth.train_pairs",
    "synth.val_pairs",
    "synth.test_pairs",
    "synth.n_classes",
    "synth.class_pool",
    "synth.class_word_prob",
    "synth.min_len",
    "synth.max_len",
    "synth.identity_mapping",
    "synth.swap_adjacent",
];

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| e.to_string())
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn parse_list<const N: usize>(v: &str) -> Result<[f64; N], String> {
    let items: Vec<f64> = v.split(',').map(parse).collect::<Result<_, _>>()?;
    items.try_into().map_err(|_| format!("expected {N} comma-separated numbers"))
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn encoder_preset(name: &str) -> Result<EncoderConfig, String> {
    match name.trim() {
        "desk" => Ok(EncoderConfig::desk()),
        "paper" => Ok(EncoderConfig::paper()),
        _ => Err("expected desk or paper".into()),
    }
}

/// Sets one `model.*` key (except the preset).
pub fn apply_encoder_key(m: &mut EncoderConfig, key: &str, v: &str) -> Result<(), String> {
    match key {
        "model.n_layers" => m.n_layers = parse(v)?,
        "model.d_model" => m.d_model = parse(v)?,
        "model.d_ff" => m.d_ff = parse(v)?,
        "model.n_heads" => m.n_heads = parse(v)?,
        "model.vocab_size" => m.vocab_size = parse(v)?,
        "model.max_len" => m.max_len = parse(v)?,
        "model.dropout" => m.dropout_p = parse(v)?,
        "model.pre_norm" => m.pre_norm = parse_bool(v)?,
        "model.head_activation" => {
            m.head_activation = match v.trim() {
                "tanh" => HeadActivation::Tanh,
                "linear" => HeadActivation::Linear,
                _ => return Err("expected tanh or linear".into()),
            }
        }
        "model.gen_source" => {
            m.gen_source = match v.trim() {
                "pooled" => GenSource::Pooled,
                "masked_state" => GenSource::MaskedState,
                _ => return Err("expected pooled or masked_state".into()),
            }
        }
        _ => return Err(format!("unknown model key {key}")),
    }
    Ok(())
}

/// Every `model.*` field as key/value pairs.
pub fn encoder_entries(m: &EncoderConfig) -> Vec<(String, String)> {
    let kv = |k: &str, v: String| (k.to_string(), v);
    vec![
        kv("model.n_layers", m.n_layers.to_string()),
        kv("model.d_model", m.d_model.to_string()),
        kv("model.d_ff", m.d_ff.to_string()),
        kv("model.n_heads", m.n_heads.to_string()),
        kv("model.vocab_size", m.vocab_size.to_string()),
        kv("model.max_len", m.max_len.to_string()),
        kv("model.dropout", fmt_f64(m.dropout_p)),
        kv("model.pre_norm", m.pre_norm.to_string()),
        kv(
            "model.head_activation",
            match m.head_activation {
                HeadActivation::Tanh => "tanh",
                HeadActivation::Linear => "linear",
            }
            .into(),
        ),
        kv(
            "model.gen_source",
            match m.gen_source {
                GenSource::Pooled => "pooled",
                GenSource::MaskedState => "masked_state",
            }
            .into(),
        ),
    ]
}

impl RunConfig {
    /// Applies one assignment. `model.preset` replaces the whole model block.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.set_inner(key, value.trim()) {
            Ok(true) => Ok(()),
            Ok(false) => Err(ConfigError::UnknownKey {
                key: key.to_string(),
                valid: KEYS.join(", "),
            }),
            Err(detail) => Err(ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                detail,
            }),
        }
    }

    fn set_inner(&mut self, key: &str, v: &str) -> Result<bool, String> {
        let s = &mut self.setup;
        match key {
            "model.preset" => s.model = encoder_preset(v)?,
            k if k.starts_with("model.") && KEYS.contains(&k) => apply_encoder_key(&mut s.model, k, v)?,
            "loss.generative" => s.loss.generative_mode = parse::<GenerativeMode>(v)?,
            "loss.use_generative" => s.loss.use_generative = parse_bool(v)?,
            "loss.use_align" => s.loss.use_align = parse_bool(v)?,
            "loss.use_sim" => s.loss.use_sim = parse_bool(v)?,
            "loss.weights" => s.loss.weights = parse_list::<3>(v)?,
            "loss.reduction" => s.loss.reduction = parse::<Reduction>(v)?,
            "train.epochs" => s.train.epochs = parse(v)?,
            "train.lr" => s.train.lr = parse(v)?,
            "train.warmup_epochs" => s.train.warmup_epochs = parse(v)?,
            "train.batch_size" => s.train.batch_size = parse(v)?,
            "train.betas" => [s.train.adam.beta1, s.train.adam.beta2] = parse_list::<2>(v)?,
            "train.eps" => s.train.adam.eps = parse(v)?,
            "train.seed" => s.train.seed = parse(v)?,
            "train.checkpoint_every_steps" => s.train.checkpoint_every_steps = parse(v)?,
            "train.grad_clip" => s.train.grad_clip = parse(v)?,
            "corpus.label_weighting" => {
                s.batch.weighting = match v {
                    "distinct" => LabelWeighting::Distinct,
                    "frequency" => LabelWeighting::Frequency,
                    _ => return Err("expected distinct or frequency".into()),
                }
            }
            "corpus.unmasked_label" => {
                s.batch.unmasked_label = match v {
                    "unified" => UnmaskedLabel::Unified,
                    "reconstruction" => UnmaskedLabel::Reconstruction,
                    _ => return Err("expected unified or reconstruction".into()),
                }
            }
            "corpus.mlm_prob" => s.batch.mlm_prob = parse(v)?,
            "filter.max_len" => self.filter.max_len = parse(v)?,
            "filter.src_charset" => self.filter.src_charset = parse::<CharsetRule>(v)?,
            "filter.tgt_charset" => self.filter.tgt_charset = parse::<CharsetRule>(v)?,
            "vocab.size" => self.vocab_size = parse(v)?,
            "eval.scoring" => {
                self.eval.margin = match v {
                    "margin" => true,
                    "cosine" => false,
                    _ => return Err("expected cosine or margin".into()),
                }
            }
            "eval.margin" => self.eval.margin_kind = parse(v)?,
            "eval.k" => self.eval.k = parse(v)?,
            "eval.batch_size" => self.eval.batch_size = parse(v)?,
            "probe.lr" => self.probe.lr = parse(v)?,
            "probe.iters" => self.probe.iters = parse(v)?,
            "probe.l2" => self.probe.l2 = parse(v)?,
            "probe.standardize" => self.probe.standardize = parse_bool(v)?,
            "synth.words_per_lang" => self.synth.words_per_lang = parse(v)?,
            "synth.train_pairs" => self.synth.train_pairs = parse(v)?,
            "synth.val_pairs" => self.synth.val_pairs = parse(v)?,
            "synth.test_pairs" => self.synth.test_pairs = parse(v)?,
            "synth.n_classes" => self.synth.n_classes = parse(v)?,
            "synth.class_pool" => self.synth.class_pool = parse(v)?,
            "synth.class_word_prob" => self.synth.class_word_prob = parse(v)?,
            "synth.min_len" => self.synth.min_len = parse(v)?,
            "synth.max_len" => self.synth.max_len = parse(v)?,
            "synth.identity_mapping" => self.synth.identity_mapping = parse_bool(v)?,
            "synth.swap_adjacent" => self.synth.swap_adjacent = parse_bool(v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every addressable field except the preset, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let s = &self.setup;
        let mut out = encoder_entries(&s.model);
        let mut kv = |k: &str, v: String| out.push((k.to_string(), v));
        kv("loss.generative", s.loss.generative_mode.to_string());
        kv("loss.use_generative", s.loss.use_generative.to_string());
        kv("loss.use_align", s.loss.use_align.to_string());
        kv("loss.use_sim", s.loss.use_sim.to_string());
        kv("loss.weights", s.loss.weights.map(fmt_f64).join(","));
        kv("loss.reduction", s.loss.reduction.to_string());
        kv("train.epochs", s.train.epochs.to_string());
        kv("train.lr", fmt_f64(s.train.lr));
        kv("train.warmup_epochs", s.train.warmup_epochs.to_string());
        kv("train.batch_size", s.train.batch_size.to_string());
        kv("train.betas", format!("{},{}", s.train.adam.beta1, s.train.adam.beta2));
        kv("train.eps", fmt_f64(s.train.adam.eps));
        kv("train.seed", s.train.seed.to_string());
        kv("train.checkpoint_every_steps", s.train.checkpoint_every_steps.to_string());
        kv("train.grad_clip", fmt_f64(s.train.grad_clip));
        kv(
            "corpus.label_weighting",
            match s.batch.weighting {
                LabelWeighting::Distinct => "distinct",
                LabelWeighting::Frequency => "frequency",
            }
            .into(),
        );
        kv(
            "corpus.unmasked_label",
            match s.batch.unmasked_label {
                UnmaskedLabel::Unified => "unified",
                UnmaskedLabel::Reconstruction => "reconstruction",
            }
            .into(),
        );
        kv("corpus.mlm_prob", fmt_f64(s.batch.mlm_prob));
        kv("filter.max_len", self.filter.max_len.to_string());
        kv("filter.src_charset", self.filter.src_charset.to_string());
        kv("filter.tgt_charset", self.filter.tgt_charset.to_string());
        kv("vocab.size", self.vocab_size.to_string());
        kv("eval.scoring", if self.eval.margin { "margin" } else { "cosine" }.into());
        kv("eval.margin", self.eval.margin_kind.to_string());
        kv("eval.k", self.eval.k.to_string());
        kv("eval.batch_size", self.eval.batch_size.to_string());
        kv("probe.lr", fmt_f64(self.probe.lr));
        kv("probe.iters", self.probe.iters.to_string());
        kv("probe.l2", fmt_f64(self.probe.l2));
        kv("probe.standardize", self.probe.standardize.to_string());
        let y = &self.synth;
        kv("synth.words_per_lang", y.words_per_lang.to_string());
        kv("synth.train_pairs", y.train_pairs.to_string());
        kv("synth.val_pairs", y.val_pairs.to_string());
        kv("synth.test_pairs", y.test_pairs.to_string());
        kv("synth.n_classes", y.n_classes.to_string());
        kv("synth.class_pool", y.class_pool.to_string());
        kv("synth.class_word_prob", fmt_f64(y.class_word_prob));
        kv("synth.min_len", y.min_len.to_string());
        kv("synth.max_len", y.max_len.to_string());
        kv("synth.identity_mapping", y.identity_mapping.to_string());
        kv("synth.swap_adjacent", y.swap_adjacent.to_string());
        out
    }

    /// The resolved config as a config file.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Applies a list of assignments, the preset first.
    pub fn apply(&mut self, assignments: &[(String, String)]) -> Result<(), ConfigError> {
        if let Some((k, v)) = assignments.iter().rev().find(|(k, _)| k == "model.preset") {
            self.set(k, v)?;
        }
        for (k, v) in assignments.iter().filter(|(k, _)| k != "model.preset") {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Resolves file, then `DUOSENT_SEED` (passed in), then `--set` values.
    pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut assignments = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.display().to_string(),
                source,
            })?;
            assignments.extend(parse_lines(&text, &path.display().to_string())?);
        }
        if let Some(seed) = env_seed {
            assignments.push(("train.seed".to_string(), seed.to_string()));
        }
        for (i, o) in overrides.iter().enumerate() {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Syntax {
                source_name: "--set".into(),
                line: i + 1,
                text: o.clone(),
            })?;
            assignments.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::default();
        cfg.apply(&assignments)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.setup.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.synth.validate().map_err(ConfigError::Invalid)?;
        if self.eval.k == 0 {
            return Err(ConfigError::Invalid("eval.k must be at least 1".into()));
        }
        if self.eval.batch_size == 0 {
            return Err(ConfigError::Invalid("eval.batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_lines(text: &str, source_name: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            source_name: source_name.to_string(),
            line: i + 1,
            text: raw.to_string(),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
