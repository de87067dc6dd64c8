//! Command-line front end. Exit codes: 0 success, 1 input or I/O error,
//! 2 numeric divergence during training.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, SEED_ENV};
use crate::corpus::{filter_pairs, read_parallel, tokenize_pairs, CorpusError};
use crate::eval::{evaluate_retrieval, train_probe, zero_shot_transfer, Embeddings, EvalError, EvalIndex};
use crate::experiment::{run_synthetic, ExperimentError};
use crate::io::write_atomic;
use crate::losses::GenerativeMode;
use crate::model::count_params;
use crate::synthetic::{make_synthetic_corpus, read_labels};
use crate::tokenizer::{train_bpe, TokenizerError, Vocab};
use crate::trainer::{load_model, TrainError, Trainer};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Train(TrainError::Diverged { .. })
            | CliError::Experiment(ExperimentError::Train(TrainError::Diverged { .. })) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "duosent", version, about = "Dual-encoder cross-lingual sentence representations")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a BPE vocabulary of `vocab.size` entries from text files.
    BuildVocab {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop empty, over-long and wrong-script pairs from a parallel corpus.
    Filter {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        out_src: PathBuf,
        #[arg(long)]
        out_tgt: PathBuf,
        /// Needed for the length rule.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train the encoder; writes checkpoint, optimizer state, metrics and config into OUT.
    Train {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint already in OUT.
        #[arg(long)]
        resume: bool,
    },
    /// Embed one sentence per line; ids are 0-based line numbers.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// P@1 of query embeddings against target embeddings, gold matched by id.
    Retrieve {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// Per-query TSV report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a probe on one language and test it on another.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        train_labels: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        val_labels: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        test_labels: PathBuf,
    },
    /// Run a grid of objectives on the synthetic task, one row per cell.
    Ablate {
        /// `generative=MLM,SMLM,XTR,UGT` and `contrastive=none,align,align+sim`.
        #[arg(long, num_args = 1.., required = true)]
        grid: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the encoder parameter count.
    CountParams,
    /// Write the synthetic bilingual corpus (train/val/test with labels).
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text.lines().map(String::from).collect())
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

/// Contrastive settings of one ablation column: (use_align, use_sim).
fn contrastive(name: &str) -> Result<(bool, bool), CliError> {
    match name {
        "none" => Ok((false, false)),
        "align" => Ok((true, false)),
        "sim" => Ok((false, true)),
        "align+sim" => Ok((true, true)),
        _ => Err(CliError::Usage(format!(
            "unknown contrastive setting {name:?} (none, align, sim, align+sim)"
        ))),
    }
}

/// Parses `generative=...` and `contrastive=...` grid axes.
pub fn parse_grid(specs: &[String]) -> Result<Vec<(GenerativeMode, String)>, CliError> {
    let mut gens = vec![GenerativeMode::Ugt];
    let mut cons = vec!["align+sim".to_string()];
    for spec in specs {
        let (axis, values) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("grid axis {spec:?} is not axis=v1,v2")))?;
        match axis {
            "generative" => {
                gens = values
                    .split(',')
                    .map(|v| v.parse::<GenerativeMode>().map_err(CliError::Usage))
                    .collect::<Result<_, _>>()?
            }
            "contrastive" => {
                cons = values.split(',').map(String::from).collect();
                for c in &cons {
                    contrastive(c)?;
                }
            }
            _ => return Err(CliError::Usage(format!("unknown grid axis {axis:?} (generative, contrastive)"))),
        }
    }
    Ok(gens.iter().flat_map(|&g| cons.iter().map(move |c| (g, c.clone()))).collect())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = RunConfig::resolve(cli.common.config.as_deref(), env_seed.as_deref(), &cli.common.sets)?;
    for line in cfg.to_text().lines() {
        log::info!("config {line}");
    }
    match cli.command {
        Command::BuildVocab { inputs, out } => {
            let mut lines = Vec::new();
            for p in &inputs {
                lines.extend(read_lines(p)?);
            }
            let vocab = train_bpe(&lines, cfg.vocab_size)?;
            vocab.save(&out)?;
            println!("vocab_size={}", vocab.size());
        }
        Command::Filter {
            src,
            tgt,
            out_src,
            out_tgt,
            vocab,
        } => {
            let vocab = vocab.map(|p| Vocab::load(&p)).transpose()?;
            let pairs = read_parallel(&src, &tgt)?;
            let (kept, report) = filter_pairs(pairs, &cfg.filter, vocab.as_ref());
            let join = |f: &dyn Fn(&(String, String)) -> &str| kept.iter().map(|p| format!("{}\n", f(p))).collect::<String>();
            write_out(&out_src, &join(&|p| &p.0))?;
            write_out(&out_tgt, &join(&|p| &p.1))?;
            print!("{}", report.to_kv());
        }
        Command::Train {
            src,
            tgt,
            vocab,
            out,
            resume,
        } => {
            let vocab = Vocab::load(&vocab)?;
            let pairs = tokenize_pairs(&vocab, &read_parallel(&src, &tgt)?);
            let mut setup = cfg.setup.clone();
            if setup.model.vocab_size != vocab.size() {
                log::info!("model.vocab_size set to {} to match the vocabulary", vocab.size());
                setup.model.vocab_size = vocab.size();
            }
            let mut resolved = cfg.clone();
            resolved.setup = setup.clone();
            write_out(&out.join("config.txt"), &resolved.to_text())?;
            let mut trainer = if resume {
                Trainer::resume(setup, &pairs, &out)?
            } else {
                Trainer::new(setup, &pairs)?
            };
            trainer.run(Some(&out))?;
            let last = trainer.records().last().map_or(f64::NAN, |r| r.loss.total);
            println!("steps={} final_loss={last:.6}", trainer.step());
        }
        Command::Encode {
            checkpoint,
            vocab,
            input,
            out,
        } => {
            let model = load_model(&checkpoint)?;
            let vocab = Vocab::load(&vocab)?;
            let lines = read_lines(&input)?;
            let seqs: Vec<_> = lines.iter().map(|l| vocab.encode(l).ids).collect();
            if let Some(i) = seqs.iter().position(|s| s.is_empty()) {
                return Err(CliError::Usage(format!("{}:{}: empty sentence", input.display(), i + 1)));
            }
            let vectors = model.embed(&seqs, cfg.eval.batch_size).map_err(EvalError::from)?;
            let ids = (0..vectors.len()).map(|i| i.to_string()).collect();
            Embeddings { ids, vectors }.save(&out)?;
            println!("encoded={}", lines.len());
        }
        Command::Retrieve {
            queries,
            targets,
            report,
        } => {
            let q = Embeddings::load(&queries)?;
            let t = Embeddings::load(&targets)?;
            let qi = EvalIndex::new(q.ids, &q.vectors)?;
            let ti = EvalIndex::new(t.ids, &t.vectors)?;
            let r = evaluate_retrieval(&qi, &ti, cfg.eval.scoring())?;
            if let Some(p) = report {
                write_out(&p, &r.to_tsv())?;
            }
            println!("p_at_1={:.6}", r.p_at_1());
        }
        Command::Transfer {
            checkpoint,
            vocab,
            train,
            train_labels,
            val,
            val_labels,
            test,
            test_labels,
        } => {
            let model = load_model(&checkpoint)?;
            let vocab = Vocab::load(&vocab)?;
            let bs = cfg.eval.batch_size;
            let enc = |p: &Path| -> Result<Vec<Vec<usize>>, CliError> {
                Ok(read_lines(p)?.iter().map(|l| vocab.encode(l).ids).collect())
            };
            let embed = |p: &Path| -> Result<Vec<Vec<f32>>, CliError> {
                Ok(model.embed(&enc(p)?, bs).map_err(EvalError::from)?)
            };
            let probe = train_probe(
                &embed(&train)?,
                &read_labels(&train_labels)?,
                &embed(&val)?,
                &read_labels(&val_labels)?,
                &cfg.probe,
            )?;
            let acc = zero_shot_transfer(&model, &probe, &enc(&test)?, &read_labels(&test_labels)?, bs)?;
            println!("val_accuracy={:.6} transfer_accuracy={acc:.6}", probe.best_val_accuracy);
        }
        Command::Ablate { grid, out } => {
            let cells = parse_grid(&grid)?;
            let mut tsv = String::from("generative\tcontrastive\tp_at_1_ab\tp_at_1_ba\ttransfer\tfinal_loss\n");
            for (mode, con) in cells {
                let mut c = cfg.clone();
                c.setup.loss.generative_mode = mode;
                (c.setup.loss.use_align, c.setup.loss.use_sim) = contrastive(&con)?;
                let r = run_synthetic(&c)?;
                let row = format!(
                    "{mode}\t{con}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                    r.p_at_1_ab,
                    r.p_at_1_ba,
                    r.transfer_accuracy,
                    r.epoch_losses.last().copied().unwrap_or(f64::NAN)
                );
                println!("{row}");
                let _ = writeln!(tsv, "{row}");
            }
            if let Some(p) = out {
                write_out(&p, &tsv)?;
            }
        }
        Command::CountParams => {
            let n = count_params(&cfg.setup.model);
            println!("params={n} ({:.1}M)", n as f64 / 1e6);
        }
        Command::MakeSynthetic { out } => {
            let corpus = make_synthetic_corpus(&cfg.synth, cfg.setup.train.seed).map_err(CliError::Usage)?;
            corpus.write(&out)?;
            println!(
                "train={} val={} test={}",
                corpus.train.len(),
                corpus.val.len(),
                corpus.test.len()
            );
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
