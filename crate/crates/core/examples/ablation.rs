//! Trains the same setup with each generative objective, with and without the
//! contrastive terms, and prints a comparison table.

use duosent::config::RunConfig;
use duosent::experiment::run_synthetic;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).unwrap_or_else(|| "4".into());
    println!("generative\tcontrastive\tp_at_1_ab\tp_at_1_ba\ttransfer");
    for gen in ["UGT", "XTR", "SMLM", "MLM"] {
        for contrastive in [true, false] {
            let cfg = RunConfig::resolve(
                None,
                None,
                &[
                    format!("loss.generative={gen}"),
                    format!("loss.use_align={contrastive}"),
                    format!("loss.use_sim={contrastive}"),
                    format!("train.epochs={epochs}"),
                    "train.warmup_epochs=1".into(),
                ],
            )?;
            let r = run_synthetic(&cfg)?;
            println!(
                "{gen}\t{contrastive}\t{:.3}\t{:.3}\t{:.3}",
                r.p_at_1_ab, r.p_at_1_ba, r.transfer_accuracy
            );
        }
    }
    Ok(())
}
