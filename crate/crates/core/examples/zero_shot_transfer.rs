//! Trains briefly on the synthetic corpus, fits a topic probe on language A
//! embeddings and applies it unchanged to language B.

use duosent::config::RunConfig;
use duosent::experiment::run_synthetic;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut sets = vec!["train.epochs=6".to_string(), "train.warmup_epochs=2".to_string()];
    sets.extend(std::env::args().skip(1));
    let cfg = RunConfig::resolve(None, None, &sets)?;
    let r = run_synthetic(&cfg)?;
    println!("probe accuracy on A:      {:.3}", r.source_accuracy);
    println!("transfer accuracy on B:   {:.3}", r.transfer_accuracy);
    println!("chance:                   {:.3}", r.chance);
    Ok(())
}
