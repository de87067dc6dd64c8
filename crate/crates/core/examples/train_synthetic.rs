//! Trains on the synthetic bilingual corpus and reports retrieval and
//! transfer. Extra arguments are `key=value` config overrides, e.g.
//!
//!     cargo run --release --example train_synthetic -- train.epochs=20 train.seed=3

use duosent::config::RunConfig;
use duosent::experiment::run_synthetic;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let cfg = RunConfig::resolve(None, None, &overrides)?;
    let r = run_synthetic(&cfg)?;
    println!("{}", r.summary());
    println!("epoch losses: {:?}", r.epoch_losses.iter().map(|l| (l * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    Ok(())
}
