//! Parameter counts for the built-in model presets.

use duosent::model::{count_params, layer_param_count, EncoderConfig};

fn main() {
    for (name, cfg) in [("desk", EncoderConfig::desk()), ("paper", EncoderConfig::paper())] {
        println!(
            "{name:>6}: {:>11} parameters ({} layers x {} per layer, d_model {}, vocab {})",
            count_params(&cfg),
            cfg.n_layers,
            layer_param_count(&cfg),
            cfg.d_model,
            cfg.vocab_size
        );
    }
}
