//! Compares analytic gradients with central differences, for one op and for
//! the whole encoder.

use duosent::model::{encode, EncoderConfig, EncoderParams};
use duosent::corpus::SideBatch;
use duosent::tensor::gradcheck::check;
use duosent::tensor::{Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let inputs = [random(&mut rng, &[3, 6]), random(&mut rng, &[6]), random(&mut rng, &[6])];
    let r = check(&inputs, 1e-6, |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
        let y = g.tanh(y)?;
        g.sum(y)
    })?;
    println!("layer_norm + tanh: relative error {:.2e}", r.max_rel_error());

    let cfg = EncoderConfig {
        n_layers: 1,
        d_model: 8,
        d_ff: 16,
        n_heads: 2,
        vocab_size: 20,
        max_len: 8,
        ..EncoderConfig::desk()
    };
    let params: EncoderParams<f64> = EncoderParams::init(&cfg, &mut rng)?;
    let inputs: Vec<Tensor<f64>> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    let side = SideBatch::from_seqs(&[vec![5usize, 9, 12], vec![7, 7]]);
    let r = check(&inputs, 1e-6, |g, v| {
        let bound = duosent::model::BoundParams::from_vars(v.to_vec(), cfg.n_layers);
        let e = encode::<f64, ChaCha8Rng>(g, &bound, &cfg, &side, None).map_err(|e| TensorError::Numeric {
            op: "encode",
            detail: e.to_string(),
        })?;
        let sq = g.mul(e.reps, e.reps)?;
        g.sum(sq)
    })?;
    println!("encoder ({} tensors): relative error {:.2e}", inputs.len(), r.max_rel_error());
    Ok(())
}
