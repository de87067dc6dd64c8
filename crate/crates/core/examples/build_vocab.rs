//! Learns a subword vocabulary from a small bilingual corpus and shows how
//! sentences are split.

use duosent::synthetic::{make_synthetic_corpus, SynthConfig};
use duosent::tokenizer::train_bpe;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = make_synthetic_corpus(&SynthConfig::default(), 0)?;
    let text = corpus.train.iter().flat_map(|p| [p.a.as_str(), p.b.as_str()]);
    let vocab = train_bpe(text, 600)?;
    println!("vocabulary: {} entries, {} merges", vocab.size(), vocab.merges().len());
    for p in corpus.test.iter().take(3) {
        for s in [&p.a, &p.b] {
            let seq = vocab.encode(s);
            let pieces: Vec<&str> = seq.ids.iter().map(|&i| vocab.token(i).unwrap_or("?")).collect();
            println!("{s:40} -> {}", pieces.join(" "));
        }
    }
    Ok(())
}
