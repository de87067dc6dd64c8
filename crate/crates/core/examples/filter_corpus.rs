//! Applies the pair filter to a handful of sentence pairs and prints what was
//! dropped and why.

use duosent::corpus::{check_pair, filter_pairs, FilterRules};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = vec![
        ("the cat sleeps".to_string(), "кошка спит".to_string()),
        ("".to_string(), "пусто".to_string()),
        ("mixed алфавит".to_string(), "смешанный".to_string()),
        ("a dog".to_string(), "собака".to_string()),
    ];
    let rules = FilterRules {
        max_len: 32,
        src_charset: "latin".parse()?,
        tgt_charset: "cyrillic".parse()?,
    };
    for (s, t) in &pairs {
        match check_pair(s, t, &rules, None) {
            Ok(()) => println!("keep  {s:?} / {t:?}"),
            Err(why) => println!("drop  {s:?} / {t:?}: {why:?}"),
        }
    }
    let (_, report) = filter_pairs(pairs, &rules, None);
    print!("{}", report.to_kv());
    Ok(())
}
