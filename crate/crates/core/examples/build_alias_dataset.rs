//! Writes a synthetic alias corpus and the dataset built from it.
//!
//! `cargo run --release --example build_alias_dataset -- OUT_DIR [entities]`
//!
//! The corpus lands in `OUT_DIR/aliases.tsv`; the `stance build-dataset`
//! command accepts the same file.

use std::path::PathBuf;

use stance::aliasdata::synth::{generate, SynthConfig};
use stance::aliasdata::{build_dataset, hop_distance, DatasetConfig};

fn main() -> stance::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "alias_data".into()));
    let entities: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);

    let graph = generate(&SynthConfig::new(entities, 11));
    std::fs::create_dir_all(&out).map_err(|e| stance::Error::Io { path: out.clone(), source: e })?;
    let corpus = out.join("aliases.tsv");
    std::fs::write(&corpus, graph.to_tsv()).map_err(|e| stance::Error::Io { path: corpus.clone(), source: e })?;
    println!("{}", graph.stats());

    let e0 = graph.entity_id(&graph.entities()[0]).unwrap();
    let names: Vec<&str> = graph.aliases_of(e0).iter().map(|&m| graph.mention(m)).collect();
    println!("aliases of {}: {names:?}", graph.entity(e0));
    if let [a, b, ..] = names.as_slice() {
        println!("hop distance {a:?} to {b:?}: {:?}", hop_distance(&graph, a, b)?);
    }

    let cfg = DatasetConfig { ratios: [0.6, 0.2, 0.2], neg_budget: 30, train_neg_budget: 30, dev_queries: 60, test_queries: 200, train_triples: 5000, seed: 11 };
    let data = build_dataset(&graph, &cfg)?;
    data.write(&out)?;
    print!("{}", data.stats_report());
    println!("wrote {}", out.display());
    Ok(())
}
