//! Generates a synthetic alias corpus, trains a small model and compares its
//! ranking quality with the Levenshtein baseline on held-out entities.
//!
//! `cargo run --release --example train_and_rank -- [seconds] [variant]`

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stance::aliasdata::synth::{generate, SynthConfig};
use stance::aliasdata::{build_dataset, DatasetConfig};
use stance::classic::ClassicMetric;
use stance::encoder::build_vocab;
use stance::evalrank::evaluate;
use stance::scorer::{ModelConfig, ModelParams, ScoreVariant};
use stance::training::{train, TrainConfig};

fn main() -> stance::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seconds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let variant: ScoreVariant = args.get(2).map_or(Ok(ScoreVariant::Full), |s| s.parse())?;

    let graph = generate(&SynthConfig::new(500, 11));
    let data = build_dataset(
        &graph,
        &DatasetConfig {
            ratios: [0.6, 0.2, 0.2],
            neg_budget: 30,
            train_neg_budget: 30,
            dev_queries: 60,
            test_queries: 200,
            train_triples: 20_000,
            seed: 11,
        },
    )?;
    print!("{}", data.stats_report());

    let vocab = build_vocab(graph.mentions().iter().map(String::as_str), 1)?;
    let cfg = ModelConfig { max_len: 24, embed_dim: 16, hidden: 16, channels: [8, 8, 8], sinkhorn_iters: 20, ..Default::default() };
    let params = ModelParams::init(cfg, variant, vocab, &mut ChaCha8Rng::seed_from_u64(11))?;
    let tc = TrainConfig {
        epochs: 100,
        batch_size: 32,
        learning_rate: 3e-3,
        time_limit: Some(Duration::from_secs(seconds)),
        seed: 11,
        ..Default::default()
    };
    let out = train(&data.train, Some(&data.dev), &tc, params, &mut |e| println!("{}", e.tsv_line()))?;

    let model = evaluate(&out.params, &data.test)?;
    let lev = evaluate(&ClassicMetric::Lev, &data.test)?;
    println!("{variant}: MAP {:.4}  Hits@1 {:.4}  ({} steps)", model.map, model.hits[0], out.steps);
    println!("lev:    MAP {:.4}  Hits@1 {:.4}", lev.map, lev.hits[0]);
    Ok(())
}
