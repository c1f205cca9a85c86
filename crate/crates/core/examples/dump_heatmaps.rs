//! Trains a small model for a few seconds, then draws the similarity,
//! transport and reweighted matrices for one alias pair as text heatmaps.
//!
//! `cargo run --release --example dump_heatmaps -- [seconds] [a] [b]`

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stance::aliasdata::synth::{generate, SynthConfig};
use stance::aliasdata::{build_dataset, DatasetConfig};
use stance::cli::pair_matrices;
use stance::diffmath::Tensor;
use stance::encoder::build_vocab;
use stance::scorer::{ModelConfig, ModelParams, ScoreVariant};
use stance::training::{train, TrainConfig};

const SHADES: [char; 6] = [' ', '.', ':', '+', '#', '@'];

fn heatmap(title: &str, t: &Tensor<f32>, a: &str, b: &str) {
    let (lo, hi) = t.data().iter().fold((f32::MAX, f32::MIN), |(l, h), &x| (l.min(x), h.max(x)));
    println!("{title}  [{lo:.3}, {hi:.3}]");
    println!("   {}", b.chars().collect::<String>());
    for (i, c) in a.chars().enumerate() {
        let row: String = t
            .row_vec(i)
            .iter()
            .map(|&x| {
                let u = if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
                SHADES[((u * (SHADES.len() - 1) as f32).round() as usize).min(SHADES.len() - 1)]
            })
            .collect();
        println!(" {c} {row}");
    }
    println!();
}

fn main() -> stance::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seconds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let a = args.get(2).cloned().unwrap_or_else(|| "Paul Lieberstein".into());
    let b = args.get(3).cloned().unwrap_or_else(|| "Lieberstein, Paul".into());

    let graph = generate(&SynthConfig::new(300, 3));
    let cfg = DatasetConfig { ratios: [0.8, 0.1, 0.1], neg_budget: 20, train_neg_budget: 20, dev_queries: 20, test_queries: 20, train_triples: 10_000, seed: 3 };
    let data = build_dataset(&graph, &cfg)?;
    let vocab = build_vocab(graph.mentions().iter().map(String::as_str).chain([a.as_str(), b.as_str()]), 1)?;
    let mc = ModelConfig { max_len: 24, embed_dim: 16, hidden: 16, channels: [8, 8, 8], sinkhorn_iters: 20, ..Default::default() };
    let params = ModelParams::init(mc, ScoreVariant::Full, vocab, &mut ChaCha8Rng::seed_from_u64(3))?;
    let tc = TrainConfig { epochs: 50, batch_size: 32, learning_rate: 3e-3, time_limit: Some(Duration::from_secs(seconds)), seed: 3, ..Default::default() };
    let out = train(&data.train, None, &tc, params, &mut |_| {})?;

    let [s, p, sp] = pair_matrices(&out.params, &a, &b)?;
    heatmap("similarity S", &s, &a, &b);
    heatmap("transport P", &p, &a, &b);
    heatmap("reweighted S∘P", &sp, &a, &b);
    Ok(())
}
