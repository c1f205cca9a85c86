//! Finite-difference checks of the reverse-mode engine: first a tiny
//! function, then the whole scoring pipeline under a BPR loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stance::cli::{gradcheck_model, offset_conv_biases};
use stance::diffmath::{grad_check, Tensor};
use stance::encoder::build_vocab;
use stance::scorer::{ModelConfig, ModelParams, ScoreVariant};

fn main() -> stance::Result<()> {
    // f(W, x) = sum(tanh(W x))
    let w = Tensor::from_rows(&[vec![0.3, -1.2], vec![0.8, 0.1], vec![-0.5, 0.4]])?;
    let x = Tensor::from_rows(&[vec![1.5], vec![-0.7]])?;
    let r = grad_check(
        |tape, v| {
            let h = tape.matmul(v[0], v[1])?;
            let h = tape.tanh(h)?;
            tape.sum(h)
        },
        &[w, x],
        1e-3,
    )?;
    println!("tanh(Wx): max relative error {:.2e} over {} entries", r.max_rel_error, r.entries_checked);

    let (q, p, n) = ("Paul Lieberstein", "Lieberstein, Paul", "Paula Steiner");
    let vocab = build_vocab([q, p, n], 1)?;
    let cfg = ModelConfig { max_len: 16, embed_dim: 4, hidden: 4, channels: [2, 2, 2], sinkhorn_iters: 20, ..Default::default() };
    for variant in ScoreVariant::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::init(cfg.clone(), variant, vocab.clone(), &mut rng)?;
        offset_conv_biases(&mut params, &mut rng)?;
        let r = gradcheck_model(&params, q, p, n, 1e-3)?;
        println!("{variant:<12} max relative error {:.2e} over {} entries", r.max_rel_error, r.entries_checked);
    }
    Ok(())
}
