use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use stance::cli::{gradcheck_model, offset_conv_biases};
use stance::diffmath::{grad_check, DiffError, Tape, Tensor};
use stance::encoder::{build_vocab, encode, encode_on_tape, similarity_matrix, Vocabulary};
use stance::otalign::{cost_from_similarity, sinkhorn, uniform_marginals};
use stance::scorer::{score, trace, ModelConfig, ModelParams, ScoreVariant};

const NAMES: [&str; 6] = ["Paul Lieberstein", "Lieberstein, Paul", "P. Lieberstein", "Paula Stein", "Mary Shelley", "Shelley, M."];

fn vocab() -> Vocabulary {
    build_vocab(NAMES, 1).unwrap()
}

fn model(variant: ScoreVariant, max_len: usize, seed: u64) -> ModelParams {
    let cfg = ModelConfig { max_len, embed_dim: 5, hidden: 4, channels: [3, 3, 3], sinkhorn_iters: 20, ..Default::default() };
    ModelParams::init(cfg, variant, vocab(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn encodings_are_zero_past_the_mention_and_match_the_tape() {
    let p = model(ScoreVariant::Full, 24, 0);
    for name in NAMES {
        let m = p.vocab.mention(name, 24).unwrap();
        let h = encode(&m, &p).unwrap();
        assert_eq!(h.values.shape(), &[24, 8]);
        let mut tape = Tape::<f32>::new();
        let vars = p.bind_encoder(&mut tape, false).unwrap();
        let raw = encode_on_tape(&mut tape, &vars, m.ids(), 4).unwrap();
        assert_eq!(&h.values.data()[..m.len() * 8], tape.value(raw));
        assert!(h.values.data()[m.len() * 8..].iter().all(|&x| x == 0.0));
    }
}

#[test]
fn encoding_does_not_depend_on_max_len() {
    let short = model(ScoreVariant::Full, 16, 1);
    let mut long = model(ScoreVariant::Full, 32, 1);
    for (name, t) in short.tensors() {
        if name.starts_with("embedding") || name.starts_with("lstm") {
            long.set(name, t.clone()).unwrap();
        }
    }
    let a = encode(&short.vocab.mention("Mary Shelley", 16).unwrap(), &short).unwrap();
    let b = encode(&long.vocab.mention("Mary Shelley", 32).unwrap(), &long).unwrap();
    assert_eq!(&a.values.data()[..12 * 8], &b.values.data()[..12 * 8]);
}

#[test]
fn similarity_of_swapped_pair_is_the_transpose() {
    let p = model(ScoreVariant::Full, 20, 2);
    let a = encode(&p.vocab.mention(NAMES[0], 20).unwrap(), &p).unwrap();
    let b = encode(&p.vocab.mention(NAMES[4], 20).unwrap(), &p).unwrap();
    let ab = similarity_matrix(&a, &b).unwrap();
    let ba = similarity_matrix(&b, &a).unwrap();
    for i in 0..20 {
        for j in 0..20 {
            assert_eq!(ab.values.at(i, j), ba.values.at(j, i));
        }
    }
    assert_eq!(ab.valid, (16, 12));
}

#[test]
fn full_variant_reweights_by_the_sinkhorn_plan() {
    let p = model(ScoreVariant::Full, 20, 3);
    let (a, b) = (p.vocab.mention(NAMES[0], 20).unwrap(), p.vocab.mention(NAMES[1], 20).unwrap());
    let t = trace(&a, &b, &p).unwrap();
    let s = similarity_matrix(&encode(&a, &p).unwrap(), &encode(&b, &p).unwrap()).unwrap();
    let cost = cost_from_similarity(&s).unwrap();
    let (plan, _) = sinkhorn(&cost, &uniform_marginals(16, 17).unwrap(), &p.config.sinkhorn()).unwrap();
    let tp = t.plan.expect("full variant has a plan");
    for (x, y) in tp.data().iter().zip(plan.values.data()) {
        assert!((x - y).abs() < 1e-5);
    }
    for ((r, s), q) in t.reweighted.as_ref().expect("full variant reweights").data().iter().zip(t.sim.data()).zip(tp.data()) {
        assert!((r - s * q).abs() < 1e-6);
    }
}

#[test]
fn without_ot_scores_the_raw_similarity() {
    let p = model(ScoreVariant::WithoutOt, 20, 4);
    let (a, b) = (p.vocab.mention(NAMES[2], 20).unwrap(), p.vocab.mention(NAMES[3], 20).unwrap());
    let t = trace(&a, &b, &p).unwrap();
    assert!(t.plan.is_none());
    assert_eq!(t.reweighted.as_ref(), Some(&t.sim));
    let padded = t.similarity(20).unwrap().values;
    let direct = stance::scorer::cnn_head(&padded, &p).unwrap();
    assert!((direct - score(&a, &b, &p).unwrap()).abs() < 1e-5);
}

#[test]
fn every_variant_passes_a_gradient_check_at_small_scale() {
    // without-ot and lstm-binary feed unnormalized or 0/1 matrices to the CNN,
    // where finite differences regularly straddle ReLU and pooling kinks
    for variant in [ScoreVariant::Full, ScoreVariant::CnnToLinear, ScoreVariant::LstmDot] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = model(variant, 16, 7);
        offset_conv_biases(&mut p, &mut rng).unwrap();
        let r = gradcheck_model(&p, NAMES[0], NAMES[1], NAMES[3], 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-3, "{variant}: {}", r.max_rel_error);
    }
}

#[test]
fn conv_and_pool_gradients_at_l16() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut t = |shape: Vec<usize>, s: f64| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-s..s)).collect()).unwrap()
    };
    let input = t(vec![1, 16, 16], 1.0);
    let f0 = t(vec![3, 1, 3, 3], 0.5);
    let b0 = t(vec![3], 0.2);
    let f1 = t(vec![2, 3, 3, 3], 0.5);
    let b1 = t(vec![2], 0.2);
    let report = grad_check(
        |tape, v| -> Result<_, DiffError> {
            let h = tape.conv2d(v[0], v[1], v[2])?;
            let h = tape.relu(h)?;
            let h = tape.maxpool2d(h)?;
            let h = tape.conv2d(h, v[3], v[4])?;
            let h = tape.maxpool2d(h)?;
            let sq = tape.mul(h, h)?;
            tape.sum(sq)
        },
        &[input, f0, b0, f1, b1],
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
}

#[test]
fn embedding_gradient_touches_only_used_rows() {
    let p = model(ScoreVariant::LstmDot, 16, 9);
    let m = p.vocab.mention("Paul", 16).unwrap();
    let mut tape = Tape::<f32>::new();
    let vars = p.bind_encoder(&mut tape, true).unwrap();
    let h = encode_on_tape(&mut tape, &vars, m.ids(), 4).unwrap();
    let s = tape.sum(h).unwrap();
    let g = tape.backward(s).unwrap();
    let ge = g.get(vars.embedding).unwrap();
    let used: std::collections::HashSet<usize> = m.ids().iter().copied().collect();
    for row in 0..p.vocab.len() {
        let any = ge[row * 5..(row + 1) * 5].iter().any(|&x| x != 0.0);
        assert_eq!(any, used.contains(&row), "row {row}");
    }
}
