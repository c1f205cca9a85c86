//! The scoring function `f(m, m')` and its ablation variants.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::diffmath::{Scalar, Tape, Tensor, Var};
use crate::encoder::{encode_on_tape, EncoderVars, LstmVars, Mention, SimilarityMatrix, Vocabulary};
use crate::otalign::{cost_on_tape, sinkhorn_on_tape, uniform_marginals, SinkhornConfig, SinkhornStats};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreVariant {
    /// encode → S → Sinkhorn → S∘P → CNN → linear
    Full,
    /// CNN directly on S
    WithoutOt,
    /// linear head on the flattened padded S
    CnnToLinear,
    /// CNN on the character-equality matrix
    LstmToBinary,
    /// `S[|m|−1][|m'|−1]`
    LstmDot,
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 5] =
        [Self::Full, Self::WithoutOt, Self::CnnToLinear, Self::LstmToBinary, Self::LstmDot];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "stance",
            Self::WithoutOt => "without-ot",
            Self::CnnToLinear => "cnn-linear",
            Self::LstmToBinary => "lstm-binary",
            Self::LstmDot => "lstm-dot",
        }
    }

    fn uses_encoder(self) -> bool {
        self != Self::LstmToBinary
    }

    fn uses_cnn(self) -> bool {
        matches!(self, Self::Full | Self::WithoutOt | Self::LstmToBinary)
    }
}

impl fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model variant {s:?}")))
    }
}

/// Architecture and alignment hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// L
    pub max_len: usize,
    pub embed_dim: usize,
    /// per direction; encodings have width `2·hidden`
    pub hidden: usize,
    pub channels: [usize; 3],
    /// odd square filter size
    pub filter: usize,
    pub lambda: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            max_len: 64,
            embed_dim: 32,
            hidden: 64,
            channels: [16, 16, 16],
            filter: 3,
            lambda: 10.0,
            sinkhorn_iters: 50,
            sinkhorn_tol: 1e-6,
        }
    }
}

fn pooled(l: usize) -> usize {
    (0..3).fold(l, |x, _| x.div_ceil(2))
}

impl ModelConfig {
    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig { lambda: self.lambda, max_iters: self.sinkhorn_iters, tol: self.sinkhorn_tol, ..Default::default() }
    }

    /// Length of the flattened CNN output.
    pub fn head_inputs(&self) -> usize {
        let p = pooled(self.max_len);
        self.channels[2] * p * p
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.max_len > 0
            && self.embed_dim > 0
            && self.hidden > 0
            && self.channels.iter().all(|&c| c > 0)
            && self.filter % 2 == 1
            && self.lambda > 0.0
            && self.sinkhorn_iters > 0
            && self.sinkhorn_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("inconsistent model configuration {self:?}")))
        }
    }

    /// Key/value pairs as stored in a checkpoint.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let c = self.channels;
        [
            ("max_len", self.max_len.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("channels", format!("{},{},{}", c[0], c[1], c[2])),
            ("filter", self.filter.to_string()),
            ("lambda", self.lambda.to_string()),
            ("sinkhorn_iters", self.sinkhorn_iters.to_string()),
            ("sinkhorn_tol", self.sinkhorn_tol.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        fn get<T: FromStr>(pairs: &[(String, String)], key: &str) -> Result<T> {
            let v = pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::invalid(format!("missing hyperparameter {key}")))?;
            v.parse().map_err(|_| Error::invalid(format!("bad value {v:?} for hyperparameter {key}")))
        }
        let ch: String = get(pairs, "channels")?;
        let ch: Vec<usize> = ch
            .split(',')
            .map(|x| x.parse().map_err(|_| Error::invalid(format!("bad channels {ch:?}"))))
            .collect::<Result<_>>()?;
        let channels: [usize; 3] = ch.try_into().map_err(|_| Error::invalid("channels needs three values"))?;
        let cfg = Self {
            max_len: get(pairs, "max_len")?,
            embed_dim: get(pairs, "embed_dim")?,
            hidden: get(pairs, "hidden")?,
            channels,
            filter: get(pairs, "filter")?,
            lambda: get(pairs, "lambda")?,
            sinkhorn_iters: get(pairs, "sinkhorn_iters")?,
            sinkhorn_tol: get(pairs, "sinkhorn_tol")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Every trainable tensor of one model, with the vocabulary and
/// hyperparameters needed to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub variant: ScoreVariant,
    pub vocab: Vocabulary,
    tensors: Vec<(String, Tensor<f32>)>,
}

const LSTM_PARTS: [&str; 3] = ["w_ih", "w_hh", "bias"];

fn expected_shapes(cfg: &ModelConfig, variant: ScoreVariant, vocab_len: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    if variant.uses_encoder() {
        let (e, h) = (cfg.embed_dim, cfg.hidden);
        out.push(("embedding".to_string(), vec![vocab_len, e]));
        for dir in ["fwd", "bwd"] {
            out.push((format!("lstm.{dir}.w_ih"), vec![4 * h, e]));
            out.push((format!("lstm.{dir}.w_hh"), vec![4 * h, h]));
            out.push((format!("lstm.{dir}.bias"), vec![4 * h]));
        }
    }
    if variant.uses_cnn() {
        let f = cfg.filter;
        let mut c_in = 1;
        for (k, &c_out) in cfg.channels.iter().enumerate() {
            out.push((format!("cnn.{k}.w"), vec![c_out, c_in, f, f]));
            out.push((format!("cnn.{k}.b"), vec![c_out]));
            c_in = c_out;
        }
        out.push(("head.w".to_string(), vec![1, cfg.head_inputs()]));
        out.push(("head.b".to_string(), vec![1]));
    }
    if variant == ScoreVariant::CnnToLinear {
        out.push(("linear.w".to_string(), vec![1, cfg.max_len * cfg.max_len]));
        out.push(("linear.b".to_string(), vec![1]));
    }
    out
}

fn uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, bound: f64) -> Tensor<f32> {
    let d = Uniform::new_inclusive(-bound as f32, bound as f32);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| d.sample(rng)).collect()).expect("shape from config")
}

impl ModelParams {
    /// Fresh random parameters.
    pub fn init<R: Rng>(config: ModelConfig, variant: ScoreVariant, vocab: Vocabulary, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let mut tensors = Vec::new();
        for (name, shape) in expected_shapes(&config, variant, vocab.len()) {
            let t = if name == "embedding" {
                let n = shape.iter().product();
                let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                Tensor::new(shape, data)?
            } else if name.starts_with("lstm.") {
                let mut t = uniform(rng, shape, 1.0 / (h as f64).sqrt());
                if name.ends_with(".bias") {
                    t.data_mut()[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
                }
                t
            } else if name.starts_with("cnn.") && name.ends_with(".w") {
                let fan_in: usize = shape[1..].iter().product();
                uniform(rng, shape, (6.0 / fan_in as f64).sqrt())
            } else if name.ends_with(".b") {
                Tensor::zeros(shape)
            } else {
                let fan_in = shape[1];
                uniform(rng, shape, 1.0 / (fan_in as f64).sqrt())
            };
            tensors.push((name, t));
        }
        Ok(Self { config, variant, vocab, tensors })
    }

    /// Assembles parameters from named tensors, checking names and shapes.
    pub fn from_parts(
        config: ModelConfig,
        variant: ScoreVariant,
        vocab: Vocabulary,
        tensors: Vec<(String, Tensor<f32>)>,
    ) -> Result<Self> {
        config.validate()?;
        let want = expected_shapes(&config, variant, vocab.len());
        if want.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "{variant} model needs {} tensors, got {}",
                want.len(),
                tensors.len()
            )));
        }
        let mut ordered = Vec::new();
        for (name, shape) in want {
            let t = tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::invalid(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::invalid(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::invalid(format!("tensor {name} has non-finite values")));
            }
            ordered.push((name, t));
        }
        Ok(Self { config, variant, vocab, tensors: ordered })
    }

    pub fn tensors(&self) -> &[(String, Tensor<f32>)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f32>> {
        self.tensors.iter_mut().map(|(_, t)| t)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index(name).map(|i| &self.tensors[i].1)
    }

    /// Replaces a tensor of the same shape.
    pub fn set(&mut self, name: &str, t: Tensor<f32>) -> Result<()> {
        let i = self.index(name).ok_or_else(|| Error::invalid(format!("no tensor named {name}")))?;
        if self.tensors[i].1.shape() != t.shape() {
            return Err(Error::invalid(format!(
                "tensor {name} has shape {:?}, got {:?}",
                self.tensors[i].1.shape(),
                t.shape()
            )));
        }
        self.tensors[i].1 = t;
        Ok(())
    }

    /// Places every tensor on the tape, in [`tensors`](Self::tensors) order.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|(_, t)| if trainable { tape.param(t.cast()) } else { tape.constant(t.cast()) })
            .collect()
    }

    pub fn bind_encoder<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> Result<EncoderVars> {
        let mut vars = vec![None; self.tensors.len()];
        for (i, (name, t)) in self.tensors.iter().enumerate() {
            if name == "embedding" || name.starts_with("lstm.") {
                vars[i] = Some(if trainable { tape.param(t.cast()) } else { tape.constant(t.cast()) });
            }
        }
        let vars: Vec<Var> = vars.into_iter().map(|v| v.unwrap_or(Var::NONE)).collect();
        self.encoder_vars(&vars)
    }

    fn var(&self, vars: &[Var], name: &str) -> Result<Var> {
        match self.index(name) {
            Some(i) if vars.len() == self.tensors.len() && vars[i] != Var::NONE => Ok(vars[i]),
            _ => Err(Error::invalid(format!("{} model has no bound tensor {name}", self.variant))),
        }
    }

    pub(crate) fn encoder_vars(&self, vars: &[Var]) -> Result<EncoderVars> {
        let lstm = |dir: &str| -> Result<LstmVars> {
            let [w_ih, w_hh, bias] = LSTM_PARTS.map(|p| self.var(vars, &format!("lstm.{dir}.{p}")));
            Ok(LstmVars { w_ih: w_ih?, w_hh: w_hh?, bias: bias? })
        };
        Ok(EncoderVars { embedding: self.var(vars, "embedding")?, fwd: lstm("fwd")?, bwd: lstm("bwd")? })
    }

    fn cnn_vars(&self, vars: &[Var]) -> Result<CnnVars> {
        let mut layers = Vec::new();
        for k in 0..3 {
            layers.push((self.var(vars, &format!("cnn.{k}.w"))?, self.var(vars, &format!("cnn.{k}.b"))?));
        }
        Ok(CnnVars { layers, head_w: self.var(vars, "head.w")?, head_b: self.var(vars, "head.b")? })
    }
}

pub(crate) struct CnnVars {
    layers: Vec<(Var, Var)>,
    head_w: Var,
    head_b: Var,
}

/// `linear(flatten(pool(relu(conv(·))) ×3))` on an `L×L` node.
fn cnn_on_tape<T: Scalar>(tape: &mut Tape<T>, x: Var, l: usize, cnn: &CnnVars) -> Result<Var> {
    let mut h = tape.reshape(x, vec![1, l, l])?;
    for &(w, b) in &cnn.layers {
        h = tape.conv2d(h, w, b)?;
        h = tape.relu(h)?;
        h = tape.maxpool2d(h)?;
    }
    let n = tape.value(h).len();
    let flat = tape.reshape(h, vec![1, n])?;
    let y = tape.matmul_t(flat, cnn.head_w)?;
    Ok(tape.add(y, cnn.head_b)?)
}

/// Intermediate nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `1×1` (or `1`) score node
    pub score: Var,
    /// `|m|×|m'|` similarity block
    pub sim: Var,
    pub plan: Option<Var>,
    /// input to the CNN or linear head, before padding
    pub reweighted: Option<Var>,
    pub stats: Option<SinkhornStats>,
}

fn clipped<'a>(m: &'a Mention, l: usize) -> &'a [usize] {
    if m.len() > l {
        log::warn!("mention {:?} truncated to {l} characters", m.text());
        &m.ids()[..l]
    } else {
        m.ids()
    }
}

/// Records `f(a, b)` on `tape` with `vars` bound in [`ModelParams::tensors`] order.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams,
    vars: &[Var],
    a: &Mention,
    b: &Mention,
) -> Result<Forward> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMention);
    }
    let cfg = &params.config;
    let l = cfg.max_len;
    let (ia, ib) = (clipped(a, l), clipped(b, l));
    let (n, m) = (ia.len(), ib.len());

    let sim = if params.variant.uses_encoder() {
        let enc = params.encoder_vars(vars)?;
        let ha = encode_on_tape(tape, &enc, ia, cfg.hidden)?;
        let hb = encode_on_tape(tape, &enc, ib, cfg.hidden)?;
        if params.variant == ScoreVariant::LstmDot {
            let ra = tape.row(ha, n - 1)?;
            let rb = tape.row(hb, m - 1)?;
            let sim = tape.matmul_t(ha, hb)?;
            let score = tape.dot(ra, rb)?;
            return Ok(Forward { score, sim, plan: None, reweighted: None, stats: None });
        }
        tape.matmul_t(ha, hb)?
    } else {
        let (ca, cb) = (&a.chars()[..n], &b.chars()[..m]);
        let data = ca.iter().flat_map(|x| cb.iter().map(move |y| if x == y { T::one() } else { T::zero() })).collect();
        tape.constant_from(vec![n, m], data)?
    };

    let (input, plan, stats) = if params.variant == ScoreVariant::Full {
        let cost = cost_on_tape(tape, sim)?;
        let marg = uniform_marginals(n, m)?;
        let (plan, stats) = sinkhorn_on_tape(tape, cost, &marg, &cfg.sinkhorn())?;
        (tape.mul(sim, plan)?, Some(plan), Some(stats))
    } else {
        (sim, None, None)
    };
    let padded = tape.pad2d(input, l, l)?;
    let score = if params.variant == ScoreVariant::CnnToLinear {
        let flat = tape.reshape(padded, vec![1, l * l])?;
        let y = tape.matmul_t(flat, params.var(vars, "linear.w")?)?;
        tape.add(y, params.var(vars, "linear.b")?)?
    } else {
        cnn_on_tape(tape, padded, l, &params.cnn_vars(vars)?)?
    };
    Ok(Forward { score, sim, plan, reweighted: Some(input), stats })
}

/// `f(a, b)` under the model's variant.
pub fn score(a: &Mention, b: &Mention, params: &ModelParams) -> Result<f32> {
    let mut tape = Tape::<f32>::new();
    let vars = params.bind(&mut tape, false);
    let fw = forward(&mut tape, params, &vars, a, b)?;
    let s = tape.value(fw.score)[0];
    if !s.is_finite() {
        return Err(Error::Numerical(format!("non-finite score for ({:?}, {:?})", a.text(), b.text())));
    }
    Ok(s)
}

/// Scores raw strings, encoding them with the model's vocabulary.
pub fn score_str(a: &str, b: &str, params: &ModelParams) -> Result<f32> {
    let l = params.config.max_len;
    score(&params.vocab.mention(a, l)?, &params.vocab.mention(b, l)?, params)
}

/// Applies the CNN and linear head to an `L×L` single-channel input.
pub fn cnn_head(input: &Tensor<f32>, params: &ModelParams) -> Result<f32> {
    let l = params.config.max_len;
    if input.shape() != [l, l] {
        return Err(Error::invalid(format!("cnn input {:?}, expected {l}x{l}", input.shape())));
    }
    let mut tape = Tape::<f32>::new();
    let vars = params.bind(&mut tape, false);
    let cnn = params.cnn_vars(&vars)?;
    let x = tape.constant(input.clone());
    let y = cnn_on_tape(&mut tape, x, l, &cnn)?;
    Ok(tape.value(y)[0])
}

/// The matrices behind one score, for inspection.
#[derive(Debug, Clone)]
pub struct ScoreTrace {
    pub score: f32,
    pub sim: Tensor<f32>,
    pub plan: Option<Tensor<f32>>,
    pub reweighted: Option<Tensor<f32>>,
    pub stats: Option<SinkhornStats>,
}

impl ScoreTrace {
    pub fn similarity(&self, l: usize) -> Result<SimilarityMatrix> {
        embed(&self.sim, l)
    }
}

fn embed(t: &Tensor<f32>, l: usize) -> Result<SimilarityMatrix> {
    let (r, c) = (t.rows(), t.cols());
    let mut data = vec![0.0; l * l];
    for i in 0..r {
        data[i * l..i * l + c].copy_from_slice(t.row_vec(i));
    }
    Ok(SimilarityMatrix { values: Tensor::new(vec![l, l], data)?, valid: (r, c) })
}

pub fn trace(a: &Mention, b: &Mention, params: &ModelParams) -> Result<ScoreTrace> {
    let mut tape = Tape::<f32>::new();
    let vars = params.bind(&mut tape, false);
    let fw = forward(&mut tape, params, &vars, a, b)?;
    Ok(ScoreTrace {
        score: tape.value(fw.score)[0],
        sim: tape.tensor(fw.sim),
        plan: fw.plan.map(|p| tape.tensor(p)),
        reweighted: fw.reweighted.map(|p| tape.tensor(p)),
        stats: fw.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::build_vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(variant: ScoreVariant, l: usize) -> ModelParams {
        let vocab = build_vocab(["abcdefgh ,"], 1).unwrap();
        let cfg = ModelConfig { max_len: l, embed_dim: 4, hidden: 3, channels: [2, 3, 2], ..Default::default() };
        ModelParams::init(cfg, variant, vocab, &mut ChaCha8Rng::seed_from_u64(7)).unwrap()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ScoreVariant::ALL {
            assert_eq!(v.name().parse::<ScoreVariant>().unwrap(), v);
        }
        assert!("lev".parse::<ScoreVariant>().is_err());
    }

    #[test]
    fn config_pairs_round_trip() {
        let cfg = ModelConfig { lambda: 12.5, channels: [3, 5, 7], ..Default::default() };
        assert_eq!(ModelConfig::from_pairs(&cfg.to_pairs()).unwrap(), cfg);
    }

    #[test]
    fn default_head_has_1024_inputs() {
        assert_eq!(ModelConfig::default().head_inputs(), 1024);
        assert_eq!(pooled(10), 2);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let p = model(ScoreVariant::Full, 8);
        let b = p.get("lstm.fwd.bias").unwrap();
        assert!(b.data()[3..6].iter().all(|&x| x == 1.0));
        assert!(p.get("cnn.0.b").unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn every_variant_is_deterministic_and_finite() {
        for v in ScoreVariant::ALL {
            let p = model(v, 16);
            let a = score_str("abc de", "de, abc", &p).unwrap();
            let b = score_str("abc de", "de, abc", &p).unwrap();
            assert_eq!(a.to_bits(), b.to_bits(), "{v}");
            assert!(score_str("abc", "abc", &p).unwrap().is_finite());
        }
    }

    #[test]
    fn binary_similarity_of_identical_strings_is_identity() {
        let p = model(ScoreVariant::LstmToBinary, 8);
        let m = p.vocab.mention("abc", 8).unwrap();
        let t = trace(&m, &m, &p).unwrap();
        assert_eq!(t.sim.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn lstm_dot_reads_last_cell() {
        let p = model(ScoreVariant::LstmDot, 8);
        let a = p.vocab.mention("abcd", 8).unwrap();
        let b = p.vocab.mention("fg", 8).unwrap();
        let t = trace(&a, &b, &p).unwrap();
        assert_eq!(t.score, t.sim.at(3, 1));
    }

    #[test]
    fn empty_mention_is_rejected() {
        let p = model(ScoreVariant::Full, 8);
        assert!(matches!(score_str("", "a", &p), Err(Error::EmptyMention)));
    }

    #[test]
    fn long_mentions_are_truncated() {
        let p = model(ScoreVariant::Full, 8);
        let long = p.vocab.mention("abcdefghabcd", 64).unwrap();
        let short = p.vocab.mention("abcdefgh", 64).unwrap();
        let other = p.vocab.mention("bad", 8).unwrap();
        assert_eq!(score(&long, &other, &p).unwrap(), score(&short, &other, &p).unwrap());
    }

    #[test]
    fn zero_input_scores_the_head_bias() {
        let mut p = model(ScoreVariant::Full, 8);
        p.set("head.b", Tensor::new(vec![1], vec![0.75]).unwrap()).unwrap();
        assert_eq!(cnn_head(&Tensor::zeros(vec![8, 8]), &p).unwrap(), 0.75);
    }

    #[test]
    fn doubling_head_weights_doubles_score_minus_bias() {
        let mut p = model(ScoreVariant::Full, 8);
        p.set("head.b", Tensor::new(vec![1], vec![0.3]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = uniform(&mut rng, vec![8, 8], 1.0);
        let s1 = cnn_head(&x, &p).unwrap() - 0.3;
        let w = p.get("head.w").unwrap().clone();
        let w2 = Tensor::new(w.shape().to_vec(), w.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        p.set("head.w", w2).unwrap();
        let s2 = cnn_head(&x, &p).unwrap() - 0.3;
        assert!((s2 - 2.0 * s1).abs() <= 1e-5 * s1.abs().max(1.0));
    }

    #[test]
    fn set_rejects_wrong_shape() {
        let mut p = model(ScoreVariant::Full, 8);
        assert!(p.set("head.b", Tensor::zeros(vec![2])).is_err());
        assert!(p.set("nope", Tensor::zeros(vec![1])).is_err());
    }

    #[test]
    fn from_parts_checks_tensor_table() {
        let p = model(ScoreVariant::CnnToLinear, 8);
        let q = ModelParams::from_parts(p.config, p.variant, p.vocab.clone(), p.tensors().to_vec()).unwrap();
        assert_eq!(p, q);
        let mut short = p.tensors().to_vec();
        short.pop();
        assert!(ModelParams::from_parts(p.config, p.variant, p.vocab.clone(), short).is_err());
    }
}
