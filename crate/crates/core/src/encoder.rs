//! Character vocabulary, bidirectional LSTM mention encoder and the
//! similarity matrix between two encodings.

use std::collections::{BTreeMap, HashMap};

use crate::diffmath::{Scalar, Tape, Tensor, Var};
use crate::scorer::ModelParams;
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Codepoint to id map. Ids 0 and 1 are reserved for padding and unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<char, usize>,
    size: usize,
}

impl Vocabulary {
    /// Builds from explicit `(codepoint, id)` pairs, e.g. read from a checkpoint.
    pub fn from_entries(entries: impl IntoIterator<Item = (char, usize)>) -> Result<Self> {
        let ids: HashMap<char, usize> = entries.into_iter().collect();
        let size = ids.len() + 2;
        let mut seen = vec![false; size];
        for (&c, &id) in &ids {
            if id < 2 || id >= size || seen[id] {
                return Err(Error::invalid(format!("vocabulary id {id} for {c:?} is not dense")));
            }
            seen[id] = true;
        }
        Ok(Self { ids, size })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.ids.get(&c).copied().unwrap_or(UNK)
    }

    /// Entries sorted by id.
    pub fn entries(&self) -> Vec<(char, usize)> {
        let mut v: Vec<(char, usize)> = self.ids.iter().map(|(&c, &i)| (c, i)).collect();
        v.sort_by_key(|&(_, i)| i);
        v
    }

    /// Encodes `text`, truncating to `max_len` characters.
    pub fn mention(&self, text: &str, max_len: usize) -> Result<Mention> {
        let mut chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return Err(Error::EmptyMention);
        }
        let truncated = chars.len() > max_len;
        if truncated {
            log::warn!("mention of {} characters truncated to {max_len}: {text:?}", chars.len());
            chars.truncate(max_len);
        }
        let ids = chars.iter().map(|&c| self.id(c)).collect();
        Ok(Mention { text: text.to_string(), chars, ids, truncated })
    }
}

/// Assigns ids to every codepoint seen at least `min_count` times, in
/// ascending codepoint order.
pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a str>, min_count: usize) -> Result<Vocabulary> {
    let mut counts: BTreeMap<char, usize> = BTreeMap::new();
    let mut any = false;
    for m in corpus {
        any = true;
        for c in m.chars() {
            *counts.entry(c).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::EmptyCorpus);
    }
    let ids: HashMap<char, usize> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_count.max(1))
        .enumerate()
        .map(|(i, (c, _))| (c, i + 2))
        .collect();
    let size = ids.len() + 2;
    Ok(Vocabulary { ids, size })
}

/// A mention string with its (possibly truncated) character ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    text: String,
    chars: Vec<char>,
    ids: Vec<usize>,
    truncated: bool,
}

impl Mention {
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Characters actually encoded.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

/// `L×d` stacked encodings; rows at or past `valid_len` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMatrix {
    pub values: Tensor<f32>,
    pub valid_len: usize,
}

/// `L×L` inner products of two encodings; zero outside the valid block.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Tensor<f32>,
    pub valid: (usize, usize),
}

impl SimilarityMatrix {
    /// The `|m|×|m'|` top-left block.
    pub fn valid_block(&self) -> Tensor<f32> {
        let (r, c) = self.valid;
        let l = self.values.cols();
        let data = (0..r).flat_map(|i| self.values.data()[i * l..i * l + c].to_vec()).collect();
        Tensor::new(vec![r, c], data).expect("valid block is nonempty")
    }
}

/// Tape handles of one direction's LSTM weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    /// `4H×e`, gate blocks ordered input, forget, cell, output
    pub w_ih: Var,
    /// `4H×H`
    pub w_hh: Var,
    /// `4H`
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub embedding: Var,
    pub fwd: LstmVars,
    pub bwd: LstmVars,
}

fn run_lstm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: &LstmVars,
    order: impl Iterator<Item = usize>,
    hidden: usize,
) -> Result<Vec<(usize, Var)>> {
    // input projections for all steps at once: n×4H
    let zx = tape.matmul_t(x, w.w_ih)?;
    let zx = tape.add_row(zx, w.bias)?;
    let h4 = 4 * hidden;
    let mut state: Option<(Var, Var)> = None;
    let mut out = Vec::new();
    for t in order {
        let mut z = tape.slice(zx, t * h4, vec![1, h4])?;
        if let Some((h, _)) = state {
            let zh = tape.matmul_t(h, w.w_hh)?;
            z = tape.add(z, zh)?;
        }
        let gate = |tape: &mut Tape<T>, k: usize| tape.slice(z, k * hidden, vec![1, hidden]);
        let i = gate(tape, 0)?;
        let i = tape.sigmoid(i)?;
        let g = gate(tape, 2)?;
        let g = tape.tanh(g)?;
        let o = gate(tape, 3)?;
        let o = tape.sigmoid(o)?;
        let mut c = tape.mul(i, g)?;
        if let Some((_, c_prev)) = state {
            let f = gate(tape, 1)?;
            let f = tape.sigmoid(f)?;
            let fc = tape.mul(f, c_prev)?;
            c = tape.add(fc, c)?;
        }
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        state = Some((h, c));
        out.push((t, h));
    }
    Ok(out)
}

/// Encodes character ids to the `n×2H` matrix `[forward ∥ backward]` on a tape.
pub fn encode_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &EncoderVars,
    ids: &[usize],
    hidden: usize,
) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::EmptyMention);
    }
    let n = ids.len();
    let x = tape.gather(vars.embedding, ids)?;
    let fwd = run_lstm(tape, x, &vars.fwd, 0..n, hidden)?;
    let mut bwd = run_lstm(tape, x, &vars.bwd, (0..n).rev(), hidden)?;
    bwd.reverse();
    let fwd: Vec<Var> = fwd.into_iter().map(|(_, h)| h).collect();
    let bwd: Vec<Var> = bwd.into_iter().map(|(_, h)| h).collect();
    let hf = tape.concat(&fwd, vec![n, hidden])?;
    let hb = tape.concat(&bwd, vec![n, hidden])?;
    Ok(tape.concat_cols(hf, hb)?)
}

/// `H^(m)`: the mention's `L×d` encoding matrix under `params`.
pub fn encode(m: &Mention, params: &ModelParams) -> Result<EncodingMatrix> {
    if m.is_empty() {
        return Err(Error::EmptyMention);
    }
    let cfg = &params.config;
    if m.len() > cfg.max_len {
        return Err(Error::invalid(format!("mention length {} exceeds L={}", m.len(), cfg.max_len)));
    }
    let mut tape = Tape::<f32>::new();
    let vars = params.bind_encoder(&mut tape, false)?;
    let h = encode_on_tape(&mut tape, &vars, m.ids(), cfg.hidden)?;
    let h = tape.pad2d(h, cfg.max_len, 2 * cfg.hidden)?;
    Ok(EncodingMatrix { values: tape.tensor(h), valid_len: m.len() })
}

/// `S = H^(m) H^(m')ᵀ`.
pub fn similarity_matrix(a: &EncodingMatrix, b: &EncodingMatrix) -> Result<SimilarityMatrix> {
    let (la, d) = (a.values.rows(), a.values.cols());
    let (lb, d2) = (b.values.rows(), b.values.cols());
    if d != d2 {
        return Err(crate::diffmath::DiffError::Shape {
            op: "similarity_matrix",
            detail: format!("encoding widths {d} vs {d2}"),
        }
        .into());
    }
    if la != lb {
        return Err(Error::invalid(format!("encodings padded to L={la} vs L={lb}")));
    }
    let mut s = vec![0.0f32; la * lb];
    for i in 0..a.valid_len {
        let ha = a.values.row_vec(i);
        for j in 0..b.valid_len {
            let hb = b.values.row_vec(j);
            s[i * lb + j] = ha.iter().zip(hb).map(|(x, y)| x * y).sum();
        }
    }
    Ok(SimilarityMatrix {
        values: Tensor::new(vec![la, lb], s)?,
        valid: (a.valid_len, b.valid_len),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{ModelConfig, ScoreVariant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(vocab: &Vocabulary, max_len: usize) -> ModelParams {
        let cfg = ModelConfig { max_len, embed_dim: 4, hidden: 3, channels: [2, 2, 2], ..ModelConfig::default() };
        ModelParams::init(cfg, ScoreVariant::Full, vocab.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn vocab_ids_are_codepoint_ordered() {
        let v = build_vocab(["ab", "ba"], 1).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id('a'), 2);
        assert_eq!(v.id('b'), 3);
        assert_eq!(v.id('z'), UNK);
    }

    #[test]
    fn rare_codepoints_map_to_unk() {
        let v = build_vocab(["aab"], 2).unwrap();
        assert_eq!(v.id('a'), 2);
        assert_eq!(v.id('b'), UNK);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn unicode_codepoints_get_ids() {
        let v = build_vocab(["naïve"], 1).unwrap();
        assert_eq!(v.len(), 2 + 5);
        assert!(v.id('ï') >= 2);
        let m = v.mention("naïve", 64).unwrap();
        assert!(m.ids().iter().all(|&i| i != PAD && i != UNK));
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(matches!(build_vocab(std::iter::empty::<&str>(), 1), Err(Error::EmptyCorpus)));
        let v = build_vocab(["a"], 1).unwrap();
        assert!(matches!(v.mention("", 8), Err(Error::EmptyMention)));
    }

    #[test]
    fn mentions_are_truncated_to_max_len() {
        let v = build_vocab(["abcdef"], 1).unwrap();
        let m = v.mention("abcdef", 4).unwrap();
        assert_eq!(m.len(), 4);
        assert!(m.truncated());
    }

    #[test]
    fn from_entries_rejects_sparse_ids() {
        assert!(Vocabulary::from_entries([('a', 2), ('b', 4)]).is_err());
        assert!(Vocabulary::from_entries([('a', 1)]).is_err());
        let v = Vocabulary::from_entries([('a', 3), ('b', 2)]).unwrap();
        assert_eq!(v.entries(), vec![('b', 2), ('a', 3)]);
    }

    #[test]
    fn encoding_is_deterministic_and_zero_padded() {
        let v = build_vocab(["hello world"], 1).unwrap();
        let p = tiny(&v, 12);
        let m = v.mention("hello", 12).unwrap();
        let a = encode(&m, &p).unwrap();
        let b = encode(&m, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.shape(), &[12, 6]);
        for i in 0..12 {
            let nonzero = a.values.row_vec(i).iter().any(|&x| x != 0.0);
            assert_eq!(nonzero, i < 5, "row {i}");
        }
        let one = encode(&v.mention("h", 12).unwrap(), &p).unwrap();
        assert_eq!((0..12).filter(|&i| one.values.row_vec(i).iter().any(|&x| x != 0.0)).count(), 1);
    }

    #[test]
    fn reversal_with_swapped_directions_reverses_rows() {
        let v = build_vocab(["abcde"], 1).unwrap();
        let p = tiny(&v, 8);
        let mut swapped = p.clone();
        for part in ["w_ih", "w_hh", "bias"] {
            let f = p.get(&format!("lstm.fwd.{part}")).unwrap().clone();
            let b = p.get(&format!("lstm.bwd.{part}")).unwrap().clone();
            swapped.set(&format!("lstm.fwd.{part}"), b).unwrap();
            swapped.set(&format!("lstm.bwd.{part}"), f).unwrap();
        }
        let h = encode(&v.mention("abcde", 8).unwrap(), &p).unwrap();
        let r = encode(&v.mention("edcba", 8).unwrap(), &swapped).unwrap();
        let hid = 3;
        for j in 0..5 {
            let src = h.values.row_vec(4 - j);
            let dst = r.values.row_vec(j);
            // forward and backward halves trade places
            assert_eq!(&dst[..hid], &src[hid..]);
            assert_eq!(&dst[hid..], &src[..hid]);
        }
    }

    #[test]
    fn similarity_of_basis_rows() {
        let mk = |rows: &[[f32; 2]]| {
            let mut data = vec![0.0; 4 * 2];
            for (i, r) in rows.iter().enumerate() {
                data[i * 2..i * 2 + 2].copy_from_slice(r);
            }
            EncodingMatrix { values: Tensor::new(vec![4, 2], data).unwrap(), valid_len: rows.len() }
        };
        let a = mk(&[[1.0, 0.0], [0.0, 1.0]]);
        let b = mk(&[[0.0, 1.0], [1.0, 0.0]]);
        let s = similarity_matrix(&a, &b).unwrap();
        assert_eq!(s.valid_block().data(), &[0.0, 1.0, 1.0, 0.0]);
        for i in 0..4 {
            for j in 0..4 {
                if i >= 2 || j >= 2 {
                    assert_eq!(s.values.at(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn similarity_width_mismatch_is_dimension_error() {
        let a = EncodingMatrix { values: Tensor::zeros(vec![4, 2]), valid_len: 1 };
        let b = EncodingMatrix { values: Tensor::zeros(vec![4, 3]), valid_len: 1 };
        assert!(matches!(similarity_matrix(&a, &b), Err(Error::Diff(_))));
    }
}
