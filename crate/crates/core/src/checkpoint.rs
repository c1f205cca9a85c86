//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//! ```text
//! "STNC1"
//! u32 n_vocab, n_vocab × (u32 codepoint, u32 id)
//! u32 n_hyper, n_hyper × (u32 len, key UTF-8, u32 len, value UTF-8)
//! u32 n_tensor, n_tensor × (u16 len, name UTF-8, u8 rank, rank × u32 dim, f32 values)
//! ```

use std::path::Path;

use crate::diffmath::Tensor;
use crate::encoder::Vocabulary;
use crate::scorer::{ModelConfig, ModelParams, ScoreVariant};
use crate::{Error, Result};

pub const MAGIC: &[u8; 5] = b"STNC1";
const VERSION: &str = "STNC1";

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint { version: VERSION, msg: msg.into() }
}

fn put_u32(out: &mut Vec<u8>, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| err(format!("value {x} does not fit in u32")))?;
    out.extend_from_slice(&x.to_le_bytes());
    Ok(())
}

fn put_str32(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    let entries = params.vocab.entries();
    put_u32(&mut out, entries.len())?;
    for (c, id) in entries {
        put_u32(&mut out, c as usize)?;
        put_u32(&mut out, id)?;
    }
    let mut hyper = params.config.to_pairs();
    hyper.push(("variant".to_string(), params.variant.name().to_string()));
    put_u32(&mut out, hyper.len())?;
    for (k, v) in &hyper {
        put_str32(&mut out, k)?;
        put_str32(&mut out, v)?;
    }
    put_u32(&mut out, params.tensors().len())?;
    for (name, t) in params.tensors() {
        let len = u16::try_from(name.len()).map_err(|_| err(format!("tensor name {name:?} too long")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len()).map_err(|_| err(format!("tensor {name} rank too large")))?;
        out.push(rank);
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| err(format!("truncated payload while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn str(&mut self, n: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| err(format!("{what} is not UTF-8")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(5, "magic").map_err(|_| err("file too short for magic"))?;
    if magic != MAGIC {
        return Err(err(format!("unknown magic {:?}", String::from_utf8_lossy(magic))));
    }
    let n = r.u32("vocabulary count")?;
    let mut entries = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let cp = r.u32("codepoint")?;
        let c = char::from_u32(cp as u32).ok_or_else(|| err(format!("invalid codepoint {cp}")))?;
        entries.push((c, r.u32("vocabulary id")?));
    }
    let vocab = Vocabulary::from_entries(entries).map_err(|e| err(e.to_string()))?;
    let n = r.u32("hyperparameter count")?;
    let mut hyper = Vec::new();
    for _ in 0..n {
        let k = r.u32("key length")?;
        let k = r.str(k, "key")?;
        let v = r.u32("value length")?;
        let v = r.str(v, "value")?;
        hyper.push((k, v));
    }
    let variant: ScoreVariant = hyper
        .iter()
        .find(|(k, _)| k == "variant")
        .ok_or_else(|| err("missing variant"))?
        .1
        .parse()
        .map_err(|e: Error| err(e.to_string()))?;
    let config = ModelConfig::from_pairs(&hyper).map_err(|e| err(e.to_string()))?;
    let n = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..n {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = r.str(len, "tensor name")?;
        let rank = r.take(1, "rank")?[0] as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32("dimension")).collect::<Result<_>>()?;
        let count: usize = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| err("tensor too large"))?;
        let raw = r.take(count.checked_mul(4).ok_or_else(|| err("tensor too large"))?, &name)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| err(format!("tensor {name}: {e}")))?;
        tensors.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(err(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    ModelParams::from_parts(config, variant, vocab, tensors).map_err(|e| err(e.to_string()))
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::build_vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> ModelParams {
        let vocab = build_vocab(["héllo wörld"], 1).unwrap();
        let cfg = ModelConfig { max_len: 8, embed_dim: 3, hidden: 2, channels: [2, 2, 2], ..Default::default() };
        ModelParams::init(cfg, ScoreVariant::Full, vocab, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = model();
        let bytes = to_bytes(&p).unwrap();
        assert_eq!(&bytes[..5], b"STNC1");
        assert_eq!(from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let bytes = to_bytes(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[4] = b'9';
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint { .. })));
        for cut in [3, 20, bytes.len() - 1] {
            match from_bytes(&bytes[..cut]) {
                Err(Error::Checkpoint { version, .. }) => assert_eq!(version, "STNC1"),
                other => panic!("{other:?}"),
            }
        }
    }
}
