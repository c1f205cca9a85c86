use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::AliasGraph;
use crate::classic::levenshtein_chars;
use crate::{Error, Result};

/// The five negative-sampling heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NegType {
    /// edit distance 1 or 2
    Edit,
    /// shared 4-character word prefix or suffix
    Overlap,
    Hop4,
    Hop6,
    /// random alias of a frequency-weighted entity
    Random,
}

impl NegType {
    /// Also the order in which duplicates across types are resolved.
    pub const ALL: [NegType; 5] = [Self::Edit, Self::Overlap, Self::Hop4, Self::Hop6, Self::Random];

    pub fn name(self) -> &'static str {
        match self {
            Self::Edit => "EDIT",
            Self::Overlap => "OVERLAP",
            Self::Hop4 => "HOP4",
            Self::Hop6 => "HOP6",
            Self::Random => "RANDOM",
        }
    }
}

impl fmt::Display for NegType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NegType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown negative type {s:?}")))
    }
}

fn deletion_hashes(chars: &[char]) -> Vec<u64> {
    let mut variants: HashSet<Vec<char>> = HashSet::new();
    variants.insert(chars.to_vec());
    for i in 0..chars.len() {
        let mut one = chars.to_vec();
        one.remove(i);
        for j in i..one.len() {
            let mut two = one.clone();
            two.remove(j);
            variants.insert(two);
        }
        variants.insert(one);
    }
    let mut out: Vec<u64> = variants
        .into_iter()
        .map(|v| {
            let mut h = DefaultHasher::new();
            v.hash(&mut h);
            h.finish()
        })
        .collect();
    out.sort_unstable();
    out
}

fn word_prefix(s: &str) -> Option<String> {
    let w: Vec<char> = s.split_whitespace().next()?.chars().collect();
    (w.len() >= 4).then(|| w[..4].iter().collect())
}

fn word_suffix(s: &str) -> Option<String> {
    let w: Vec<char> = s.split_whitespace().last()?.chars().collect();
    (w.len() >= 4).then(|| w[w.len() - 4..].iter().collect())
}

/// Lookup structures over a pool of candidate mentions.
#[derive(Debug)]
pub struct NegativeIndex<'g> {
    pool: &'g AliasGraph,
    /// (deletion-variant hash, mention id), sorted
    deletions: Vec<(u64, usize)>,
    prefixes: HashMap<String, Vec<usize>>,
    suffixes: HashMap<String, Vec<usize>>,
    mention_weights: Vec<f64>,
    entity_sampler: Option<WeightedIndex<f64>>,
}

impl<'g> NegativeIndex<'g> {
    pub fn new(pool: &'g AliasGraph) -> Self {
        let mut deletions = Vec::new();
        let mut prefixes: HashMap<String, Vec<usize>> = HashMap::new();
        let mut suffixes: HashMap<String, Vec<usize>> = HashMap::new();
        for (m, text) in pool.mentions().iter().enumerate() {
            let chars: Vec<char> = text.chars().collect();
            deletions.extend(deletion_hashes(&chars).into_iter().map(|h| (h, m)));
            if let Some(p) = word_prefix(text) {
                prefixes.entry(p).or_default().push(m);
            }
            if let Some(s) = word_suffix(text) {
                suffixes.entry(s).or_default().push(m);
            }
        }
        deletions.sort_unstable();
        let mention_weights = (0..pool.num_mentions())
            .map(|m| pool.entities_of(m).iter().map(|&e| pool.sampling_weight(e)).fold(0.0, f64::max))
            .collect();
        let weights: Vec<f64> = (0..pool.num_entities()).map(|e| pool.sampling_weight(e)).collect();
        let entity_sampler = WeightedIndex::new(weights).ok();
        Self { pool, deletions, prefixes, suffixes, mention_weights, entity_sampler }
    }

    pub fn pool(&self) -> &'g AliasGraph {
        self.pool
    }

    /// Every pool mention of the given type for `q`, ascending by id, before
    /// exclusion and budgeting. Not defined for [`NegType::Random`].
    fn candidates(&self, q: &str, kind: NegType) -> Vec<usize> {
        let mut out = match kind {
            NegType::Edit => {
                let qc: Vec<char> = q.chars().collect();
                let mut hits = Vec::new();
                for h in deletion_hashes(&qc) {
                    let lo = self.deletions.partition_point(|&(x, _)| x < h);
                    hits.extend(self.deletions[lo..].iter().take_while(|&&(x, _)| x == h).map(|&(_, m)| m));
                }
                hits.sort_unstable();
                hits.dedup();
                hits.retain(|&m| {
                    let mc: Vec<char> = self.pool.mention(m).chars().collect();
                    (1..=2).contains(&levenshtein_chars(&qc, &mc))
                });
                hits
            }
            NegType::Overlap => {
                let mut hits = Vec::new();
                if let Some(p) = word_prefix(q) {
                    hits.extend(self.prefixes.get(&p).into_iter().flatten());
                }
                if let Some(s) = word_suffix(q) {
                    hits.extend(self.suffixes.get(&s).into_iter().flatten());
                }
                hits
            }
            NegType::Hop4 | NegType::Hop6 => {
                let want = if kind == NegType::Hop4 { 4 } else { 6 };
                match self.pool.mention_id(q) {
                    Some(qid) => self
                        .pool
                        .hops_from(qid, want)
                        .iter()
                        .enumerate()
                        .filter(|(_, d)| **d == Some(want))
                        .map(|(m, _)| m)
                        .collect(),
                    None => Vec::new(),
                }
            }
            NegType::Random => Vec::new(),
        };
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Up to `budget` negatives of `kind` for `q`, never including `q` or a
    /// mention for which `excluded` holds.
    pub fn sample(
        &self,
        q: &str,
        kind: NegType,
        budget: usize,
        excluded: &dyn Fn(&str) -> bool,
        rng: &mut ChaCha8Rng,
    ) -> Vec<String> {
        let ok = |m: usize| {
            let t = self.pool.mention(m);
            t != q && !excluded(t)
        };
        let chosen: Vec<usize> = if kind == NegType::Random {
            self.sample_random(budget, &ok, rng)
        } else {
            let cands: Vec<usize> = self.candidates(q, kind).into_iter().filter(|&m| ok(m)).collect();
            if cands.len() <= budget {
                cands
            } else {
                let mut picked: Vec<usize> = cands
                    .choose_multiple_weighted(rng, budget, |&m| self.mention_weights[m])
                    .expect("positive weights")
                    .copied()
                    .collect();
                picked.sort_unstable();
                picked
            }
        };
        chosen.into_iter().map(|m| self.pool.mention(m).to_string()).collect()
    }

    fn sample_random(&self, budget: usize, ok: &dyn Fn(usize) -> bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let Some(sampler) = &self.entity_sampler else { return Vec::new() };
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let attempts = 20 * budget + 100;
        for _ in 0..attempts {
            if out.len() >= budget {
                break;
            }
            let e = sampler.sample(rng);
            let Some(&m) = self.pool.aliases_of(e).choose(rng) else { continue };
            if ok(m) && seen.insert(m) {
                out.push(m);
            }
        }
        out
    }
}

/// Negatives of one type for `q`, drawn from `g` itself and excluding every
/// co-alias of `q` in `g`.
pub fn generate_negatives(g: &AliasGraph, q: &str, kind: NegType, budget: usize, seed: u64) -> Result<Vec<String>> {
    if g.mention_id(q).is_none() {
        return Err(Error::invalid(format!("query {q:?} not in graph")));
    }
    let index = NegativeIndex::new(g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index.sample(q, kind, budget, &|m| g.are_co_aliases(q, m), &mut rng))
}
