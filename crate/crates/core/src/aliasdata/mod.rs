//! Alias datasets: the mention–entity graph, entity-disjoint splits,
//! negative sampling and the files built from them.

mod dataset;
mod negatives;
pub mod synth;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub use dataset::{
    build_dataset, build_eval_set, read_eval, read_triples, write_eval, write_triples, Dataset, DatasetConfig,
    EvalQuery, Triple,
};
pub(crate) use dataset::{all_negatives, query_rng};
pub use negatives::{generate_negatives, NegType, NegativeIndex};

/// Bipartite multigraph of mentions and entities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AliasGraph {
    mentions: Vec<String>,
    mention_ids: HashMap<String, usize>,
    entities: Vec<String>,
    entity_ids: HashMap<String, usize>,
    weights: Vec<Option<f64>>,
    /// sorted entity ids per mention
    m2e: Vec<Vec<usize>>,
    /// sorted mention ids per entity
    e2m: Vec<Vec<usize>>,
}

impl AliasGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `mention` as an alias of `entity`. Repeated edges collapse; an
    /// entity keeps the largest weight it is given.
    pub fn add_alias(&mut self, entity: &str, mention: &str, weight: Option<f64>) {
        let e = match self.entity_ids.get(entity) {
            Some(&e) => e,
            None => {
                self.entities.push(entity.to_string());
                self.weights.push(None);
                self.e2m.push(Vec::new());
                self.entity_ids.insert(entity.to_string(), self.entities.len() - 1);
                self.entities.len() - 1
            }
        };
        let m = match self.mention_ids.get(mention) {
            Some(&m) => m,
            None => {
                self.mentions.push(mention.to_string());
                self.m2e.push(Vec::new());
                self.mention_ids.insert(mention.to_string(), self.mentions.len() - 1);
                self.mentions.len() - 1
            }
        };
        if let Some(w) = weight {
            self.weights[e] = Some(self.weights[e].map_or(w, |old| old.max(w)));
        }
        if let Err(pos) = self.m2e[m].binary_search(&e) {
            self.m2e[m].insert(pos, e);
            let pos = self.e2m[e].binary_search(&m).unwrap_err();
            self.e2m[e].insert(pos, m);
        }
    }

    pub fn num_mentions(&self) -> usize {
        self.mentions.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_edges(&self) -> usize {
        self.m2e.iter().map(Vec::len).sum()
    }

    pub fn mention(&self, m: usize) -> &str {
        &self.mentions[m]
    }

    pub fn mentions(&self) -> &[String] {
        &self.mentions
    }

    pub fn mention_id(&self, text: &str) -> Option<usize> {
        self.mention_ids.get(text).copied()
    }

    pub fn entity(&self, e: usize) -> &str {
        &self.entities[e]
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_ids.get(name).copied()
    }

    pub fn weight(&self, e: usize) -> Option<f64> {
        self.weights[e]
    }

    /// Sampling weight: the given frequency, or 1 when none was supplied.
    pub fn sampling_weight(&self, e: usize) -> f64 {
        self.weights[e].unwrap_or(1.0)
    }

    pub fn entities_of(&self, m: usize) -> &[usize] {
        &self.m2e[m]
    }

    pub fn aliases_of(&self, e: usize) -> &[usize] {
        &self.e2m[e]
    }

    /// Mentions sharing at least one entity with `m`, excluding `m`.
    pub fn co_aliases(&self, m: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.m2e[m].iter().flat_map(|&e| self.e2m[e].iter().copied()).filter(|&x| x != m).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn are_co_aliases(&self, a: &str, b: &str) -> bool {
        match (self.mention_id(a), self.mention_id(b)) {
            (Some(x), Some(y)) => {
                let (ex, ey) = (&self.m2e[x], &self.m2e[y]);
                ex.iter().any(|e| ey.binary_search(e).is_ok())
            }
            _ => false,
        }
    }

    /// Bipartite hop counts from `m` to every mention, up to `max_hops`.
    /// Mention-to-mention distances are even; `None` means unreachable.
    pub fn hops_from(&self, m: usize, max_hops: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.mentions.len()];
        let mut seen_e = vec![false; self.entities.len()];
        dist[m] = Some(0);
        let mut queue = VecDeque::from([m]);
        while let Some(x) = queue.pop_front() {
            let d = dist[x].expect("queued mentions have a distance");
            if d + 2 > max_hops {
                continue;
            }
            for &e in &self.m2e[x] {
                if std::mem::replace(&mut seen_e[e], true) {
                    continue;
                }
                for &y in &self.e2m[e] {
                    if dist[y].is_none() {
                        dist[y] = Some(d + 2);
                        queue.push_back(y);
                    }
                }
            }
        }
        dist
    }

    /// The subgraph induced by `entities` and their aliases.
    pub fn restrict(&self, entities: &[usize]) -> AliasGraph {
        let mut g = AliasGraph::new();
        let mut sorted = entities.to_vec();
        sorted.sort_unstable();
        for e in sorted {
            for &m in &self.e2m[e] {
                g.add_alias(&self.entities[e], &self.mentions[m], self.weights[e]);
            }
        }
        g
    }

    pub fn stats(&self) -> GraphStats {
        let per: Vec<f64> = self.e2m.iter().map(|v| v.len() as f64).collect();
        let n = per.len().max(1) as f64;
        let mean = per.iter().sum::<f64>() / n;
        let var = per.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        GraphStats {
            unique_strings: self.mentions.len(),
            entities: self.entities.len(),
            edges: self.num_edges(),
            mentions_per_entity_mean: mean,
            mentions_per_entity_sd: var.sqrt(),
        }
    }

    /// Parses `entity_id \t mention [\t weight]` lines.
    pub fn from_tsv(text: &str, source: &str) -> Result<Self> {
        let mut g = AliasGraph::new();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse { path: source.to_string(), line: i + 1, msg };
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(err(format!("expected 2 or 3 tab-separated fields, found {}", fields.len())));
            }
            let (entity, mention) = (fields[0], fields[1]);
            if entity.is_empty() || mention.is_empty() {
                return Err(err("empty entity or mention".to_string()));
            }
            let weight = match fields.get(2) {
                Some(w) => {
                    let w: f64 = w.trim().parse().map_err(|_| err(format!("bad weight {w:?}")))?;
                    if !(w > 0.0 && w.is_finite()) {
                        return Err(err(format!("weight must be positive, got {w}")));
                    }
                    Some(w)
                }
                None => None,
            };
            g.add_alias(entity, mention, weight);
        }
        Ok(g)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (e, ms) in self.e2m.iter().enumerate() {
            for &m in ms {
                out.push_str(&self.entities[e]);
                out.push('\t');
                out.push_str(&self.mentions[m]);
                if let Some(w) = self.weights[e] {
                    out.push('\t');
                    out.push_str(&w.to_string());
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<AliasGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AliasGraph::from_tsv(&text, &path.display().to_string())
}

/// Hop distance between two mentions; `None` if they are not connected.
pub fn hop_distance(g: &AliasGraph, m1: &str, m2: &str) -> Result<Option<usize>> {
    let a = g.mention_id(m1).ok_or_else(|| Error::invalid(format!("mention {m1:?} not in graph")))?;
    let b = g.mention_id(m2).ok_or_else(|| Error::invalid(format!("mention {m2:?} not in graph")))?;
    Ok(g.hops_from(a, usize::MAX)[b])
}

/// Corpus summary in the usual table layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphStats {
    pub unique_strings: usize,
    pub entities: usize,
    pub edges: usize,
    pub mentions_per_entity_mean: f64,
    pub mentions_per_entity_sd: f64,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "unique_strings\t{}", self.unique_strings)?;
        writeln!(f, "entities\t{}", self.entities)?;
        writeln!(f, "edges\t{}", self.edges)?;
        writeln!(
            f,
            "mentions_per_entity\t{:.2} ± {:.2}",
            self.mentions_per_entity_mean, self.mentions_per_entity_sd
        )
    }
}

/// Entity ids of the train, dev and test partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    pub fn parts(&self) -> [&[usize]; 3] {
        [&self.train, &self.dev, &self.test]
    }
}

/// Seeded shuffle of entity ids cut into contiguous train/dev/test runs.
pub fn split_entities(g: &AliasGraph, ratios: [f64; 3], seed: u64) -> Result<DataSplit> {
    if ratios.iter().any(|&r| !(r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let n = g.num_entities();
    let wanted = ratios.iter().filter(|&&r| r > 0.0).count();
    if n < wanted {
        return Err(Error::invalid(format!("{n} entities cannot fill {wanted} splits")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut sizes = [0usize; 3];
    sizes[0] = (ratios[0] * n as f64).round() as usize;
    sizes[1] = (ratios[1] * n as f64).round() as usize;
    // every requested split gets at least one entity
    for k in 0..2 {
        if ratios[k] > 0.0 && sizes[k] == 0 {
            sizes[k] = 1;
        }
    }
    let need_test = usize::from(ratios[2] > 0.0);
    while sizes[0] + sizes[1] + need_test > n {
        let k = if sizes[0] >= sizes[1] { 0 } else { 1 };
        sizes[k] -= 1;
    }
    sizes[2] = n - sizes[0] - sizes[1];
    let test = ids.split_off(sizes[0] + sizes[1]);
    let dev = ids.split_off(sizes[0]);
    Ok(DataSplit { train: ids, dev, test })
}
