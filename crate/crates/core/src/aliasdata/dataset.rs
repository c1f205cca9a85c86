use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{split_entities, AliasGraph, DataSplit, GraphStats, NegType, NegativeIndex};
use crate::training::{sample_triples, NegativeBank};
use crate::{Error, Result};

/// A training example: `q` and `p` share an entity, `q` and `n` share none.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triple {
    pub q: String,
    pub p: String,
    pub n: String,
}

/// One ranking query with its labelled candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalQuery {
    pub query: String,
    pub positives: Vec<String>,
    pub negatives: Vec<(String, NegType)>,
}

impl EvalQuery {
    pub fn num_candidates(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }
}

pub(crate) fn query_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng
}

/// Frequency-weighted, distinct query mentions from `pool`: an entity is
/// drawn in proportion to its weight, then one of its aliases uniformly.
fn sample_queries(pool: &AliasGraph, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let weights: Vec<f64> = (0..pool.num_mentions())
        .map(|m| {
            pool.entities_of(m).iter().map(|&e| pool.sampling_weight(e) / pool.aliases_of(e).len() as f64).sum()
        })
        .collect();
    let ids: Vec<usize> = (0..pool.num_mentions()).collect();
    if n >= ids.len() {
        return ids;
    }
    ids.choose_multiple_weighted(rng, n, |&m| weights[m]).expect("positive weights").copied().collect()
}

/// Negatives of every type for `q`, deduplicated so that a mention keeps the
/// first type (in [`NegType::ALL`] order) that produced it.
pub(crate) fn all_negatives(
    index: &NegativeIndex,
    full: &AliasGraph,
    q: &str,
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(String, NegType)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for kind in NegType::ALL {
        for m in index.sample(q, kind, budget, &|m| full.are_co_aliases(q, m), rng) {
            if seen.insert(m.clone()) {
                out.push((m, kind));
            }
        }
    }
    out
}

/// Queries drawn from the aliases of `entities`, each with its positives
/// and up to `budget` negatives per type. Candidates come only from those
/// entities; true-alias exclusion is judged on the full graph.
/// Returns the queries and the number skipped for lacking positives.
pub fn build_eval_set(
    full: &AliasGraph,
    entities: &[usize],
    n_queries: usize,
    budget: usize,
    seed: u64,
) -> Result<(Vec<EvalQuery>, usize)> {
    if entities.is_empty() {
        return Err(Error::invalid("evaluation split has no entities"));
    }
    let pool = full.restrict(entities);
    let index = NegativeIndex::new(&pool);
    let queries = sample_queries(&pool, n_queries, &mut query_rng(seed, usize::MAX - 1));
    let built: Vec<Option<EvalQuery>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, &qid)| {
            let q = pool.mention(qid);
            let fid = full.mention_id(q).expect("pool is a subgraph");
            let positives: Vec<String> = full
                .co_aliases(fid)
                .into_iter()
                .map(|m| full.mention(m))
                .filter(|m| pool.mention_id(m).is_some())
                .map(str::to_string)
                .collect();
            if positives.is_empty() {
                return None;
            }
            let negatives = all_negatives(&index, full, q, budget, &mut query_rng(seed, i));
            Some(EvalQuery { query: q.to_string(), positives, negatives })
        })
        .collect();
    let skipped = built.iter().filter(|q| q.is_none()).count();
    Ok((built.into_iter().flatten().collect(), skipped))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub ratios: [f64; 3],
    /// per-type cap on evaluation negatives
    pub neg_budget: usize,
    /// per-type cap on the training negative bank
    pub train_neg_budget: usize,
    pub dev_queries: usize,
    pub test_queries: usize,
    pub train_triples: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            ratios: [0.8, 0.1, 0.1],
            neg_budget: 1000,
            train_neg_budget: 100,
            dev_queries: 300,
            test_queries: 4000,
            train_triples: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: DataSplit,
    pub train: Vec<Triple>,
    pub dev: Vec<EvalQuery>,
    pub test: Vec<EvalQuery>,
    /// queries skipped for lacking positives, dev and test
    pub skipped: [usize; 2],
    /// train, dev, test
    pub stats: [GraphStats; 3],
}

pub fn build_dataset(full: &AliasGraph, cfg: &DatasetConfig) -> Result<Dataset> {
    let split = split_entities(full, cfg.ratios, cfg.seed)?;
    let train_graph = full.restrict(&split.train);
    let bank = NegativeBank::build(full, &train_graph, cfg.train_neg_budget.min(cfg.neg_budget), cfg.seed)?;
    let train = sample_triples(&train_graph, &bank, cfg.train_triples, cfg.seed)?;
    let (dev, dev_skipped) = build_eval_set(full, &split.dev, cfg.dev_queries, cfg.neg_budget, cfg.seed ^ 0xD)?;
    let (test, test_skipped) = build_eval_set(full, &split.test, cfg.test_queries, cfg.neg_budget, cfg.seed ^ 0x7)?;
    let stats = [train_graph.stats(), full.restrict(&split.dev).stats(), full.restrict(&split.test).stats()];
    Ok(Dataset { split, train, dev, test, skipped: [dev_skipped, test_skipped], stats })
}

impl Dataset {
    /// Corpus table: one row per split, plus negative counts per type.
    pub fn stats_report(&self) -> String {
        let mut out = String::from("split\tunique_strings\tentities\tmentions_per_entity\tqueries\tskipped");
        for t in NegType::ALL {
            write!(out, "\tneg_{t}").unwrap();
        }
        out.push('\n');
        let rows: [(&str, &GraphStats, usize, usize, Option<&[EvalQuery]>); 3] = [
            ("train", &self.stats[0], self.train.len(), 0, None),
            ("dev", &self.stats[1], self.dev.len(), self.skipped[0], Some(&self.dev)),
            ("test", &self.stats[2], self.test.len(), self.skipped[1], Some(&self.test)),
        ];
        for (name, s, n, skipped, qs) in rows {
            write!(
                out,
                "{name}\t{}\t{}\t{:.2} ± {:.2}\t{n}\t{skipped}",
                s.unique_strings, s.entities, s.mentions_per_entity_mean, s.mentions_per_entity_sd
            )
            .unwrap();
            for t in NegType::ALL {
                let c = qs.map_or(0, |qs| qs.iter().flat_map(|q| &q.negatives).filter(|(_, k)| *k == t).count());
                write!(out, "\t{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Writes `train.tsv`, `dev.tsv`, `test.tsv` and `stats.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_triples(&dir.join("train.tsv"), &self.train)?;
        write_eval(&dir.join("dev.tsv"), &self.dev)?;
        write_eval(&dir.join("test.tsv"), &self.test)?;
        let p = dir.join("stats.tsv");
        std::fs::write(&p, self.stats_report()).map_err(|e| Error::io(&p, e))
    }
}

pub fn write_triples(path: &Path, triples: &[Triple]) -> Result<()> {
    let mut out = String::new();
    for t in triples {
        writeln!(out, "{}\t{}\t{}", t.q, t.p, t.n).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_triples(path: &Path) -> Result<Vec<Triple>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 || f.iter().any(|x| x.is_empty()) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "expected q \\t p \\t n".to_string(),
            });
        }
        out.push(Triple { q: f[0].to_string(), p: f[1].to_string(), n: f[2].to_string() });
    }
    Ok(out)
}

/// `query \t candidate \t label \t neg_type`; positives carry type `-`.
pub fn write_eval(path: &Path, queries: &[EvalQuery]) -> Result<()> {
    let mut out = String::new();
    for q in queries {
        for p in &q.positives {
            writeln!(out, "{}\t{p}\t1\t-", q.query).unwrap();
        }
        for (n, t) in &q.negatives {
            writeln!(out, "{}\t{n}\t0\t{t}", q.query).unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_eval(path: &Path) -> Result<Vec<EvalQuery>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut order: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<EvalQuery> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Parse { path: path.display().to_string(), line: i + 1, msg: msg.to_string() };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 || f[0].is_empty() || f[1].is_empty() {
            return Err(err("expected query \\t candidate \\t label \\t neg_type"));
        }
        let slot = *order.entry(f[0].to_string()).or_insert_with(|| {
            out.push(EvalQuery { query: f[0].to_string(), positives: Vec::new(), negatives: Vec::new() });
            out.len() - 1
        });
        match f[2] {
            "1" => out[slot].positives.push(f[1].to_string()),
            "0" => {
                let t = f[3].parse().map_err(|_| err("unknown negative type"))?;
                out[slot].negatives.push((f[1].to_string(), t));
            }
            _ => return Err(err("label must be 0 or 1")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_query_on_two_entities() {
        let g = AliasGraph::from_tsv("A\tabc\nA\tabd\nB\tabe\n", "t").unwrap();
        let (qs, skipped) = build_eval_set(&g, &[0, 1], 1, 10, 0).unwrap();
        assert_eq!(qs.len() + skipped, 1);
        for q in &qs {
            for (n, _) in &q.negatives {
                assert!(!g.are_co_aliases(&q.query, n));
                assert!(!q.positives.contains(n));
            }
            for p in &q.positives {
                assert!(g.are_co_aliases(&q.query, p));
            }
        }
    }

    #[test]
    fn eval_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let qs = vec![EvalQuery {
            query: "Paul".into(),
            positives: vec!["P.".into()],
            negatives: vec![("Pal".into(), NegType::Edit), ("Zed".into(), NegType::Random)],
        }];
        let p = dir.path().join("e.tsv");
        write_eval(&p, &qs).unwrap();
        assert_eq!(read_eval(&p).unwrap(), qs);
        let t = vec![Triple { q: "a".into(), p: "b".into(), n: "c".into() }];
        let p = dir.path().join("t.tsv");
        write_triples(&p, &t).unwrap();
        assert_eq!(read_triples(&p).unwrap(), t);
    }
}
