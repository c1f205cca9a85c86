//! Cross-document coreference: average-linkage agglomerative clustering
//! over pairwise scores, B³ evaluation and threshold tuning.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::evalrank::PairScorer;
use crate::{Error, Result};

/// Symmetric `n×n` pairwise score matrix; the diagonal is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    /// From a row-major buffer. Off-diagonal entries must be finite and
    /// symmetric.
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(Error::invalid(format!("{} values for a {n}x{n} score matrix", values.len())));
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if i != j && !v.is_finite() {
                    return Err(Error::Numerical(format!("non-finite score for pair ({i}, {j})")));
                }
                if i < j && v != values[j * n + i] {
                    return Err(Error::invalid(format!("scores for ({i}, {j}) are not symmetric")));
                }
            }
        }
        Ok(Self { n, values })
    }

    /// Scores every unordered pair of `mentions` in parallel. The matrix is
    /// symmetrized with the `(i, j)`, `i < j` score.
    pub fn from_scorer<S: PairScorer + ?Sized>(mentions: &[String], scorer: &S) -> Result<Self> {
        let n = mentions.len();
        if n == 0 {
            return Err(Error::invalid("no mentions to cluster"));
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                ((i + 1)..n)
                    .map(|j| {
                        let s = scorer.pair_score(&mentions[i], &mentions[j])?;
                        if !s.is_finite() {
                            return Err(Error::Numerical(format!(
                                "non-finite score for pair ({:?}, {:?})",
                                mentions[i], mentions[j]
                            )));
                        }
                        Ok(s)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut values = vec![0.0; n * n];
        for (i, row) in rows.iter().enumerate() {
            for (k, &s) in row.iter().enumerate() {
                let j = i + 1 + k;
                values[i * n + j] = s;
                values[j * n + i] = s;
            }
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Smallest and largest off-diagonal scores.
    pub fn range(&self) -> Option<(f64, f64)> {
        let mut it = (0..self.n).flat_map(|i| ((i + 1)..self.n).map(move |j| (i, j))).map(|(i, j)| self.get(i, j));
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// surviving cluster id (the smaller one)
    pub a: usize,
    pub b: usize,
    pub linkage: f64,
}

/// Full merge history from singletons. Cluster ids are the smallest leaf
/// index they contain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
}

/// Mention index to cluster label; labels number clusters in order of
/// their first mention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub labels: Vec<usize>,
}

impl Clustering {
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map = HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self { labels }
    }

    pub fn num_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// True if every cluster of `self` lies inside one cluster of `coarser`.
    pub fn refines(&self, coarser: &Clustering) -> bool {
        let mut map: HashMap<usize, usize> = HashMap::new();
        self.labels.iter().zip(&coarser.labels).all(|(a, b)| *map.entry(*a).or_insert(*b) == *b)
    }
}

/// Runs average-linkage agglomeration to a single cluster, merging the pair
/// with the highest mean pairwise score; ties go to the smallest id pair.
pub fn hac_dendrogram(scores: &ScoreMatrix) -> Dendrogram {
    let n = scores.n;
    let mut sums = scores.values.clone();
    let mut size = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for (x, &i) in active.iter().enumerate() {
            for &j in &active[x + 1..] {
                let link = sums[i * n + j] / (size[i] * size[j]) as f64;
                if best.is_none_or(|(b, _, _)| link > b) {
                    best = Some((link, i, j));
                }
            }
        }
        let (linkage, a, b) = best.expect("two active clusters");
        for &k in &active {
            if k != a && k != b {
                let s = sums[a * n + k] + sums[b * n + k];
                sums[a * n + k] = s;
                sums[k * n + a] = s;
            }
        }
        size[a] += size[b];
        active.retain(|&k| k != b);
        merges.push(Merge { a, b, linkage });
    }
    Dendrogram { leaves: n, merges }
}

impl Dendrogram {
    /// Applies merges in order while their linkage is at least `tau`.
    pub fn cut(&self, tau: f64) -> Clustering {
        let mut parent: Vec<usize> = (0..self.leaves).collect();
        for m in &self.merges {
            if !(m.linkage >= tau) {
                break;
            }
            parent[m.b] = m.a;
        }
        let root = |mut i: usize| {
            while parent[i] != i {
                i = parent[i];
            }
            i
        };
        let raw: Vec<usize> = (0..self.leaves).map(root).collect();
        Clustering::from_labels(&raw)
    }
}

/// Average-linkage clustering stopped once the best linkage falls below `tau`.
pub fn hac_average(scores: &ScoreMatrix, tau: f64) -> Clustering {
    hac_dendrogram(scores).cut(tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BCubed {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn b_cubed(pred: &Clustering, gold: &Clustering) -> Result<BCubed> {
    let n = pred.labels.len();
    if n != gold.labels.len() || n == 0 {
        return Err(Error::invalid(format!(
            "clusterings cover {} and {} mentions",
            pred.labels.len(),
            gold.labels.len()
        )));
    }
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pred_size: HashMap<usize, usize> = HashMap::new();
    let mut gold_size: HashMap<usize, usize> = HashMap::new();
    for (&p, &g) in pred.labels.iter().zip(&gold.labels) {
        *joint.entry((p, g)).or_default() += 1;
        *pred_size.entry(p).or_default() += 1;
        *gold_size.entry(g).or_default() += 1;
    }
    let (mut precision, mut recall) = (0.0, 0.0);
    for (&p, &g) in pred.labels.iter().zip(&gold.labels) {
        let overlap = joint[&(p, g)] as f64;
        precision += overlap / pred_size[&p] as f64;
        recall += overlap / gold_size[&g] as f64;
    }
    precision /= n as f64;
    recall /= n as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(BCubed { precision, recall, f1 })
}

/// 101 evenly spaced thresholds from the smallest to the largest score.
pub fn default_grid(scores: &ScoreMatrix) -> Vec<f64> {
    match scores.range() {
        Some((lo, hi)) => (0..=100).map(|k| lo + (hi - lo) * k as f64 / 100.0).collect(),
        None => vec![0.0],
    }
}

/// Threshold with the best B³ F1 on `gold`; ties go to the smallest value.
pub fn tune_threshold(scores: &ScoreMatrix, gold: &Clustering, grid: &[f64]) -> Result<(f64, BCubed)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty threshold grid"));
    }
    let dendrogram = hac_dendrogram(scores);
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, BCubed)> = None;
    for tau in sorted {
        let b = b_cubed(&dendrogram.cut(tau), gold)?;
        if best.is_none_or(|(_, bb)| b.f1 > bb.f1) {
            best = Some((tau, b));
        }
    }
    Ok(best.expect("nonempty grid"))
}

/// `id \t text` lines; a line without a tab takes its 0-based line number as id.
pub fn read_mentions(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, mention) = match line.split_once('\t') {
            Some((id, m)) => (id.to_string(), m.to_string()),
            None => (i.to_string(), line.to_string()),
        };
        if mention.is_empty() {
            return Err(Error::Parse { path: path.display().to_string(), line: i + 1, msg: "empty mention".into() });
        }
        out.push((id, mention));
    }
    Ok(out)
}

/// `mention_id \t entity_id` lines, as a clustering aligned with `ids`.
pub fn read_gold(path: &Path, ids: &[String]) -> Result<Clustering> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map: HashMap<String, String> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let Some((m, e)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "expected mention_id \\t entity_id".into(),
            });
        };
        map.insert(m.to_string(), e.to_string());
    }
    let mut entity_ids: HashMap<&str, usize> = HashMap::new();
    let mut raw = Vec::with_capacity(ids.len());
    for id in ids {
        let e = map.get(id).ok_or_else(|| Error::invalid(format!("mention {id:?} missing from gold file")))?;
        let next = entity_ids.len();
        raw.push(*entity_ids.entry(e.as_str()).or_insert(next));
    }
    Ok(Clustering::from_labels(&raw))
}

pub fn format_clustering(ids: &[String], c: &Clustering) -> String {
    let mut out = String::new();
    for (id, l) in ids.iter().zip(&c.labels) {
        writeln!(out, "{id}\t{l}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> ScoreMatrix {
        ScoreMatrix::new(3, vec![0.0, 0.9, 0.1, 0.9, 0.0, 0.1, 0.1, 0.1, 0.0]).unwrap()
    }

    #[test]
    fn one_merge_above_threshold() {
        assert_eq!(hac_average(&three(), 0.5).labels, vec![0, 0, 1]);
        assert_eq!(hac_average(&three(), 0.95).labels, vec![0, 1, 2]);
        assert_eq!(hac_average(&three(), f64::NEG_INFINITY).labels, vec![0, 0, 0]);
        assert_eq!(hac_average(&three(), f64::INFINITY).labels, vec![0, 1, 2]);
    }

    #[test]
    fn b_cubed_hand_examples() {
        let gold = Clustering::from_labels(&[0, 0, 1]);
        let b = b_cubed(&gold, &gold).unwrap();
        assert_eq!((b.precision, b.recall, b.f1), (1.0, 1.0, 1.0));
        let b = b_cubed(&Clustering::from_labels(&[0, 0, 0]), &gold).unwrap();
        assert!((b.precision - 5.0 / 9.0).abs() < 1e-12);
        assert!((b.f1 - 5.0 / 7.0).abs() < 1e-9);
        let b = b_cubed(&Clustering::from_labels(&[0, 1, 2]), &gold).unwrap();
        assert!((b.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.f1 - 0.8).abs() < 1e-9);
        assert!(b_cubed(&gold, &Clustering::from_labels(&[0])).is_err());
    }

    #[test]
    fn tuning_recovers_separable_threshold() {
        let gold = Clustering::from_labels(&[0, 0, 1]);
        let (tau, b) = tune_threshold(&three(), &gold, &default_grid(&three())).unwrap();
        assert_eq!(b.f1, 1.0);
        assert!(tau > 0.1 && tau <= 0.9);
        assert_eq!(tune_threshold(&three(), &gold, &[0.3]).unwrap().0, 0.3);
    }

    #[test]
    fn rejects_non_finite_scores() {
        assert!(ScoreMatrix::new(2, vec![0.0, f64::NAN, f64::NAN, 0.0]).is_err());
    }
}
