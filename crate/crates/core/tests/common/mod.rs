//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};

/// Edit distance by memoized recursion over suffixes.
pub fn lev_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let d = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo).min(go(a, b, i, j + 1, memo)).min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), d);
        d
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Longest common subsequence length by memoized recursion.
pub fn lcs_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let d = if a[i] == b[j] { 1 + go(a, b, i + 1, j + 1, memo) } else { go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo)) };
        memo.insert((i, j), d);
        d
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Exact optimum of the 2×2 transport LP by enumerating the polytope's
/// vertices. The feasible set is the segment `P(t) = [[t, r0 − t], [c0 − t, r1 − c0 + t]]`.
/// Returns the optimal segment `[t_min, t_max]` (a single point unless the
/// objective is flat) and the optimal cost.
pub fn lp_2x2(c: [f64; 4], r: [f64; 2], col: [f64; 2]) -> ((f64, f64), f64) {
    let lo = (r[0] + col[0] - 1.0).max(0.0);
    let hi = r[0].min(col[0]);
    let plan = |t: f64| [t, r[0] - t, col[0] - t, r[1] - col[0] + t];
    let cost = |t: f64| plan(t).iter().zip(&c).map(|(p, c)| p * c).sum::<f64>();
    let (a, b) = (cost(lo), cost(hi));
    if (a - b).abs() < 1e-12 {
        ((lo, hi), a)
    } else if a < b {
        ((lo, lo), a)
    } else {
        ((hi, hi), b)
    }
}

/// Min-cost transport between integer supplies and demands by successive
/// shortest paths (Bellman-Ford) on the bipartite flow network.
pub fn min_cost_transport(cost: &[Vec<f64>], supply: &[i64], demand: &[i64]) -> f64 {
    let (n, m) = (supply.len(), demand.len());
    let nodes = n + m + 2;
    let (s, t) = (n + m, n + m + 1);
    // edges: (to, cap, cost, rev)
    let mut g: Vec<Vec<(usize, i64, f64, usize)>> = vec![Vec::new(); nodes];
    let add = |g: &mut Vec<Vec<(usize, i64, f64, usize)>>, u: usize, v: usize, cap: i64, w: f64| {
        let (ru, rv) = (g[v].len(), g[u].len());
        g[u].push((v, cap, w, ru));
        g[v].push((u, 0, -w, rv));
    };
    for i in 0..n {
        add(&mut g, s, i, supply[i], 0.0);
        for j in 0..m {
            add(&mut g, i, n + j, i64::MAX / 4, cost[i][j]);
        }
    }
    for j in 0..m {
        add(&mut g, n + j, t, demand[j], 0.0);
    }
    let mut total = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; nodes];
        dist[s] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for (k, &(v, cap, w, _)) in g[u].iter().enumerate() {
                    if cap > 0 && dist[u] + w < dist[v] - 1e-12 {
                        dist[v] = dist[u] + w;
                        prev[v] = Some((u, k));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[t].is_infinite() {
            return total;
        }
        let mut push = i64::MAX;
        let mut v = t;
        while let Some((u, k)) = prev[v] {
            push = push.min(g[u][k].1);
            v = u;
        }
        let mut v = t;
        while let Some((u, k)) = prev[v] {
            g[u][k].1 -= push;
            let rev = g[u][k].3;
            g[v][rev].1 += push;
            v = u;
        }
        total += push as f64 * dist[t];
    }
}

/// Average precision straight from its definition: for each relevant item,
/// count relevant items ranked at or above it and divide by its rank.
pub fn ap_oracle(order: &[bool]) -> f64 {
    let ranks: Vec<usize> = order.iter().enumerate().filter(|(_, r)| **r).map(|(i, _)| i + 1).collect();
    let per: Vec<f64> = ranks.iter().map(|&k| ranks.iter().filter(|&&j| j <= k).count() as f64 / k as f64).collect();
    per.iter().sum::<f64>() / per.len() as f64
}

pub fn hits_oracle(order: &[bool], k: usize) -> f64 {
    match order.iter().position(|&r| r) {
        Some(p) if p < k => 1.0,
        _ => 0.0,
    }
}

/// Average-linkage HAC recomputing every linkage from raw scores at each
/// step. Returns clusters as sorted member lists, sorted.
pub fn hac_oracle(n: usize, s: &dyn Fn(usize, usize) -> f64, tau: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > 1 {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += s(i, j);
                    }
                }
                let link = total / (clusters[a].len() * clusters[b].len()) as f64;
                if link > best.0 {
                    best = (link, a, b);
                }
            }
        }
        if best.0 < tau {
            break;
        }
        let moved = clusters.remove(best.2);
        clusters[best.1].extend(moved);
    }
    normalize(clusters)
}

pub fn normalize(mut clusters: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort();
    clusters
}

/// Breadth-first distances over the mention–entity bipartite graph given as
/// `(entity, mention)` rows, counted in mention-entity edges.
pub fn bipartite_distances(rows: &[(String, String)], from: &str) -> HashMap<String, usize> {
    let mut adj: HashMap<String, HashSet<String>> = HashMap::new();
    for (e, m) in rows {
        let (e, m) = (format!("e:{e}"), format!("m:{m}"));
        adj.entry(e.clone()).or_default().insert(m.clone());
        adj.entry(m).or_default().insert(e);
    }
    let start = format!("m:{from}");
    let mut dist = HashMap::from([(start.clone(), 0usize)]);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        for v in adj.get(&u).into_iter().flatten() {
            if !dist.contains_key(v) {
                dist.insert(v.clone(), d + 1);
                queue.push_back(v.clone());
            }
        }
    }
    dist.into_iter().filter_map(|(k, d)| k.strip_prefix("m:").map(|m| (m.to_string(), d))).collect()
}
