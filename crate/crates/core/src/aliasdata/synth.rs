//! Synthetic person-name alias corpora for desk-scale experiments.
//!
//! Entities are invented names drawn from shared first-name and surname
//! pools. Aliases are token permutations, initialisms and 1–2 character
//! corruptions; a few entities also own their bare surname, which links
//! otherwise unrelated entities through the graph.

use std::collections::HashSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::AliasGraph;

const ONSETS: [&str; 18] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "gr"];
const VOWELS: [&str; 8] = ["a", "e", "i", "o", "u", "ai", "ei", "ou"];
const CODAS: [&str; 8] = ["", "", "n", "r", "l", "s", "rt", "nd"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub entities: usize,
    /// distinct surnames, shared across entities
    pub surnames: usize,
    pub first_names: usize,
    /// probability that an entity has a `Last, First` alias
    pub comma_permutation: f64,
    /// probability of a `Last First` alias
    pub plain_permutation: f64,
    pub initialism: f64,
    pub corruption: f64,
    /// probability that an entity also owns its bare surname
    pub surname_only: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(entities: usize, seed: u64) -> Self {
        Self {
            entities,
            surnames: (entities / 4).max(1),
            first_names: (entities / 2).max(1),
            comma_permutation: 0.8,
            plain_permutation: 0.4,
            initialism: 0.5,
            corruption: 0.7,
            surname_only: 0.3,
            seed,
        }
    }
}

fn word<R: Rng>(rng: &mut R, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    w.push_str(CODAS.choose(rng).unwrap());
    let mut c = w.chars();
    let first = c.next().unwrap().to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

fn pool<R: Rng>(rng: &mut R, n: usize, syllables: std::ops::RangeInclusive<usize>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    while out.len() < n {
        let k = rng.gen_range(syllables.clone());
        let w = word(rng, k);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Applies one or two random character edits, never producing the input,
/// an empty string, or edge whitespace.
pub fn corrupt<R: Rng>(s: &str, rng: &mut R) -> String {
    loop {
        let mut c: Vec<char> = s.chars().collect();
        for _ in 0..rng.gen_range(1..=2) {
            let letter = char::from(b'a' + rng.gen_range(0..26u8));
            let i = rng.gen_range(0..c.len().max(1));
            match rng.gen_range(0..4) {
                0 if !c.is_empty() => c[i] = letter,
                1 if c.len() > 1 => {
                    c.remove(i);
                }
                2 => c.insert(i, letter),
                _ if c.len() > 1 && i + 1 < c.len() => c.swap(i, i + 1),
                _ => c.insert(i, letter),
            }
        }
        let out: String = c.into_iter().collect();
        if out != s && !out.is_empty() && out.trim() == out && !out.contains("  ") {
            return out;
        }
    }
}

/// Generates the corpus as an alias graph with entity frequency weights.
pub fn generate(cfg: &SynthConfig) -> AliasGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let firsts = pool(&mut rng, cfg.first_names, 1..=2);
    let lasts = pool(&mut rng, cfg.surnames, 2..=3);
    let mut names = HashSet::new();
    let mut g = AliasGraph::new();
    let width = cfg.entities.to_string().len();
    for k in 0..cfg.entities {
        let (first, last) = loop {
            let f = firsts.choose(&mut rng).unwrap().clone();
            let l = lasts.choose(&mut rng).unwrap().clone();
            if names.insert((f.clone(), l.clone())) {
                break (f, l);
            }
        };
        let id = format!("E{k:0width$}");
        let weight = (1000.0 / (k as f64 + 1.0)).ceil() + rng.gen_range(0.0..5.0f64).floor();
        let canonical = format!("{first} {last}");
        let mut aliases = vec![canonical.clone()];
        if rng.gen_bool(cfg.comma_permutation) {
            aliases.push(format!("{last}, {first}"));
        }
        if rng.gen_bool(cfg.plain_permutation) {
            aliases.push(format!("{last} {first}"));
        }
        if rng.gen_bool(cfg.initialism) {
            let i = first.chars().next().unwrap();
            aliases.push(if rng.gen_bool(0.5) { format!("{i}. {last}") } else { format!("{last}, {i}.") });
        }
        if rng.gen_bool(cfg.corruption) {
            aliases.push(corrupt(&canonical, &mut rng));
        }
        if aliases.len() > 2 && rng.gen_bool(cfg.corruption / 2.0) {
            let src = aliases[1].clone();
            aliases.push(corrupt(&src, &mut rng));
        }
        if rng.gen_bool(cfg.surname_only) {
            aliases.push(last.clone());
        }
        if aliases.len() == 1 {
            aliases.push(format!("{last}, {first}"));
        }
        for a in aliases {
            g.add_alias(&id, &a, Some(weight));
        }
    }
    g
}
