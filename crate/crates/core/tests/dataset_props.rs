mod common;

use std::collections::HashSet;

use stance::aliasdata::synth::{generate, SynthConfig};
use stance::aliasdata::{
    build_dataset, generate_negatives, hop_distance, read_eval, read_triples, split_entities, AliasGraph, DatasetConfig, NegType,
};
use stance::Error;

use common::{bipartite_distances, lev_oracle};

fn small() -> DatasetConfig {
    DatasetConfig { ratios: [0.6, 0.2, 0.2], neg_budget: 10, train_neg_budget: 10, dev_queries: 20, test_queries: 30, train_triples: 300, seed: 4 }
}

#[test]
fn dataset_is_deterministic_in_its_seed() {
    let g = generate(&SynthConfig::new(120, 1));
    let a = build_dataset(&g, &small()).unwrap();
    let b = build_dataset(&g, &small()).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.dev, b.dev);
    assert_eq!(a.test, b.test);
    let c = build_dataset(&g, &DatasetConfig { seed: 5, ..small() }).unwrap();
    assert_ne!(a.test, c.test);
}

#[test]
fn splits_partition_entities() {
    let g = generate(&SynthConfig::new(97, 2));
    let s = split_entities(&g, [0.8, 0.1, 0.1], 3).unwrap();
    let all: Vec<usize> = s.parts().iter().flat_map(|p| p.iter().copied()).collect();
    let set: HashSet<usize> = all.iter().copied().collect();
    assert_eq!(all.len(), 97);
    assert_eq!(set.len(), 97);
    assert_eq!(s.train.len(), 78);
}

#[test]
fn eval_queries_draw_only_from_their_split() {
    let g = generate(&SynthConfig::new(150, 3));
    let d = build_dataset(&g, &small()).unwrap();
    let pool = g.restrict(&d.split.test);
    let test_mentions: HashSet<&str> = pool.mentions().iter().map(String::as_str).collect();
    for q in &d.test {
        assert!(test_mentions.contains(q.query.as_str()));
        assert!(q.positives.iter().all(|p| test_mentions.contains(p.as_str())));
        assert!(q.negatives.iter().all(|(n, _)| test_mentions.contains(n.as_str())));
        let names: HashSet<&str> = q.positives.iter().map(String::as_str).chain(q.negatives.iter().map(|(n, _)| n.as_str())).collect();
        assert_eq!(names.len(), q.num_candidates(), "duplicate candidates for {:?}", q.query);
    }
}

#[test]
fn written_files_read_back() {
    let g = generate(&SynthConfig::new(80, 4));
    let d = build_dataset(&g, &small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    d.write(dir.path()).unwrap();
    assert_eq!(read_triples(&dir.path().join("train.tsv")).unwrap(), d.train);
    let mut test = read_eval(&dir.path().join("test.tsv")).unwrap();
    let mut want = d.test.clone();
    for q in test.iter_mut().chain(want.iter_mut()) {
        q.positives.sort();
        q.negatives.sort();
    }
    test.sort_by(|a, b| a.query.cmp(&b.query));
    want.sort_by(|a, b| a.query.cmp(&b.query));
    assert_eq!(test, want);
    assert!(std::fs::read_to_string(dir.path().join("stats.tsv")).unwrap().starts_with("split\t"));
}

#[test]
fn negative_generators_match_independent_checks() {
    let g = generate(&SynthConfig::new(300, 6));
    let rows: Vec<(String, String)> = g
        .to_tsv()
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    for q in g.mentions().iter().step_by(37) {
        let hops = bipartite_distances(&rows, q);
        let qc: Vec<char> = q.chars().collect();
        for n in generate_negatives(&g, q, NegType::Edit, 50, 0).unwrap() {
            assert!((1..=2).contains(&lev_oracle(&qc, &n.chars().collect::<Vec<_>>())));
            assert!(!g.are_co_aliases(q, &n));
        }
        for kind in [NegType::Hop4, NegType::Hop6] {
            let want = if kind == NegType::Hop4 { 4 } else { 6 };
            let got = generate_negatives(&g, q, kind, 10_000, 0).unwrap();
            let expect: HashSet<&str> = hops.iter().filter(|(_, d)| **d == want).map(|(m, _)| m.as_str()).collect();
            assert_eq!(got.iter().map(String::as_str).collect::<HashSet<_>>(), expect, "{kind} for {q:?}");
            for n in &got {
                assert_eq!(hop_distance(&g, q, n).unwrap(), Some(want));
            }
        }
    }
}

#[test]
fn unknown_query_and_malformed_input_are_errors() {
    let g = AliasGraph::from_tsv("E1\ta\nE1\tb\n", "t").unwrap();
    assert!(generate_negatives(&g, "zzz", NegType::Random, 5, 0).is_err());
    match AliasGraph::from_tsv("E1\ta\nno-tab-here\n", "corpus.tsv") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}
