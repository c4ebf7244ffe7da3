use std::collections::BTreeSet;
use std::time::Instant;

use genekg_core::kg::KnowledgeGraph;
use genekg_core::ntriples::{Term, Triple};
use genekg_core::walker::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn node(i: usize) -> String {
    format!("http://t/n{i}")
}

/// Random DAG: edges only go from lower to higher index, with up to two
/// predicates and the odd literal object.
fn random_dag(rng: &mut impl Rng, n: usize) -> KnowledgeGraph {
    let mut triples = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(0.25) {
                let p = format!("http://t/p{}", rng.random_range(0..2));
                triples.push(Triple::new(Term::iri(node(u)), p, Term::iri(node(v))));
            }
        }
        if rng.random_bool(0.2) {
            triples.push(Triple::new(Term::iri(node(u)), "http://t/label", Term::Literal(format!("\"n{u}\""))));
        }
        triples.push(Triple::new(Term::iri(node(u)), "http://t/type", Term::iri("http://t/Thing")));
    }
    KnowledgeGraph::from_triples(&triples)
}

/// Every maximal directed walk of at most `depth` hops, literals excluded.
fn brute_force(kg: &KnowledgeGraph, root: &str, depth: usize) -> Vec<Vec<String>> {
    fn go(kg: &KnowledgeGraph, path: &mut Vec<String>, v: u32, left: usize, out: &mut Vec<Vec<String>>) {
        let next: Vec<_> = kg
            .out_edges(v)
            .iter()
            .filter(|&&(_, o)| kg.node(o).kind != genekg_core::kg::NodeKind::Literal)
            .copied()
            .collect();
        if left == 0 || next.is_empty() {
            out.push(path.clone());
            return;
        }
        for (p, o) in next {
            path.push(kg.predicate(p).to_string());
            path.push(kg.node(o).token());
            go(kg, path, o, left - 1, out);
            path.truncate(path.len() - 2);
        }
    }
    let mut out = Vec::new();
    let r = kg.node_by_token(root).unwrap();
    go(kg, &mut vec![root.to_string()], r, depth, &mut out);
    out
}

#[test]
fn matches_brute_force_on_random_dags() {
    let start = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let params = WalkParams { max_walks: 500, max_depth: 4 };
    let mut compared = 0;
    for g in 0..50 {
        let n = rng.random_range(2..=15);
        let kg = random_dag(&mut rng, n);
        let roots: Vec<String> = (0..n).map(node).collect();
        let corpus = extract_walks(&kg, &roots, &params, g).unwrap();
        assert!(validate_corpus(&kg, &corpus, &params).is_empty());
        for root in &roots {
            let mut expected = brute_force(&kg, root, params.max_depth);
            let mut got: Vec<Vec<String>> = corpus
                .walks
                .iter()
                .filter(|w| w.root() == Some(root.as_str()))
                .map(|w| w.tokens.clone())
                .collect();
            if expected.len() <= params.max_walks {
                expected.sort();
                got.sort();
                assert_eq!(got, expected, "graph {g}, root {root}");
                compared += 1;
            } else {
                let all: BTreeSet<_> = expected.into_iter().collect();
                let distinct: BTreeSet<_> = got.iter().cloned().collect();
                assert_eq!(distinct.len(), params.max_walks);
                assert!(distinct.is_subset(&all));
            }
        }
    }
    assert!(compared > 100);
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn capped_sampling_stays_within_the_walk_set() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let params = WalkParams { max_walks: 7, max_depth: 4 };
    for g in 0..30 {
        let kg = random_dag(&mut rng, 12);
        let root = node(0);
        let all: BTreeSet<Vec<String>> = brute_force(&kg, &root, 4).into_iter().collect();
        let c = extract_walks(&kg, &[root.clone()], &params, g).unwrap();
        let got: BTreeSet<Vec<String>> = c.walks.iter().map(|w| w.tokens.clone()).collect();
        assert_eq!(got.len(), c.walks.len());
        assert_eq!(got.len(), all.len().min(7));
        assert!(got.is_subset(&all));
    }
}

#[test]
fn tree_gives_one_walk_per_leaf() {
    // binary tree of depth 3: 8 leaves
    let mut triples = Vec::new();
    for i in 0..7 {
        for c in [2 * i + 1, 2 * i + 2] {
            triples.push(Triple::new(Term::iri(node(i)), "http://t/child", Term::iri(node(c))));
        }
    }
    let kg = KnowledgeGraph::from_triples(&triples);
    let c = extract_walks(&kg, &[node(0)], &WalkParams::default(), 0).unwrap();
    assert_eq!(c.len(), 8);
    let leaves: BTreeSet<&str> = c.walks.iter().map(|w| w.tokens.last().unwrap().as_str()).collect();
    assert_eq!(leaves.len(), 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn deterministic_and_parallel_equal(graph_seed in any::<u64>(), seed in any::<u64>(), cap in 1usize..40, jobs in 1usize..5) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(graph_seed);
        let kg = random_dag(&mut rng, 14);
        let roots: Vec<String> = (0..14).map(node).collect();
        let params = WalkParams { max_walks: cap, max_depth: 4 };
        let a = extract_walks(&kg, &roots, &params, seed).unwrap();
        let b = extract_walks(&kg, &roots, &params, seed).unwrap();
        prop_assert_eq!(a.to_text(), b.to_text());
        let p = extract_walks_parallel(&kg, &roots, &params, seed, jobs).unwrap();
        prop_assert_eq!(&a, &p);
        prop_assert!(validate_corpus(&kg, &p, &params).is_empty());
    }
}
