//! Directed depth-bounded random walks over a [`KnowledgeGraph`].
//!
//! A walk is `node pred node pred ... node`, following outgoing edges and
//! stopping after `max_depth` hops or at a node without traversable edges.
//! Literal objects are never entered.
//!
//! Walks from a root are treated as a finite set that can be counted and
//! unranked: when the set is no larger than `max_walks` every walk is
//! emitted once, otherwise `max_walks` distinct walks are drawn uniformly.
//! Each root draws from its own RNG stream derived from the global seed and
//! the root token, so the parallel extractor returns exactly what the
//! sequential one does.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, NodeId, NodeKind, PredId};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkParams {
    pub max_walks: usize,
    /// Maximum number of edge traversals.
    pub max_depth: usize,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            max_walks: 500,
            max_depth: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Walk {
    pub tokens: Vec<String>,
}

impl Walk {
    pub fn root(&self) -> Option<&str> {
        self.tokens.first().map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WalkCorpus {
    pub walks: Vec<Walk>,
    /// Walk count per root, in extraction order.
    pub per_root: Vec<(String, usize)>,
}

impl WalkCorpus {
    pub fn len(&self) -> usize {
        self.walks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walks.is_empty()
    }

    pub fn n_tokens(&self) -> usize {
        self.walks.iter().map(|w| w.tokens.len()).sum()
    }

    pub fn extend(&mut self, other: WalkCorpus) {
        self.walks.extend(other.walks);
        self.per_root.extend(other.per_root);
    }

    /// One walk per line, tokens separated by single spaces.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.walks {
            let _ = writeln!(out, "{}", w.tokens.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Self {
        let mut corpus = WalkCorpus::default();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let tokens: Vec<String> = line.split(' ').map(str::to_string).collect();
            match corpus.per_root.last_mut() {
                Some((root, n)) if *root == tokens[0] => *n += 1,
                _ => corpus.per_root.push((tokens[0].clone(), 1)),
            }
            corpus.walks.push(Walk { tokens });
        }
        corpus
    }
}

/// Walk counts per (remaining depth, node) over the traversable edges.
struct WalkIndex<'a> {
    kg: &'a KnowledgeGraph,
    edges: Vec<Vec<(PredId, NodeId)>>,
    counts: Vec<Vec<u128>>,
}

impl<'a> WalkIndex<'a> {
    fn new(kg: &'a KnowledgeGraph, max_depth: usize) -> Self {
        let edges: Vec<Vec<(PredId, NodeId)>> = (0..kg.n_nodes() as NodeId)
            .map(|v| {
                kg.out_edges(v)
                    .iter()
                    .copied()
                    .filter(|&(_, o)| kg.node(o).kind != NodeKind::Literal)
                    .collect()
            })
            .collect();
        let mut counts = vec![vec![1u128; kg.n_nodes()]];
        for d in 1..=max_depth {
            let prev = &counts[d - 1];
            let row = edges
                .iter()
                .map(|e| {
                    if e.is_empty() {
                        1
                    } else {
                        e.iter().fold(0u128, |acc, &(_, w)| acc.saturating_add(prev[w as usize]))
                    }
                })
                .collect();
            counts.push(row);
        }
        Self { kg, edges, counts }
    }

    fn total(&self, root: NodeId, depth: usize) -> u128 {
        self.counts[depth][root as usize]
    }

    /// The `index`-th maximal walk from `root` in edge-list order.
    fn unrank(&self, root: NodeId, depth: usize, mut index: u128) -> Walk {
        let mut tokens = vec![self.kg.node(root).token()];
        let mut v = root;
        let mut d = depth;
        while d > 0 && !self.edges[v as usize].is_empty() {
            let mut chosen = None;
            for &(p, w) in &self.edges[v as usize] {
                let c = self.counts[d - 1][w as usize];
                if index < c {
                    chosen = Some((p, w));
                    break;
                }
                index -= c;
            }
            // only reachable when the count saturated; fall back to the last edge
            let (p, w) = chosen.unwrap_or(*self.edges[v as usize].last().unwrap());
            tokens.push(self.kg.predicate(p).to_string());
            tokens.push(self.kg.node(w).token());
            v = w;
            d -= 1;
        }
        Walk { tokens }
    }

    fn walks_for_root(&self, root: NodeId, params: &WalkParams, seed: u64) -> Vec<Walk> {
        let total = self.total(root, params.max_depth);
        let k = params.max_walks as u128;
        let indices: Vec<u128> = if total <= k {
            (0..total).collect()
        } else {
            let mut rng = seed::rng(seed::derive(seed, &self.kg.node(root).token()));
            let mut picked: Vec<u128> = if total <= usize::MAX as u128 {
                rand::seq::index::sample(&mut rng, total as usize, params.max_walks)
                    .into_iter()
                    .map(|i| i as u128)
                    .collect()
            } else {
                let mut set = HashSet::with_capacity(params.max_walks);
                while set.len() < params.max_walks {
                    set.insert(rng.random_range(0..total));
                }
                set.into_iter().collect()
            };
            picked.sort_unstable();
            picked
        };
        indices
            .into_iter()
            .map(|i| self.unrank(root, params.max_depth, i))
            .collect()
    }
}

fn resolve_roots(kg: &KnowledgeGraph, roots: &[String]) -> Result<Vec<NodeId>> {
    roots
        .iter()
        .map(|r| {
            kg.node_by_token(r)
                .filter(|&id| kg.node(id).kind != NodeKind::Literal)
                .ok_or_else(|| Error::UnknownRoot(r.clone()))
        })
        .collect()
}

fn assemble(kg: &KnowledgeGraph, roots: &[NodeId], per_root: Vec<Vec<Walk>>) -> WalkCorpus {
    let mut corpus = WalkCorpus::default();
    for (&r, walks) in roots.iter().zip(per_root) {
        corpus.per_root.push((kg.node(r).token(), walks.len()));
        corpus.walks.extend(walks);
    }
    corpus
}

/// Sequential extraction. Output order follows `roots`.
pub fn extract_walks(
    kg: &KnowledgeGraph,
    roots: &[String],
    params: &WalkParams,
    seed: u64,
) -> Result<WalkCorpus> {
    let ids = resolve_roots(kg, roots)?;
    let index = WalkIndex::new(kg, params.max_depth);
    let per_root = ids
        .iter()
        .map(|&r| index.walks_for_root(r, params, seed))
        .collect();
    Ok(assemble(kg, &ids, per_root))
}

/// Multi-threaded extraction over `jobs` workers (0 = rayon's default).
/// Produces the same corpus as [`extract_walks`].
pub fn extract_walks_parallel(
    kg: &KnowledgeGraph,
    roots: &[String],
    params: &WalkParams,
    seed: u64,
    jobs: usize,
) -> Result<WalkCorpus> {
    let ids = resolve_roots(kg, roots)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let per_root = pool.install(|| {
        let index = WalkIndex::new(kg, params.max_depth);
        ids.par_iter()
            .map(|&r| index.walks_for_root(r, params, seed))
            .collect::<Vec<_>>()
    });
    Ok(assemble(kg, &ids, per_root))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Index into `corpus.walks`, or `None` for per-root problems.
    pub walk: Option<usize>,
    pub reason: String,
}

/// Re-checks every walk against the graph. Empty result means the corpus is
/// valid.
pub fn validate_corpus(kg: &KnowledgeGraph, corpus: &WalkCorpus, params: &WalkParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let bad = |i: usize, reason: String| Violation {
        walk: Some(i),
        reason,
    };
    for (i, w) in corpus.walks.iter().enumerate() {
        let n = w.tokens.len();
        if n % 2 == 0 {
            out.push(bad(i, format!("even token count {n}")));
            continue;
        }
        if n > 2 * params.max_depth + 1 {
            out.push(bad(i, format!("{n} tokens exceeds depth {}", params.max_depth)));
        }
        for hop in w.tokens.windows(3).step_by(2) {
            let (s, p, o) = (&hop[0], &hop[1], &hop[2]);
            let ok = match (kg.node_by_token(s), kg.predicate_id(p), kg.node_by_token(o)) {
                (Some(s), Some(p), Some(o)) => kg.has_edge(s, p, o),
                _ => false,
            };
            if !ok {
                out.push(bad(i, format!("edge {s} {p} {o} not in graph")));
            }
        }
    }
    for (root, n) in &corpus.per_root {
        if *n > params.max_walks {
            out.push(Violation {
                walk: None,
                reason: format!("root {root} has {n} walks, cap is {}", params.max_walks),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntriples::{Term, Triple};

    fn t(s: &str, p: &str, o: &str) -> Triple {
        Triple::new(Term::iri(s), p, Term::iri(o))
    }

    fn roots(r: &[&str]) -> Vec<String> {
        r.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn star_root_gives_one_walk_per_leaf() {
        let kg = KnowledgeGraph::from_triples(&[t("r", "p", "a"), t("r", "p", "b"), t("r", "q", "c")]);
        let c = extract_walks(&kg, &roots(&["r"]), &WalkParams::default(), 1).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.walks.iter().all(|w| w.tokens.len() == 3));
        assert!(validate_corpus(&kg, &c, &WalkParams::default()).is_empty());
    }

    #[test]
    fn isolated_root() {
        let mut kg = KnowledgeGraph::from_triples(&[t("x", "p", "y")]);
        kg.add_triple(&Triple::new(Term::iri("iso"), "lbl", Term::Literal("\"v\"".into())));
        let c = extract_walks(&kg, &roots(&["y", "iso"]), &WalkParams::default(), 1).unwrap();
        assert_eq!(c.walks[0].tokens, vec!["y"]);
        assert_eq!(c.walks[1].tokens, vec!["iso"]);
    }

    #[test]
    fn chain_stops_at_depth() {
        let kg = KnowledgeGraph::from_triples(&[
            t("a", "p", "b"),
            t("b", "p", "c"),
            t("c", "p", "d"),
            t("d", "p", "e"),
            t("e", "p", "f"),
        ]);
        let c = extract_walks(&kg, &roots(&["a"]), &WalkParams::default(), 1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.walks[0].tokens, ["a", "p", "b", "p", "c", "p", "d", "p", "e"]);
    }

    #[test]
    fn cap_samples_distinct_walks() {
        let triples: Vec<Triple> = (0..50).map(|i| t("r", "p", &format!("n{i}"))).collect();
        let kg = KnowledgeGraph::from_triples(&triples);
        let params = WalkParams {
            max_walks: 10,
            max_depth: 4,
        };
        let c = extract_walks(&kg, &roots(&["r"]), &params, 3).unwrap();
        assert_eq!(c.len(), 10);
        let uniq: HashSet<_> = c.walks.iter().collect();
        assert_eq!(uniq.len(), 10);
        assert_eq!(c, extract_walks(&kg, &roots(&["r"]), &params, 3).unwrap());
        assert_ne!(c, extract_walks(&kg, &roots(&["r"]), &params, 4).unwrap());
    }

    #[test]
    fn unknown_root() {
        let kg = KnowledgeGraph::from_triples(&[t("a", "p", "b")]);
        match extract_walks(&kg, &roots(&["zzz"]), &WalkParams::default(), 0).unwrap_err() {
            Error::UnknownRoot(r) => assert_eq!(r, "zzz"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn planted_faults_are_reported() {
        let kg = KnowledgeGraph::from_triples(&[t("a", "p", "b")]);
        let params = WalkParams::default();
        let fake = WalkCorpus::from_text("a p c\n");
        assert_eq!(validate_corpus(&kg, &fake, &params).len(), 1);
        let even = WalkCorpus::from_text("a p\n");
        assert_eq!(validate_corpus(&kg, &even, &params).len(), 1);
    }

    #[test]
    fn text_roundtrip() {
        let kg = KnowledgeGraph::from_triples(&[t("a", "p", "b"), t("a", "p", "c"), t("b", "q", "d")]);
        let c = extract_walks(&kg, &roots(&["a", "b"]), &WalkParams::default(), 1).unwrap();
        assert_eq!(WalkCorpus::from_text(&c.to_text()), c);
    }
}
