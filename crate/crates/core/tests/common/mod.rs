#![allow(dead_code)]

use grag_core::graph::Directedness;
use grag_core::{Edge, FeatureVector, KnowledgeGraph, NodeId};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random undirected graph with `n` nodes whose ids are arbitrary distinct
/// integers.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, dim: usize, edge_p: f64) -> KnowledgeGraph {
    let mut ids: Vec<u64> = (0..1000).collect();
    ids.shuffle(rng);
    ids.truncate(n);
    let nodes = ids
        .iter()
        .map(|&i| {
            let f = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (NodeId(i), FeatureVector::new(f).unwrap())
        })
        .collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.gen_bool(edge_p) {
                edges.push(Edge::new(ids[a], ids[b]));
            }
        }
    }
    KnowledgeGraph::build(nodes, edges, Directedness::Undirected).unwrap()
}

/// Relabels node ids through a random bijection onto fresh ids.
pub fn relabel<R: Rng>(rng: &mut R, g: &KnowledgeGraph) -> KnowledgeGraph {
    let mut fresh: Vec<u64> = (5000..5000 + 3 * g.node_count() as u64).collect();
    fresh.shuffle(rng);
    let map = |id: NodeId| {
        let p = g.node_ids().binary_search(&id).unwrap();
        NodeId(fresh[p])
    };
    let nodes = g
        .node_ids()
        .iter()
        .map(|&id| (map(id), g.features(id).unwrap().clone()))
        .collect();
    let mut edges: Vec<Edge> = g
        .edges()
        .iter()
        .map(|e| Edge {
            src: map(e.src),
            dst: map(e.dst),
            label: e.label.clone(),
        })
        .collect();
    edges.shuffle(rng);
    KnowledgeGraph::build(nodes, edges, g.directedness()).unwrap()
}

/// Independent brute-force top-k: score every entry with a plain loop,
/// stable-sort by (score desc, id asc), take k.
pub fn brute_force_top_k(entries: &[(String, Vec<f64>)], q: &[f64], k: usize) -> Vec<(String, f64)> {
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(String, f64)> = entries
        .iter()
        .map(|(id, v)| {
            let mut dot = 0.0;
            let mut vv = 0.0;
            for i in 0..v.len() {
                dot += q[i] * v[i];
                vv += v[i] * v[i];
            }
            let vn = vv.sqrt();
            let s = if qn == 0.0 || vn == 0.0 { 0.0 } else { dot / (qn * vn) };
            (id.clone(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
