use std::sync::Arc;

use crate::diffcore::SparseMatrix;
use crate::scalar::Scalar;

use super::Kg;

/// Precomputed sparse structure of one graph.
#[derive(Debug, Clone)]
pub struct GraphTensors<T> {
    pub num_entities: usize,
    pub num_relations: usize,
    /// `D^{-1/2} (S + I) D^{-1/2}` with `S` the binary symmetrized adjacency.
    pub norm_adj: Arc<SparseMatrix<T>>,
    /// Neighborhood pattern (symmetrized, with self-loops); values are 1.
    pub attn_pattern: Arc<SparseMatrix<T>>,
    /// Entry (e, r): number of triples `(·, r, e)`.
    pub rel_in: Arc<SparseMatrix<T>>,
    /// Entry (e, r): number of triples `(e, r, ·)`.
    pub rel_out: Arc<SparseMatrix<T>>,
    /// `rel_in` with each row divided by `max(1, in_deg)`.
    pub rel_in_mean: Arc<SparseMatrix<T>>,
    pub rel_out_mean: Arc<SparseMatrix<T>>,
    pub in_deg: Vec<usize>,
    pub out_deg: Vec<usize>,
}

fn counts<T: Scalar>(
    n: usize,
    m: usize,
    pairs: impl Iterator<Item = (usize, usize)>,
) -> (SparseMatrix<T>, SparseMatrix<T>, Vec<usize>) {
    let mut map = std::collections::BTreeMap::new();
    let mut deg = vec![0usize; n];
    for (e, r) in pairs {
        *map.entry((e, r)).or_insert(0usize) += 1;
        deg[e] += 1;
    }
    let raw: Vec<_> = map.iter().map(|(&(e, r), &c)| (e, r, T::of_usize(c))).collect();
    let mean: Vec<_> = map
        .iter()
        .map(|(&(e, r), &c)| (e, r, T::of_usize(c) / T::of_usize(deg[e].max(1))))
        .collect();
    (
        SparseMatrix::from_triplets(n, m, raw).expect("indices from a valid graph"),
        SparseMatrix::from_triplets(n, m, mean).expect("indices from a valid graph"),
        deg,
    )
}

pub fn build_graph_tensors<T: Scalar>(kg: &Kg) -> GraphTensors<T> {
    let n = kg.num_entities();
    let m = kg.num_relations();
    let mut edges = std::collections::BTreeSet::new();
    for i in 0..n {
        edges.insert((i, i));
    }
    for t in kg.triples() {
        edges.insert((t.head, t.tail));
        edges.insert((t.tail, t.head));
    }
    let mut deg = vec![0usize; n];
    for &(r, _) in &edges {
        deg[r] += 1;
    }
    let inv_sqrt: Vec<T> = deg.iter().map(|&d| T::one() / T::of_usize(d).sqrt()).collect();
    let norm = edges
        .iter()
        .map(|&(r, c)| (r, c, inv_sqrt[r] * inv_sqrt[c]))
        .collect();
    let pattern = edges.iter().map(|&(r, c)| (r, c, T::one())).collect();

    let (rel_in, rel_in_mean, in_deg) =
        counts::<T>(n, m, kg.triples().iter().map(|t| (t.tail, t.relation)));
    let (rel_out, rel_out_mean, out_deg) =
        counts::<T>(n, m, kg.triples().iter().map(|t| (t.head, t.relation)));

    GraphTensors {
        num_entities: n,
        num_relations: m,
        norm_adj: Arc::new(SparseMatrix::from_triplets(n, n, norm).expect("valid")),
        attn_pattern: Arc::new(SparseMatrix::from_triplets(n, n, pattern).expect("valid")),
        rel_in: Arc::new(rel_in),
        rel_out: Arc::new(rel_out),
        rel_in_mean: Arc::new(rel_in_mean),
        rel_out_mean: Arc::new(rel_out_mean),
        in_deg,
        out_deg,
    }
}
