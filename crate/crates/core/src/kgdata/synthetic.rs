use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Kg, KgPair, Link, LinkSplit, Triple};

/// Parameters of the synthetic hierarchical pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub branching: usize,
    /// Extra random edges as a fraction of `n` (rounded up).
    pub noise: f64,
    /// Fraction of mapped triples removed from the second graph.
    pub dropout: f64,
    pub relations: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(n: usize, branching: usize, noise: f64, seed: u64) -> Self {
        Self {
            n,
            branching,
            noise,
            dropout: 0.1,
            relations: 5,
            seed,
        }
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.dropout = dropout;
        self
    }
}

fn entity_uri(kg: usize, id: usize) -> String {
    format!("http://synthetic.kg{kg}/entity/{id}")
}

fn relation_uri(kg: usize, id: usize) -> String {
    format!("http://synthetic.kg{kg}/relation/{id}")
}

/// 20/10/70 split of the ground-truth links; fold 1 is the split stored
/// on the generated pair, other folds reshuffle.
pub fn split_links(links: &[Link], seed: u64, fold: usize) -> LinkSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + fold as u64);
    let mut order = links.to_vec();
    order.shuffle(&mut rng);
    let n = order.len();
    let n_train = n * 2 / 10;
    let n_valid = n / 10;
    let test = order.split_off(n_train + n_valid);
    let valid = order.split_off(n_train);
    LinkSplit {
        train: order,
        valid,
        test,
    }
}

/// Hierarchical graph (a rooted tree plus noise edges) and a relabeled
/// copy with triple dropout. Links are the relabeling permutation.
pub fn generate_synthetic_pair(cfg: &SyntheticConfig) -> Result<KgPair> {
    if cfg.n < 4 {
        return Err(Error::invalid(format!("synthetic pair needs n >= 4, got {}", cfg.n)));
    }
    if cfg.branching < 1 {
        return Err(Error::invalid("branching factor must be at least 1"));
    }
    if cfg.relations < 1 {
        return Err(Error::invalid("relation vocabulary must be nonempty"));
    }
    if !(0.0..=1.0).contains(&cfg.dropout) || !(cfg.noise >= 0.0) {
        return Err(Error::invalid("noise must be >= 0 and dropout within [0, 1]"));
    }
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut kg1 = Kg::new();
    let mut kg2 = Kg::new();
    for i in 0..n {
        kg1.intern_entity(&entity_uri(1, i));
        kg2.intern_entity(&entity_uri(2, i));
    }
    for r in 0..cfg.relations {
        kg1.intern_relation(&relation_uri(1, r));
        kg2.intern_relation(&relation_uri(2, r));
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let mut linked: HashSet<(usize, usize)> = HashSet::new();
    for child in 1..n {
        let parent = (child - 1) / cfg.branching;
        kg1.add_triple(Triple {
            head: parent,
            relation: (child - 1) % cfg.relations,
            tail: child,
        })?;
        linked.insert((parent.min(child), parent.max(child)));
    }

    let extra = (cfg.noise * n as f64).ceil() as usize;
    let max_pairs = n * (n - 1) / 2;
    let mut added = 0;
    while added < extra && linked.len() < max_pairs {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v || !linked.insert((u.min(v), u.max(v))) {
            continue;
        }
        let relation = rng.gen_range(0..cfg.relations);
        kg1.add_triple(Triple {
            head: u,
            relation,
            tail: v,
        })?;
        added += 1;
    }

    let m = kg1.triples().len();
    let n_drop = (cfg.dropout * m as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut rng);
    let dropped: HashSet<usize> = idx[..n_drop].iter().copied().collect();
    let mut mapped: Vec<Triple> = kg1
        .triples()
        .iter()
        .enumerate()
        .filter(|(k, _)| !dropped.contains(k))
        .map(|(_, t)| Triple {
            head: perm[t.head],
            relation: t.relation,
            tail: perm[t.tail],
        })
        .collect();
    mapped.shuffle(&mut rng);
    for t in mapped {
        kg2.add_triple(t)?;
    }

    let links: Vec<Link> = (0..n).map(|i| (i, perm[i])).collect();
    KgPair::new(kg1, kg2, split_links(&links, cfg.seed, 1))
}
