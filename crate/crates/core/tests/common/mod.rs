//! Independent reference implementations used by the integration tests.
//! Everything here works on plain `Vec<f64>` rows and shares no code with
//! the library's numeric kernels.

#![allow(dead_code)]

use dsea_core::diffcore::{grad_check, GradCheckOptions, GradCheckReport, Tape, Tensor, Var};
use dsea_core::encoders::{
    cross_layer_attention, encode_pair_vars, euclid_encode, gat_layer, hyper_encode, relation_encode, BoundGat,
    BoundParams, ModelDims, ModelParams, PairGraphs,
};
use dsea_core::hypgeom::{exp_map0_var, log_map0_var, Curvature};
use dsea_core::kgdata::{build_graph_tensors, Kg, KgPair, LinkSplit};
use dsea_core::losses::{
    contrastive_loss, inter_loss, intra_loss, margin_loss, sample_negatives, total_loss, LossWeights,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_rows(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Rows {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

pub fn tensor(rows: &Rows) -> Tensor<f64> {
    let c = rows.first().map_or(0, Vec::len);
    Tensor::from_vec(rows.len(), c, rows.concat()).unwrap()
}

pub fn rows_of(t: &Tensor<f64>) -> Rows {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn max_diff(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dense_matmul(a: &Rows, b: &Rows) -> Rows {
    let k = b.len();
    let m = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), k);
            (0..m).map(|j| (0..k).map(|t| row[t] * b[t][j]).sum()).collect()
        })
        .collect()
}

/// KG with entities `e0..e{n-1}`, relations `r0..r{m-1}` and the given
/// `(head, relation, tail)` triples.
pub fn kg(n: usize, m: usize, triples: &[(usize, usize, usize)]) -> Kg {
    let mut g = Kg::new();
    for i in 0..n {
        g.intern_entity(&format!("e{i}"));
    }
    for r in 0..m {
        g.intern_relation(&format!("r{r}"));
    }
    for &(h, r, t) in triples {
        g.add_triple_uris(&format!("e{h}"), &format!("r{r}"), &format!("e{t}"));
    }
    g
}

/// Random connected-ish graph: a path plus a few random chords.
pub fn random_triples(rng: &mut ChaCha8Rng, n: usize, m: usize, extra: usize) -> Vec<(usize, usize, usize)> {
    let mut t: Vec<_> = (1..n).map(|i| (rng.gen_range(0..i), rng.gen_range(0..m), i)).collect();
    for _ in 0..extra {
        let (h, tl) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if h != tl {
            t.push((h, rng.gen_range(0..m), tl));
        }
    }
    t
}

/// Symmetrized neighbourhoods including self, sorted.
pub fn neighbourhoods(n: usize, triples: &[(usize, usize, usize)]) -> Vec<Vec<usize>> {
    let mut nb: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &(h, _, t) in triples {
        nb[h].push(t);
        nb[t].push(h);
    }
    for v in &mut nb {
        v.sort_unstable();
        v.dedup();
    }
    nb
}

pub fn oracle_norm_adj(nb: &[Vec<usize>]) -> Rows {
    let n = nb.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for &j in &nb[i] {
            a[i][j] = 1.0 / ((nb[i].len() * nb[j].len()) as f64).sqrt();
        }
    }
    a
}

/// Single-head additive attention over each neighbourhood (self included).
pub fn oracle_gat(z: &Rows, nb: &[Vec<usize>], w: &[f64], a: &[f64]) -> (Rows, Vec<Vec<f64>>) {
    let d = w.len();
    let h: Rows = z.iter().map(|r| r.iter().zip(w).map(|(x, y)| x * y).collect()).collect();
    let mut out = Vec::new();
    let mut weights = Vec::new();
    for i in 0..z.len() {
        let logits: Vec<f64> = nb[i]
            .iter()
            .map(|&j| {
                let mut s = 0.0;
                for k in 0..d {
                    s += a[k] * h[i][k] + a[d + k] * h[j][k];
                }
                if s > 0.0 {
                    s
                } else {
                    0.2 * s
                }
            })
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let tot: f64 = ex.iter().sum();
        let alpha: Vec<f64> = ex.iter().map(|e| e / tot).collect();
        let mut o = vec![0.0; d];
        for (&j, &al) in nb[i].iter().zip(&alpha) {
            for k in 0..d {
                o[k] += al * h[j][k];
            }
        }
        out.push(o);
        weights.push(alpha);
    }
    (out, weights)
}

/// Per-entity attention over layers: softmax over m of ⟨q_l, k_m⟩/√d,
/// re-weighted sums averaged over l.
pub fn oracle_cross_layer(layers: &[Rows], wq: &Rows, wk: &Rows) -> Rows {
    let n = layers[0].len();
    let d = layers[0][0].len();
    let big_l = layers.len();
    let q: Vec<Rows> = layers.iter().map(|z| dense_matmul(z, wq)).collect();
    let k: Vec<Rows> = layers.iter().map(|z| dense_matmul(z, wk)).collect();
    let mut out = vec![vec![0.0; d]; n];
    for i in 0..n {
        for l in 0..big_l {
            let s: Vec<f64> = (0..big_l).map(|m| dot(&q[l][i], &k[m][i]) / (d as f64).sqrt()).collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tot: f64 = s.iter().map(|v| (v - mx).exp()).sum();
            for m in 0..big_l {
                let wgt = (s[m] - mx).exp() / tot;
                for c in 0..d {
                    out[i][c] += wgt * layers[m][i][c] / big_l as f64;
                }
            }
        }
    }
    out
}

pub fn oracle_exp0(v: &[f64], c: f64) -> Vec<f64> {
    let s = c.sqrt();
    let r = norm(v);
    let mut y: Vec<f64> = if r == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| (s * r).tanh() * x / (s * r)).collect()
    };
    let max = (1.0 - 1e-5) / s;
    let ry = norm(&y);
    if ry > max {
        y.iter_mut().for_each(|x| *x *= max / ry);
    }
    y
}

pub fn oracle_log0(y: &[f64], c: f64) -> Vec<f64> {
    let s = c.sqrt();
    let r = norm(y);
    if r == 0.0 {
        return y.to_vec();
    }
    y.iter().map(|x| (s * r).atanh() * x / (s * r)).collect()
}

pub fn oracle_hgcn(z0: &Rows, nb: &[Vec<usize>], ws: &[Rows], c: f64) -> Rows {
    let adj = oracle_norm_adj(nb);
    let mut zh: Rows = z0.iter().map(|r| oracle_exp0(r, c)).collect();
    for w in ws {
        let t: Rows = zh.iter().map(|r| oracle_log0(r, c)).collect();
        let lin = dense_matmul(&dense_matmul(&adj, &t), w);
        zh = lin
            .iter()
            .map(|r| oracle_exp0(&r.iter().map(|x| x.max(0.0)).collect::<Vec<_>>(), c))
            .collect();
    }
    zh.iter().map(|r| oracle_log0(r, c)).collect()
}

/// Mean over i of −log softmax_k(⟨â_i, b̂_k⟩/τ)[i], by double loop.
pub fn oracle_contrastive(a: &Rows, b: &Rows, tau: f64) -> f64 {
    let unit = |r: &Vec<f64>| -> Vec<f64> {
        let n = norm(r);
        if n == 0.0 {
            r.clone()
        } else {
            r.iter().map(|x| x / n).collect()
        }
    };
    let a: Rows = a.iter().map(unit).collect();
    let b: Rows = b.iter().map(unit).collect();
    let mut total = 0.0;
    for i in 0..a.len() {
        let mut denom = 0.0;
        for k in 0..b.len() {
            denom += (dot(&a[i], &b[k]) / tau).exp();
        }
        total += -((dot(&a[i], &b[i]) / tau).exp() / denom).ln();
    }
    total / a.len() as f64
}

pub fn oracle_csls(s: &Rows, k: usize) -> Rows {
    let top = |mut v: Vec<f64>| {
        v.sort_by(|x, y| y.partial_cmp(x).unwrap());
        v[..k].iter().sum::<f64>() / k as f64
    };
    let (n, m) = (s.len(), s[0].len());
    let rs: Vec<f64> = s.iter().map(|r| top(r.clone())).collect();
    let rt: Vec<f64> = (0..m).map(|j| top((0..n).map(|i| s[i][j]).collect())).collect();
    (0..n)
        .map(|i| (0..m).map(|j| 2.0 * s[i][j] - rs[i] - rt[j]).collect())
        .collect()
}

pub fn oracle_cosine(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .map(|x| {
            b.iter()
                .map(|y| {
                    let d = norm(x) * norm(y);
                    if d == 0.0 {
                        0.0
                    } else {
                        dot(x, y) / d
                    }
                })
                .collect()
        })
        .collect()
}

/// Small isomorphic pair: `kg2` relabels `kg1` by reversing entity ids.
pub fn toy_pair(n: usize, seed: u64) -> KgPair {
    let mut r = rng(seed);
    let m = 3;
    let t1 = random_triples(&mut r, n, m, n / 3);
    let rev = |i: usize| n - 1 - i;
    let t2: Vec<_> = t1.iter().map(|&(h, rel, t)| (rev(h), rel, rev(t))).collect();
    let links: Vec<_> = (0..n).map(|i| (i, rev(i))).collect();
    let nt = (n / 2).max(1);
    let split = LinkSplit {
        train: links[..nt].to_vec(),
        valid: vec![],
        test: links[nt..].to_vec(),
    };
    KgPair::new(kg(n, m, &t1), kg(n, m, &t2), split).unwrap()
}

fn weighted_sum(tape: &Tape<f64>, x: Var, seed: u64) -> dsea_core::Result<Var> {
    let (r, c) = tape.shape(x)?;
    let w = tensor(&rand_rows(&mut rng(seed), r, c, 1.0));
    let w = tape.constant(w)?;
    tape.sum(tape.mul(x, w)?)
}

/// Gradient checks over every layer and every loss on ≤ 10-entity
/// instances, as `(name, report)`.
pub fn gradient_suite(inject_fault: bool) -> Vec<(&'static str, GradCheckReport)> {
    let opts = GradCheckOptions {
        inject_fault,
        ..GradCheckOptions::default()
    };
    let mut out = Vec::new();
    let mut r = rng(99);
    let n = 7;
    let d = 4;
    let triples = random_triples(&mut r, n, 3, 3);
    let g = build_graph_tensors::<f64>(&kg(n, 3, &triples));
    let c = Curvature::new(1.0).unwrap();
    let z = tensor(&rand_rows(&mut r, n, d, 0.8));
    let w_m = tensor(&rand_rows(&mut r, 1, d, 1.0));
    let attn = tensor(&rand_rows(&mut r, 2 * d, 1, 1.0));

    let gat = grad_check(
        |t, v| {
            let out = gat_layer(t, v[0], &g, &BoundGat { w_m: v[1], attn: v[2] })?;
            weighted_sum(t, out, 1)
        },
        &[z.clone(), w_m.clone(), attn.clone()],
        opts,
    );
    out.push(("gat_layer", gat.unwrap()));

    let l1 = tensor(&rand_rows(&mut r, n, d, 1.0));
    let l2 = tensor(&rand_rows(&mut r, n, d, 1.0));
    let wq = tensor(&rand_rows(&mut r, d, d, 0.7));
    let wk = tensor(&rand_rows(&mut r, d, d, 0.7));
    let cla = grad_check(
        |t, v| weighted_sum(t, cross_layer_attention(t, &[v[0], v[1]], v[2], v[3])?, 2),
        &[l1, l2, wq.clone(), wk.clone()],
        opts,
    );
    out.push(("cross_layer_attention", cla.unwrap()));

    let dims = ModelDims {
        entities: [n, n],
        relations: [3, 3],
        d_e: d,
        d_r: 2,
        layers: 2,
    };
    let params = ModelParams::<f64>::init(dims, 5).unwrap();
    let ptensors: Vec<Tensor<f64>> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    let euc = grad_check(
        |t, v| {
            let b = BoundParams::from_vars(dims, v)?;
            let z0 = b.entity_rows(t, 0)?;
            weighted_sum(t, euclid_encode(t, z0, &g, &b)?, 3)
        },
        &ptensors,
        opts,
    );
    out.push(("euclid_encode", euc.unwrap()));

    let hyp = grad_check(
        |t, v| {
            let b = BoundParams::from_vars(dims, v)?;
            let z0 = b.entity_rows(t, 0)?;
            weighted_sum(t, hyper_encode(t, z0, &g, &b, c)?, 4)
        },
        &ptensors,
        opts,
    );
    out.push(("hyper_encode", hyp.unwrap()));

    let r0 = tensor(&rand_rows(&mut r, 3, 2, 1.0));
    let rel = grad_check(|t, v| weighted_sum(t, relation_encode(t, &g, v[0])?, 5), &[r0], opts);
    out.push(("relation_encode", rel.unwrap()));

    let geo = grad_check(
        |t, v| {
            let y = exp_map0_var(t, v[0], c)?;
            weighted_sum(t, log_map0_var(t, t.scale(y, 0.9)?, c)?, 6)
        },
        &[tensor(&rand_rows(&mut r, 5, 3, 1.5))],
        opts,
    );
    out.push(("exp_map0/log_map0", geo.unwrap()));

    let va = tensor(&rand_rows(&mut r, 6, 5, 1.0));
    let vb = tensor(&rand_rows(&mut r, 6, 5, 1.0));
    let con = grad_check(|t, v| contrastive_loss(t, v[0], v[1], 0.5), &[va, vb], opts);
    out.push(("contrastive_loss", con.unwrap()));

    let pair = toy_pair(8, 3);
    let graphs = PairGraphs::<f64>::new(&pair);
    let pdims = ModelDims::for_pair(&pair, 4, 2, 2);
    let pp = ModelParams::<f64>::init(pdims, 8).unwrap();
    let pt: Vec<Tensor<f64>> = pp.named().into_iter().map(|(_, t)| t.clone()).collect();
    let weights = LossWeights {
        intra_on_both_graphs: true,
        lambda: 2.0,
        ..LossWeights::default()
    };
    let negs = sample_negatives(&pair, 3, 1, 1).unwrap();
    let enc_loss = |which: &'static str| {
        let pair = &pair;
        let graphs = &graphs;
        let negs = &negs;
        move |t: &Tape<f64>, v: &[Var]| -> dsea_core::Result<Var> {
            let b = BoundParams::from_vars(pdims, v)?;
            let enc = encode_pair_vars(t, graphs, &b, c, true)?;
            match which {
                "inter" => inter_loss(t, &enc, 1.0),
                "intra" => intra_loss(t, &enc, &weights),
                "margin" => margin_loss(t, enc.euclid, &pair.train_links, negs, 1.0),
                _ => Ok(total_loss(t, &enc, pair, &weights, 3, 1, 1)?.total),
            }
        }
    };
    for (name, which) in [
        ("inter_loss", "inter"),
        ("intra_loss", "intra"),
        ("margin_loss", "margin"),
        ("total_loss", "total"),
    ] {
        out.push((name, grad_check(enc_loss(which), &pt, opts).unwrap()));
    }
    out
}

/// Desk-scale synthetic pair: n = 200, branching 3, noise 0.05.
pub fn desk_pair(dropout: f64, seed: u64) -> KgPair {
    use dsea_core::kgdata::{generate_synthetic_pair, SyntheticConfig};
    generate_synthetic_pair(&SyntheticConfig::new(200, 3, 0.05, seed).with_dropout(dropout)).unwrap()
}

/// Desk-scale training config; lr chosen by validation MRR on seed 7.
pub fn desk_config(seed: u64) -> dsea_core::trainer::TrainConfig {
    dsea_core::trainer::TrainConfig {
        d_e: 32,
        d_r: 8,
        layers: 2,
        lambda: 10.0,
        epochs: 150,
        lr: 2e-3,
        seed,
        ..Default::default()
    }
}
