//! Forward-pass blocks: the Euclidean GAT stack with cross-layer
//! attention, the tangent-space hyperbolic GCN, the bidirectional relation
//! encoder, and the fusion that concatenates entity and relation features.
//!
//! Both graphs of a pair run through the same layer weights. Entity rows
//! of `z0` and relation rows of `r0` are laid out graph 1 first, then
//! graph 2.

use crate::diffcore::{xavier_init, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hypgeom::{exp_map0_var, log_map0_var, Curvature};
use crate::kgdata::{build_graph_tensors, GraphTensors, KgPair};
use crate::scalar::Scalar;

/// LeakyReLU slope inside GAT attention logits.
pub const GAT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub entities: [usize; 2],
    pub relations: [usize; 2],
    pub d_e: usize,
    pub d_r: usize,
    pub layers: usize,
}

impl ModelDims {
    pub fn for_pair(pair: &KgPair, d_e: usize, d_r: usize, layers: usize) -> Self {
        Self {
            entities: [pair.kg1.num_entities(), pair.kg2.num_entities()],
            relations: [pair.kg1.num_relations(), pair.kg2.num_relations()],
            d_e,
            d_r,
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_e == 0 || self.d_r == 0 || self.layers == 0 {
            return Err(Error::invalid("d_e, d_r and layers must be positive"));
        }
        if self.entities.iter().any(|&n| n == 0) {
            return Err(Error::invalid("both graphs need at least one entity"));
        }
        Ok(())
    }

    /// Trainable scalar count implied by the shapes.
    pub fn parameter_count(&self) -> usize {
        let n: usize = self.entities.iter().sum();
        let m: usize = self.relations.iter().sum::<usize>().max(1);
        let d = self.d_e;
        n * d + m * self.d_r + self.layers * (d + 2 * d) + 2 * d * d + self.layers * d * d
    }

    pub fn entity_offset(&self, kg: usize) -> usize {
        if kg == 0 {
            0
        } else {
            self.entities[0]
        }
    }

    pub fn relation_offset(&self, kg: usize) -> usize {
        if kg == 0 {
            0
        } else {
            self.relations[0]
        }
    }

    pub fn output_width(&self) -> usize {
        self.d_e + 2 * self.d_r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams<T> {
    /// Diagonal of `W_m`, stored 1×d_e.
    pub w_m: Tensor<T>,
    /// Attention vector `a`, stored 2·d_e×1.
    pub attn: Tensor<T>,
}

/// All trainable matrices of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub dims: ModelDims,
    pub z0: Tensor<T>,
    pub r0: Tensor<T>,
    pub gat: Vec<GatLayerParams<T>>,
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub hgcn: Vec<Tensor<T>>,
}

fn sub_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

impl<T: Scalar> ModelParams<T> {
    /// Xavier-uniform initialization of every tensor.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let n: usize = dims.entities.iter().sum();
        let m: usize = dims.relations.iter().sum::<usize>().max(1);
        let d = dims.d_e;
        let mut k = 0u64;
        let mut next = |rows, cols| {
            k += 1;
            xavier_init::<T>(rows, cols, sub_seed(seed, k))
        };
        let z0 = next(n, d)?;
        let r0 = next(m, dims.d_r)?;
        let mut gat = Vec::with_capacity(dims.layers);
        for _ in 0..dims.layers {
            gat.push(GatLayerParams {
                w_m: next(1, d)?,
                attn: next(2 * d, 1)?,
            });
        }
        let w_q = next(d, d)?;
        let w_k = next(d, d)?;
        let hgcn = (0..dims.layers).map(|_| next(d, d)).collect::<Result<_>>()?;
        Ok(Self {
            dims,
            z0,
            r0,
            gat,
            w_q,
            w_k,
            hgcn,
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = vec![("z0".to_owned(), &self.z0), ("r0".to_owned(), &self.r0)];
        for (l, g) in self.gat.iter().enumerate() {
            v.push((format!("gat.{l}.w_m"), &g.w_m));
            v.push((format!("gat.{l}.attn"), &g.attn));
        }
        v.push(("w_q".to_owned(), &self.w_q));
        v.push(("w_k".to_owned(), &self.w_k));
        for (l, w) in self.hgcn.iter().enumerate() {
            v.push((format!("hgcn.{l}.w"), w));
        }
        v
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = vec![("z0".to_owned(), &mut self.z0), ("r0".to_owned(), &mut self.r0)];
        for (l, g) in self.gat.iter_mut().enumerate() {
            v.push((format!("gat.{l}.w_m"), &mut g.w_m));
            v.push((format!("gat.{l}.attn"), &mut g.attn));
        }
        v.push(("w_q".to_owned(), &mut self.w_q));
        v.push(("w_k".to_owned(), &mut self.w_k));
        for (l, w) in self.hgcn.iter_mut().enumerate() {
            v.push((format!("hgcn.{l}.w"), w));
        }
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every tensor on `tape`; trainable iff `trainable`.
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> Result<BoundParams> {
        let put = |t: &Tensor<T>| {
            if trainable {
                tape.param(t.detached())
            } else {
                tape.constant(t.detached())
            }
        };
        Ok(BoundParams {
            dims: self.dims,
            z0: put(&self.z0)?,
            r0: put(&self.r0)?,
            gat: self
                .gat
                .iter()
                .map(|g| Ok(BoundGat { w_m: put(&g.w_m)?, attn: put(&g.attn)? }))
                .collect::<Result<_>>()?,
            w_q: put(&self.w_q)?,
            w_k: put(&self.w_k)?,
            hgcn: self.hgcn.iter().map(put).collect::<Result<_>>()?,
        })
    }

    /// Adds the tape gradients of `bound` into each tensor's gradient slot.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &BoundParams) -> Result<()> {
        let vars = bound.vars();
        for ((_, t), v) in self.named_mut().into_iter().zip(vars) {
            match tape.grad(v)? {
                Some(g) => t.accumulate_grad(g.values())?,
                None => t.accumulate_grad(&vec![T::zero(); t.len()])?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGat {
    pub w_m: Var,
    pub attn: Var,
}

/// Tape handles for every parameter, in [`ModelParams::named`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub dims: ModelDims,
    pub z0: Var,
    pub r0: Var,
    pub gat: Vec<BoundGat>,
    pub w_q: Var,
    pub w_k: Var,
    pub hgcn: Vec<Var>,
}

impl BoundParams {
    /// Inverse of [`BoundParams::vars`].
    pub fn from_vars(dims: ModelDims, vars: &[Var]) -> Result<Self> {
        let want = 4 + 3 * dims.layers;
        if vars.len() != want {
            return Err(Error::invalid(format!("expected {want} parameter handles, got {}", vars.len())));
        }
        let l = dims.layers;
        Ok(Self {
            dims,
            z0: vars[0],
            r0: vars[1],
            gat: (0..l)
                .map(|i| BoundGat {
                    w_m: vars[2 + 2 * i],
                    attn: vars[3 + 2 * i],
                })
                .collect(),
            w_q: vars[2 + 2 * l],
            w_k: vars[3 + 2 * l],
            hgcn: vars[4 + 2 * l..].to_vec(),
        })
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.z0, self.r0];
        for g in &self.gat {
            v.push(g.w_m);
            v.push(g.attn);
        }
        v.push(self.w_q);
        v.push(self.w_k);
        v.extend(&self.hgcn);
        v
    }

    pub fn entity_rows<T: Scalar>(&self, tape: &Tape<T>, kg: usize) -> Result<Var> {
        tape.slice_rows(self.z0, self.dims.entity_offset(kg), self.dims.entities[kg])
    }

    pub fn relation_rows<T: Scalar>(&self, tape: &Tape<T>, kg: usize) -> Result<Var> {
        tape.slice_rows(self.r0, self.dims.relation_offset(kg), self.dims.relations[kg])
    }
}

/// Graph matrices for both sides of a pair.
#[derive(Debug, Clone)]
pub struct PairGraphs<T> {
    pub graphs: [GraphTensors<T>; 2],
}

impl<T: Scalar> PairGraphs<T> {
    pub fn new(pair: &KgPair) -> Self {
        Self {
            graphs: [build_graph_tensors(&pair.kg1), build_graph_tensors(&pair.kg2)],
        }
    }
}

/// One attention layer; returns the output and per-edge attention weights
/// (aligned with `g.attn_pattern` entries).
pub fn gat_layer_with_attention<T: Scalar>(
    tape: &Tape<T>,
    z: Var,
    g: &GraphTensors<T>,
    layer: &BoundGat,
) -> Result<(Var, Var)> {
    let (_, d) = tape.shape(z)?;
    let (_, wd) = tape.shape(layer.w_m)?;
    if wd != d || tape.shape(layer.attn)? != (2 * d, 1) {
        return Err(Error::Shape {
            op: "gat_layer",
            left: tape.shape(z)?,
            right: tape.shape(layer.attn)?,
        });
    }
    let h = tape.mul_row_vec(z, layer.w_m)?;
    let a_self = tape.slice_rows(layer.attn, 0, d)?;
    let a_nbr = tape.slice_rows(layer.attn, d, d)?;
    let s_self = tape.matmul(h, a_self)?;
    let s_nbr = tape.matmul(h, a_nbr)?;
    let logits = tape.edge_scores(&g.attn_pattern, s_self, s_nbr)?;
    let logits = tape.leaky_relu(logits, T::of(GAT_NEGATIVE_SLOPE))?;
    let alpha = tape.segment_softmax(&g.attn_pattern, logits)?;
    let out = tape.spmm_values(&g.attn_pattern, alpha, h)?;
    Ok((out, alpha))
}

pub fn gat_layer<T: Scalar>(tape: &Tape<T>, z: Var, g: &GraphTensors<T>, layer: &BoundGat) -> Result<Var> {
    gat_layer_with_attention(tape, z, g, layer).map(|(o, _)| o)
}

/// Per-entity scaled dot-product attention across the stacked layer
/// outputs, averaged over layers.
pub fn cross_layer_attention<T: Scalar>(tape: &Tape<T>, layers: &[Var], w_q: Var, w_k: Var) -> Result<Var> {
    let (_, d) = tape.shape(layers[0])?;
    let inv_sqrt_d = T::one() / T::of_usize(d).sqrt();
    let q = layers.iter().map(|&z| tape.matmul(z, w_q)).collect::<Result<Vec<_>>>()?;
    let k = layers.iter().map(|&z| tape.matmul(z, w_k)).collect::<Result<Vec<_>>>()?;
    let mut total: Option<Var> = None;
    for ql in &q {
        let mut scores: Option<Var> = None;
        for km in &k {
            let s = tape.sum_cols(tape.mul(*ql, *km)?)?;
            scores = Some(match scores {
                None => s,
                Some(acc) => tape.concat_cols(acc, s)?,
            });
        }
        let scores = tape.scale(scores.expect("at least one layer"), inv_sqrt_d)?;
        let weights = tape.softmax_rows(scores)?;
        let mut mixed: Option<Var> = None;
        for (m, &zm) in layers.iter().enumerate() {
            let w = tape.slice_cols(weights, m, 1)?;
            let term = tape.scale_rows(zm, w)?;
            mixed = Some(match mixed {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let mixed = mixed.expect("at least one layer");
        total = Some(match total {
            None => mixed,
            Some(acc) => tape.add(acc, mixed)?,
        });
    }
    tape.scale(total.expect("at least one layer"), T::one() / T::of_usize(layers.len()))
}

/// Euclidean branch: GAT stack, then cross-layer attention.
pub fn euclid_encode<T: Scalar>(tape: &Tape<T>, z0: Var, g: &GraphTensors<T>, p: &BoundParams) -> Result<Var> {
    if p.gat.is_empty() {
        return Err(Error::invalid("at least one GAT layer is required"));
    }
    let mut outputs = Vec::with_capacity(p.gat.len());
    let mut z = z0;
    for layer in &p.gat {
        z = gat_layer(tape, z, g, layer)?;
        outputs.push(z);
    }
    cross_layer_attention(tape, &outputs, p.w_q, p.w_k)
}

/// Hyperbolic branch: map to the ball, aggregate in the tangent space at
/// the origin layer by layer, and map the last layer back.
pub fn hyper_encode<T: Scalar>(
    tape: &Tape<T>,
    z0: Var,
    g: &GraphTensors<T>,
    p: &BoundParams,
    c: Curvature<T>,
) -> Result<Var> {
    if p.hgcn.is_empty() {
        return Err(Error::invalid("at least one hyperbolic layer is required"));
    }
    let mut zh = exp_map0_var(tape, z0, c)?;
    for &w in &p.hgcn {
        let t = log_map0_var(tape, zh, c)?;
        let agg = tape.spmm(&g.norm_adj, t)?;
        let lin = tape.matmul(agg, w)?;
        let act = tape.relu(lin)?;
        zh = exp_map0_var(tape, act, c)?;
    }
    log_map0_var(tape, zh, c)
}

/// In/out relation context: mean relation embedding over incoming and
/// outgoing triples, concatenated.
pub fn relation_encode<T: Scalar>(tape: &Tape<T>, g: &GraphTensors<T>, r0: Var) -> Result<Var> {
    let inc = tape.spmm(&g.rel_in_mean, r0)?;
    let out = tape.spmm(&g.rel_out_mean, r0)?;
    tape.concat_cols(inc, out)
}

/// Fused outputs of both graphs as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub euclid: [Var; 2],
    /// Absent when the hyperbolic branch was skipped.
    pub hyper: Option<[Var; 2]>,
}

pub fn encode_pair_vars<T: Scalar>(
    tape: &Tape<T>,
    graphs: &PairGraphs<T>,
    p: &BoundParams,
    c: Curvature<T>,
    with_hyper: bool,
) -> Result<EncodedVars> {
    let mut euclid = Vec::with_capacity(2);
    let mut hyper = Vec::with_capacity(2);
    for kg in 0..2 {
        let g = &graphs.graphs[kg];
        if g.num_entities != p.dims.entities[kg] || g.num_relations != p.dims.relations[kg] {
            return Err(Error::invalid(format!(
                "graph {} does not match the model dimensions",
                kg + 1
            )));
        }
        let z0 = p.entity_rows(tape, kg)?;
        let rel = if p.dims.relations[kg] == 0 {
            tape.constant(Tensor::zeros(g.num_entities, 2 * p.dims.d_r))?
        } else {
            relation_encode(tape, g, p.relation_rows(tape, kg)?)?
        };
        let ze = euclid_encode(tape, z0, g, p)?;
        euclid.push(tape.concat_cols(ze, rel)?);
        if with_hyper {
            let zh = hyper_encode(tape, z0, g, p, c)?;
            hyper.push(tape.concat_cols(zh, rel)?);
        }
    }
    Ok(EncodedVars {
        euclid: [euclid[0], euclid[1]],
        hyper: with_hyper.then(|| [hyper[0], hyper[1]]),
    })
}

/// Plain-value fused embeddings of both graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair<T> {
    pub euclid: [Tensor<T>; 2],
    pub hyper: [Tensor<T>; 2],
}

pub fn encode_pair<T: Scalar>(graphs: &PairGraphs<T>, params: &ModelParams<T>, c: Curvature<T>) -> Result<EncodedPair<T>> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false)?;
    let enc = encode_pair_vars(&tape, graphs, &bound, c, true)?;
    let h = enc.hyper.expect("hyperbolic branch requested");
    Ok(EncodedPair {
        euclid: [tape.value(enc.euclid[0])?, tape.value(enc.euclid[1])?],
        hyper: [tape.value(h[0])?, tape.value(h[1])?],
    })
}

/// Euclidean fused embeddings only (what ranking uses).
pub fn encode_euclid<T: Scalar>(graphs: &PairGraphs<T>, params: &ModelParams<T>) -> Result<[Tensor<T>; 2]> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false)?;
    let c = Curvature::new(T::one())?;
    let enc = encode_pair_vars(&tape, graphs, &bound, c, false)?;
    Ok([tape.value(enc.euclid[0])?, tape.value(enc.euclid[1])?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgdata::Kg;

    fn single_node() -> GraphTensors<f64> {
        let mut kg = Kg::new();
        kg.intern_entity("a");
        build_graph_tensors(&kg)
    }

    #[test]
    fn isolated_node_gat_is_linear_map() {
        let g = single_node();
        let tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::from_rows(&[[0.3, -0.2]])).unwrap();
        let layer = BoundGat {
            w_m: tape.constant(Tensor::from_rows(&[[2.0, 0.5]])).unwrap(),
            attn: tape.constant(Tensor::from_rows(&[[0.1], [0.2], [0.3], [0.4]])).unwrap(),
        };
        let (out, alpha) = gat_layer_with_attention(&tape, z, &g, &layer).unwrap();
        assert_eq!(tape.value(alpha).unwrap().values(), &[1.0]);
        let o = tape.value(out).unwrap();
        assert!((o.get(0, 0) - 0.6).abs() < 1e-15 && (o.get(0, 1) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_attention_is_uniform() {
        let mut kg = Kg::new();
        kg.add_triple_uris("a", "r", "b");
        let g = build_graph_tensors::<f64>(&kg);
        let tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::from_rows(&[[0.3, 0.7], [0.3, 0.7]])).unwrap();
        let layer = BoundGat {
            w_m: tape.constant(Tensor::from_rows(&[[1.0, -1.0]])).unwrap(),
            attn: tape.constant(Tensor::from_rows(&[[0.5], [0.1], [-0.3], [0.9]])).unwrap(),
        };
        let (_, alpha) = gat_layer_with_attention(&tape, z, &g, &layer).unwrap();
        for &w in tape.value(alpha).unwrap().values() {
            assert!((w - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_stays_at_origin() {
        let mut kg = Kg::new();
        kg.add_triple_uris("a", "r", "b");
        kg.add_triple_uris("b", "r", "c");
        let g = build_graph_tensors::<f64>(&kg);
        let dims = ModelDims {
            entities: [3, 3],
            relations: [1, 1],
            d_e: 4,
            d_r: 2,
            layers: 2,
        };
        let params = ModelParams::<f64>::init(dims, 1).unwrap();
        let tape = Tape::new();
        let b = params.bind(&tape, false).unwrap();
        let z0 = tape.constant(Tensor::zeros(3, 4)).unwrap();
        let out = hyper_encode(&tape, z0, &g, &b, Curvature::new(1.0).unwrap()).unwrap();
        assert!(tape.value(out).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_matches_shapes() {
        let dims = ModelDims {
            entities: [5, 6],
            relations: [2, 3],
            d_e: 8,
            d_r: 4,
            layers: 2,
        };
        let p = ModelParams::<f64>::init(dims, 3).unwrap();
        assert_eq!(p.parameter_count(), dims.parameter_count());
    }
}
