//! Training objectives: InfoNCE-style contrastive terms between and within
//! views, the margin-based alignment hinge with negative sampling, and
//! their weighted sum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Tape, Tensor, Var};
use crate::encoders::EncodedVars;
use crate::error::{Error, Result};
use crate::kgdata::{KgPair, Link};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
    pub tau: f64,
    pub intra_on_both_graphs: bool,
    pub use_inter: bool,
    pub use_intra: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 300.0,
            gamma: 1.0,
            tau: 1.0,
            intra_on_both_graphs: false,
            use_inter: true,
            use_intra: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(self.lambda >= 0.0) || !(self.tau > 0.0) {
            return Err(Error::invalid(format!(
                "need gamma >= 0, lambda >= 0, tau > 0 (got {}, {}, {})",
                self.gamma, self.lambda, self.tau
            )));
        }
        Ok(())
    }
}

/// Mean over rows of `−log softmax_k(⟨â_i, b̂_k⟩/τ)[i]`, with `â`, `b̂` the
/// L2-normalized rows of the two views.
pub fn contrastive_loss<T: Scalar>(tape: &Tape<T>, view_a: Var, view_b: Var, tau: f64) -> Result<Var> {
    let (sa, sb) = (tape.shape(view_a)?, tape.shape(view_b)?);
    if sa != sb {
        return Err(Error::Shape {
            op: "contrastive_loss",
            left: sa,
            right: sb,
        });
    }
    let a = tape.rows_l2_normalize(view_a)?;
    let b = if view_a == view_b { a } else { tape.rows_l2_normalize(view_b)? };
    let rows = tape.info_nce_rows(a, b, T::of(tau))?;
    tape.mean(rows)
}

/// Value-only convenience wrapper around [`contrastive_loss`].
pub fn contrastive_loss_value<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, tau: f64) -> Result<T> {
    let tape = Tape::new();
    let va = tape.constant(a.detached())?;
    let vb = tape.constant(b.detached())?;
    let l = contrastive_loss(&tape, va, vb, tau)?;
    tape.scalar(l)
}

/// Euclidean/hyperbolic agreement, both directions, both graphs.
pub fn inter_loss<T: Scalar>(tape: &Tape<T>, enc: &EncodedVars, tau: f64) -> Result<Var> {
    let hyper = enc
        .hyper
        .ok_or_else(|| Error::invalid("inter loss needs the hyperbolic branch"))?;
    let mut total: Option<Var> = None;
    for kg in 0..2 {
        let eh = contrastive_loss(tape, enc.euclid[kg], hyper[kg], tau)?;
        let he = contrastive_loss(tape, hyper[kg], enc.euclid[kg], tau)?;
        let both = tape.scale(tape.add(eh, he)?, T::of(0.5))?;
        total = Some(match total {
            None => both,
            Some(acc) => tape.add(acc, both)?,
        });
    }
    Ok(total.expect("two graphs"))
}

/// Self-view contrast on the Euclidean embeddings of graph 1 (and graph 2
/// when `intra_on_both_graphs`), pushing distinct entities apart.
pub fn intra_loss<T: Scalar>(tape: &Tape<T>, enc: &EncodedVars, weights: &LossWeights) -> Result<Var> {
    let first = contrastive_loss(tape, enc.euclid[0], enc.euclid[0], weights.tau)?;
    if !weights.intra_on_both_graphs {
        return Ok(first);
    }
    let second = contrastive_loss(tape, enc.euclid[1], enc.euclid[1], weights.tau)?;
    tape.add(first, second)
}

/// Corruptions of each seed pair; entry `j` belongs to positive `j / k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeBatch {
    pub k: usize,
    pub pairs: Vec<Link>,
}

/// Replaces one side of every training link `k` times, uniformly over
/// that side's graph minus the original entity. Deterministic in
/// `(seed, epoch)`.
pub fn sample_negatives(pair: &KgPair, k: usize, seed: u64, epoch: usize) -> Result<NegativeBatch> {
    if pair.train_links.is_empty() {
        return Err(Error::invalid("negative sampling needs training links"));
    }
    let n1 = pair.kg1.num_entities();
    let n2 = pair.kg2.num_entities();
    if n1 < 2 || n2 < 2 {
        return Err(Error::invalid("cannot corrupt a link in a single-entity graph"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut pairs = Vec::with_capacity(pair.train_links.len() * k);
    for &(i, j) in &pair.train_links {
        for _ in 0..k {
            if rng.gen_bool(0.5) {
                let r = rng.gen_range(0..n1 - 1);
                pairs.push((if r >= i { r + 1 } else { r }, j));
            } else {
                let r = rng.gen_range(0..n2 - 1);
                pairs.push((i, if r >= j { r + 1 } else { r }));
            }
        }
    }
    Ok(NegativeBatch { k, pairs })
}

fn pair_distances<T: Scalar>(tape: &Tape<T>, euclid: [Var; 2], links: &[Link]) -> Result<Var> {
    let left: Vec<usize> = links.iter().map(|l| l.0).collect();
    let right: Vec<usize> = links.iter().map(|l| l.1).collect();
    let a = tape.gather_rows(euclid[0], &left)?;
    let b = tape.gather_rows(euclid[1], &right)?;
    tape.row_norms(tape.sub(a, b)?)
}

/// `Σ_pos Σ_neg [d(pos) + γ − d(neg)]₊` with L2 distances.
pub fn margin_loss<T: Scalar>(
    tape: &Tape<T>,
    euclid: [Var; 2],
    positives: &[Link],
    negatives: &NegativeBatch,
    gamma: f64,
) -> Result<Var> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid("margin must be nonnegative"));
    }
    if negatives.pairs.len() != positives.len() * negatives.k {
        return Err(Error::invalid(format!(
            "{} negatives do not match {} positives x {}",
            negatives.pairs.len(),
            positives.len(),
            negatives.k
        )));
    }
    if positives.is_empty() || negatives.k == 0 {
        return tape.constant(Tensor::zeros(1, 1));
    }
    let pos = pair_distances(tape, euclid, positives)?;
    let neg = pair_distances(tape, euclid, &negatives.pairs)?;
    let owner: Vec<usize> = (0..negatives.pairs.len()).map(|j| j / negatives.k).collect();
    let pos = tape.gather_rows(pos, &owner)?;
    let slack = tape.add_scalar(tape.sub(pos, neg)?, T::of(gamma))?;
    tape.sum(tape.relu(slack)?)
}

/// `ea + λ·(inter + intra)` on plain numbers; disabled terms pass as `None`.
pub fn combine_losses(ea: f64, inter: Option<f64>, intra: Option<f64>, lambda: f64) -> f64 {
    ea + lambda * (inter.unwrap_or(0.0) + intra.unwrap_or(0.0))
}

/// Recorded total objective plus the value of each term.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown<T> {
    pub total: Var,
    pub ea: T,
    pub inter: Option<T>,
    pub intra: Option<T>,
}

impl<T: Scalar> LossBreakdown<T> {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        if !self.ea.is_finite() {
            return Some("margin");
        }
        if self.inter.is_some_and(|v| !v.is_finite()) {
            return Some("inter");
        }
        if self.intra.is_some_and(|v| !v.is_finite()) {
            return Some("intra");
        }
        None
    }
}

/// Weighted objective over a precomputed negative batch. Disabled terms
/// are never recorded, so they contribute no gradient.
pub fn total_loss_with<T: Scalar>(
    tape: &Tape<T>,
    enc: &EncodedVars,
    pair: &KgPair,
    negatives: &NegativeBatch,
    weights: &LossWeights,
) -> Result<LossBreakdown<T>> {
    weights.validate()?;
    let ea = margin_loss(tape, enc.euclid, &pair.train_links, negatives, weights.gamma)?;
    let mut total = ea;
    let lambda = T::of(weights.lambda);
    let mut term = |on: bool, f: &dyn Fn() -> Result<Var>| -> Result<Option<T>> {
        if !on {
            return Ok(None);
        }
        let v = f()?;
        total = tape.add(total, tape.scale(v, lambda)?)?;
        Ok(Some(tape.scalar(v)?))
    };
    let inter = term(weights.use_inter, &|| inter_loss(tape, enc, weights.tau))?;
    let intra = term(weights.use_intra, &|| intra_loss(tape, enc, weights))?;
    Ok(LossBreakdown {
        total,
        ea: tape.scalar(ea)?,
        inter,
        intra,
    })
}

/// Samples this epoch's negatives and assembles the weighted objective.
pub fn total_loss<T: Scalar>(
    tape: &Tape<T>,
    enc: &EncodedVars,
    pair: &KgPair,
    weights: &LossWeights,
    k: usize,
    seed: u64,
    epoch: usize,
) -> Result<LossBreakdown<T>> {
    let negatives = sample_negatives(pair, k, seed, epoch)?;
    total_loss_with(tape, enc, pair, &negatives, weights)
}
