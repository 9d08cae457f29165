//! Full-batch training, checkpointing, and the multi-fold / λ-grid drivers.

mod checkpoint;
mod config;

use std::fmt;
use std::fmt::Write as _;
use std::time::Instant;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;

use crate::diffcore::{AdamConfig, AdamState, Tape, Tensor};
use crate::encoders::{encode_euclid, encode_pair_vars, ModelDims, ModelParams, PairGraphs};
use crate::error::{Error, Result};
use crate::hypgeom::Curvature;
use crate::inference::{cosine_matrix, csls_rescore, evaluate, AlignmentReport};
use crate::kgdata::{KgPair, Link};
use crate::losses::total_loss;
use crate::scalar::Scalar;

/// Cutoffs reported by every evaluation.
pub const HITS_AT: [usize; 2] = [1, 5];

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub ea: f64,
    pub inter: Option<f64>,
    pub intra: Option<f64>,
    pub val_mrr: Option<f64>,
    pub secs: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {} loss {:.6}", self.epoch, self.loss)?;
        if let Some(m) = self.val_mrr {
            write!(f, " val_mrr {m:.6}")?;
        }
        write!(f, " secs {:.3}", self.secs)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the best validation MRR seen.
    pub best: Checkpoint<T>,
    /// Parameters after the last epoch.
    pub last: ModelParams<T>,
    pub trace: Vec<EpochLog>,
    pub parameter_count: usize,
}

/// Where ranking candidates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Candidates {
    /// Targets of the links being evaluated.
    LinkTargets,
    /// Every entity of graph 2.
    AllTargets,
}

impl Candidates {
    pub fn from_flag(full: bool) -> Self {
        if full {
            Self::AllTargets
        } else {
            Self::LinkTargets
        }
    }
}

/// Ranks every link's target among the candidates using cosine similarity
/// over the given embeddings, optionally CSLS-rescored. A CSLS `k` larger
/// than the matrix is clamped to fit.
pub fn rank_links<T: Scalar>(
    emb: &[Tensor<T>; 2],
    links: &[Link],
    candidates: Candidates,
    csls_k: Option<usize>,
) -> Result<AlignmentReport> {
    if links.is_empty() {
        return Err(Error::invalid("no links to evaluate"));
    }
    let src_ids: Vec<usize> = links.iter().map(|l| l.0).collect();
    let tgt_ids: Vec<usize> = match candidates {
        Candidates::LinkTargets => links.iter().map(|l| l.1).collect(),
        Candidates::AllTargets => (0..emb[1].rows()).collect(),
    };
    let src = emb[0].select_rows(&src_ids)?;
    let tgt = emb[1].select_rows(&tgt_ids)?;
    let mut sim = cosine_matrix(&src, src_ids, &tgt, tgt_ids)?;
    if let Some(k) = csls_k {
        let k = k.min(sim.scores.rows()).min(sim.scores.cols());
        sim = csls_rescore(&sim, k)?;
    }
    evaluate(&sim, links, &HITS_AT)
}

/// Test-split evaluation of trained parameters, CSLS on unless `csls_k` is
/// `None`. The report echoes the configuration.
pub fn evaluate_params<T: Scalar>(
    pair: &KgPair,
    params: &ModelParams<T>,
    cfg: &TrainConfig,
    csls_k: Option<usize>,
) -> Result<AlignmentReport> {
    let graphs = PairGraphs::new(pair);
    let emb = encode_euclid(&graphs, params)?;
    let mut report = rank_links(&emb, &pair.test_links, Candidates::from_flag(cfg.full_candidates), csls_k)?;
    report.config = cfg.entries().into_iter().map(|(k, v)| (k.to_owned(), v)).collect();
    report
        .config
        .push(("csls".to_owned(), csls_k.map_or("off".to_owned(), |k| k.to_string())));
    Ok(report)
}

fn validation_mrr<T: Scalar>(
    graphs: &PairGraphs<T>,
    params: &ModelParams<T>,
    pair: &KgPair,
    cfg: &TrainConfig,
) -> Result<Option<f64>> {
    if pair.valid_links.is_empty() {
        return Ok(None);
    }
    let emb = encode_euclid(graphs, params)?;
    let r = rank_links(&emb, &pair.valid_links, Candidates::from_flag(cfg.full_candidates), None)?;
    Ok(Some(r.mrr))
}

/// Copy of the parameters without gradient buffers, as stored in checkpoints.
fn snapshot<T: Scalar>(params: &ModelParams<T>) -> ModelParams<T> {
    let mut p = params.clone();
    for (_, t) in p.named_mut() {
        t.clear_grad();
    }
    p
}

fn non_finite_at(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { op, .. } => Error::NonFiniteLoss { epoch, term: op },
        other => other,
    }
}

/// Trains on `pair.train_links`, logging each epoch through `log::info!`.
pub fn train<T: Scalar>(pair: &KgPair, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(pair, cfg, &mut |e| log::info!("{e}"))
}

/// Trains and hands every epoch's log line to `on_epoch`.
pub fn train_with<T: Scalar>(
    pair: &KgPair,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    pair.validate()?;
    if pair.train_links.is_empty() {
        return Err(Error::invalid("training needs at least one seed link"));
    }
    let weights = cfg.weights();
    let c = Curvature::new(T::of(cfg.curvature))?;
    let graphs = PairGraphs::<T>::new(pair);
    let dims = ModelDims::for_pair(pair, cfg.d_e, cfg.d_r, cfg.layers);
    let mut params = ModelParams::<T>::init(dims, cfg.seed)?;
    let parameter_count = params.parameter_count();
    log::info!("trainable parameters: {parameter_count}");
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });

    let val0 = validation_mrr(&graphs, &params, pair, cfg)?;
    let mut best = Checkpoint {
        params: snapshot(&params),
        config: cfg.clone(),
        epoch: 0,
        val_mrr: val0.unwrap_or(f64::NEG_INFINITY),
    };
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let tape = Tape::new();
        let bound = params.bind(&tape, true)?;
        let lb = encode_pair_vars(&tape, &graphs, &bound, c, cfg.use_inter)
            .and_then(|enc| total_loss(&tape, &enc, pair, &weights, cfg.negatives, cfg.seed, epoch))
            .map_err(non_finite_at(epoch))?;
        if let Some(term) = lb.non_finite_term() {
            return Err(Error::NonFiniteLoss { epoch, term });
        }
        let loss = tape.scalar(lb.total)?.to_f64_lossy();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, term: "total" });
        }
        tape.backward(lb.total).map_err(non_finite_at(epoch))?;
        params.accumulate_grads(&tape, &bound)?;
        drop(tape);
        adam.step(params.named_mut())?;

        let val_mrr = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            validation_mrr(&graphs, &params, pair, cfg)?
        } else {
            None
        };
        let no_validation = pair.valid_links.is_empty() && epoch == cfg.epochs;
        if val_mrr.is_some_and(|m| m > best.val_mrr) || no_validation {
            best = Checkpoint {
                params: snapshot(&params),
                config: cfg.clone(),
                epoch,
                val_mrr: val_mrr.unwrap_or(f64::NEG_INFINITY),
            };
        }
        let entry = EpochLog {
            epoch,
            loss,
            ea: lb.ea.to_f64_lossy(),
            inter: lb.inter.map(Scalar::to_f64_lossy),
            intra: lb.intra.map(Scalar::to_f64_lossy),
            val_mrr,
            secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        trace.push(entry);
    }
    Ok(TrainOutcome {
        best,
        last: snapshot(&params),
        trace,
        parameter_count,
    })
}

/// Trains on `pair` and evaluates the best checkpoint on its test links
/// with CSLS.
pub fn train_and_evaluate<T: Scalar>(pair: &KgPair, cfg: &TrainConfig) -> Result<(TrainOutcome<T>, AlignmentReport)> {
    let outcome = train::<T>(pair, cfg)?;
    let report = evaluate_params(pair, &outcome.best.params, cfg, Some(cfg.csls_k))?;
    Ok((outcome, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldsReport {
    pub per_fold: Vec<(usize, AlignmentReport)>,
    pub mean: AlignmentReport,
}

impl FoldsReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (fold, r) in &self.per_fold {
            let _ = writeln!(s, "fold {fold}");
            s.push_str(&r.metric_lines());
        }
        let _ = writeln!(s, "mean");
        s.push_str(&self.mean.metric_lines());
        s
    }
}

/// Runs train + test on each fold produced by `load` and averages.
pub fn run_folds_with<T: Scalar>(
    load: &dyn Fn(usize) -> Result<KgPair>,
    cfg: &TrainConfig,
    folds: &[usize],
) -> Result<FoldsReport> {
    let mut per_fold = Vec::with_capacity(folds.len());
    for &fold in folds {
        let pair = load(fold)?;
        let (_, report) = train_and_evaluate::<T>(&pair, cfg)?;
        log::info!("fold {fold}: H@1 {:.4} MRR {:.4}", report.h1(), report.mrr);
        per_fold.push((fold, report));
    }
    let reports: Vec<AlignmentReport> = per_fold.iter().map(|(_, r)| r.clone()).collect();
    let mean = AlignmentReport::average(&reports)?;
    Ok(FoldsReport { per_fold, mean })
}

pub fn run_folds<T: Scalar>(dir: &std::path::Path, cfg: &TrainConfig, folds: &[usize]) -> Result<FoldsReport> {
    run_folds_with::<T>(&|f| crate::kgdata::load_openea(dir, f), cfg, folds)
}

/// Test metrics for each λ, rows in the order given.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    pub rows: Vec<(f64, AlignmentReport)>,
}

impl LambdaGrid {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {:>10} | {:>7} | {:>7} | {:>7} |", "lambda", "H@1", "H@5", "MRR");
        let _ = writeln!(s, "|{}|{}|{}|{}|", "-".repeat(12), "-".repeat(9), "-".repeat(9), "-".repeat(9));
        for (lambda, r) in &self.rows {
            let _ = writeln!(
                s,
                "| {:>10} | {:>7.3} | {:>7.3} | {:>7.3} |",
                lambda,
                r.h1(),
                r.h5(),
                r.mrr
            );
        }
        s
    }
}

pub fn grid_lambda<T: Scalar>(pair: &KgPair, cfg: &TrainConfig, lambdas: &[f64]) -> Result<LambdaGrid> {
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let c = TrainConfig {
            lambda,
            ..cfg.clone()
        };
        let (_, report) = train_and_evaluate::<T>(pair, &c)?;
        rows.push((lambda, report));
    }
    Ok(LambdaGrid { rows })
}
