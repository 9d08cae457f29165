//! Alignment prediction and evaluation: cosine similarity, CSLS
//! rescoring, rank metrics, and embedding export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diffcore::{row_norm, Tensor};
use crate::error::{Error, Result};
use crate::kgdata::{Kg, Link};
use crate::scalar::Scalar;

/// Scores of source rows against candidate columns, with the entity ids
/// each row/column stands for.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T> {
    pub scores: Tensor<T>,
    pub row_ids: Vec<usize>,
    pub col_ids: Vec<usize>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn new(scores: Tensor<T>, row_ids: Vec<usize>, col_ids: Vec<usize>) -> Result<Self> {
        if scores.rows() != row_ids.len() || scores.cols() != col_ids.len() {
            return Err(Error::Shape {
                op: "similarity ids",
                left: scores.shape(),
                right: (row_ids.len(), col_ids.len()),
            });
        }
        Ok(Self {
            scores,
            row_ids,
            col_ids,
        })
    }
}

/// Cosine similarity between every source and target row. Zero-norm rows
/// score 0 against everything.
pub fn cosine_matrix<T: Scalar>(
    src: &Tensor<T>,
    src_ids: Vec<usize>,
    tgt: &Tensor<T>,
    tgt_ids: Vec<usize>,
) -> Result<SimilarityMatrix<T>> {
    if src.cols() != tgt.cols() {
        return Err(Error::Shape {
            op: "cosine_matrix",
            left: src.shape(),
            right: tgt.shape(),
        });
    }
    let inv = |t: &Tensor<T>| -> (Vec<T>, usize) {
        let mut zeros = 0;
        let v = (0..t.rows())
            .map(|r| {
                let n = row_norm(t.row(r));
                if n > T::zero() {
                    T::one() / n
                } else {
                    zeros += 1;
                    T::zero()
                }
            })
            .collect();
        (v, zeros)
    };
    let (si, sz) = inv(src);
    let (ti, tz) = inv(tgt);
    if sz + tz > 0 {
        log::warn!("cosine_matrix: {sz} source and {tz} target rows have zero norm");
    }
    let mut out = Tensor::zeros(src.rows(), tgt.rows());
    for i in 0..src.rows() {
        let a = src.row(i);
        for j in 0..tgt.rows() {
            let dot: T = a.iter().zip(tgt.row(j)).map(|(&x, &y)| x * y).sum();
            out.set(i, j, (dot * si[i] * ti[j]).max(-T::one()).min(T::one()));
        }
    }
    SimilarityMatrix::new(out, src_ids, tgt_ids)
}

fn top_k_mean<T: Scalar>(mut xs: Vec<T>, k: usize) -> T {
    xs.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    xs[..k].iter().copied().sum::<T>() / T::of_usize(k)
}

/// `2·sim(i,j) − r_src(i) − r_tgt(j)` with `r` the mean of the `k` largest
/// entries of the row/column.
pub fn csls_rescore<T: Scalar>(sim: &SimilarityMatrix<T>, k: usize) -> Result<SimilarityMatrix<T>> {
    let (n, m) = sim.scores.shape();
    if k == 0 || k > n.min(m) {
        return Err(Error::invalid(format!(
            "CSLS k must be in 1..={} , got {k}",
            n.min(m)
        )));
    }
    let s = &sim.scores;
    let r_src: Vec<T> = (0..n).map(|i| top_k_mean(s.row(i).to_vec(), k)).collect();
    let r_tgt: Vec<T> = (0..m)
        .map(|j| top_k_mean((0..n).map(|i| s.get(i, j)).collect(), k))
        .collect();
    let two = T::of(2.0);
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            out.set(i, j, two * s.get(i, j) - r_src[i] - r_tgt[j]);
        }
    }
    SimilarityMatrix::new(out, sim.row_ids.clone(), sim.col_ids.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    /// `(k, H@k)` in the order requested.
    pub hits: Vec<(usize, f64)>,
    pub mrr: f64,
    /// 1-based rank of the true counterpart, per query.
    pub ranks: Vec<usize>,
    /// `(key, value)` pairs echoed from the producing configuration.
    pub config: Vec<(String, String)>,
}

impl AlignmentReport {
    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|(kk, _)| *kk == k).map(|&(_, v)| v)
    }

    pub fn h1(&self) -> f64 {
        self.hits_at(1).unwrap_or(0.0)
    }

    pub fn h5(&self) -> f64 {
        self.hits_at(5).unwrap_or(0.0)
    }

    /// Builds a report from 1-based ranks.
    pub fn from_ranks(ranks: Vec<usize>, ks: &[usize]) -> Self {
        let q = ranks.len().max(1) as f64;
        let hits = ks
            .iter()
            .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / q))
            .collect();
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / q;
        Self {
            hits,
            mrr,
            ranks,
            config: Vec::new(),
        }
    }

    /// Arithmetic mean of each metric across reports (ranks concatenated).
    pub fn average(reports: &[AlignmentReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::invalid("cannot average zero reports"))?;
        let f = reports.len() as f64;
        let hits = first
            .hits
            .iter()
            .map(|&(k, _)| {
                let s: f64 = reports.iter().map(|r| r.hits_at(k).unwrap_or(0.0)).sum();
                (k, s / f)
            })
            .collect();
        let mrr = reports.iter().map(|r| r.mrr).sum::<f64>() / f;
        Ok(Self {
            hits,
            mrr,
            ranks: reports.iter().flat_map(|r| r.ranks.iter().copied()).collect(),
            config: first.config.clone(),
        })
    }

    /// One `metric<TAB>value` line per metric.
    pub fn metric_lines(&self) -> String {
        let mut s = String::new();
        for &(k, v) in &self.hits {
            let _ = writeln!(s, "H@{k}\t{v:.6}");
        }
        let _ = writeln!(s, "MRR\t{:.6}", self.mrr);
        let _ = writeln!(s, "queries\t{}", self.ranks.len());
        s
    }

    pub fn table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for &(k, v) in &self.hits {
            let _ = write!(head, "| {:>7} ", format!("H@{k}"));
            let _ = write!(row, "| {v:>7.3} ");
        }
        let _ = write!(head, "| {:>7} |", "MRR");
        let _ = write!(row, "| {:>7.3} |", self.mrr);
        let rule = "-".repeat(head.len());
        let mut s = String::new();
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "{rule}\n{head}\n{rule}\n{row}\n{rule}");
        s
    }
}

/// Ranks each truth target within its source row: descending score, ties
/// broken by ascending target id.
pub fn evaluate<T: Scalar>(sim: &SimilarityMatrix<T>, truth: &[Link], ks: &[usize]) -> Result<AlignmentReport> {
    let row_of: std::collections::HashMap<usize, usize> =
        sim.row_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let col_of: std::collections::HashMap<usize, usize> =
        sim.col_ids.iter().enumerate().map(|(j, &id)| (id, j)).collect();
    let mut ranks = Vec::with_capacity(truth.len());
    for &(src, tgt) in truth {
        let i = *row_of
            .get(&src)
            .ok_or_else(|| Error::invalid(format!("source entity {src} has no row")))?;
        let j = *col_of
            .get(&tgt)
            .ok_or_else(|| Error::invalid(format!("target entity {tgt} has no column")))?;
        let row = sim.scores.row(i);
        let s = row[j];
        let ahead = row
            .iter()
            .zip(&sim.col_ids)
            .filter(|&(&v, &id)| v > s || (v == s && id < tgt))
            .count();
        ranks.push(ahead + 1);
    }
    Ok(AlignmentReport::from_ranks(ranks, ks))
}

/// Writes `<kg index>\t<uri>\t<v1,v2,...>` per entity, graph 1 then 2,
/// with 17 significant digits.
pub fn export_embeddings<T: Scalar>(euclid: &[Tensor<T>; 2], kgs: [&Kg; 2], path: &Path) -> Result<()> {
    let mut s = String::new();
    for (k, (emb, kg)) in euclid.iter().zip(kgs).enumerate() {
        if emb.rows() != kg.num_entities() {
            return Err(Error::Shape {
                op: "export_embeddings",
                left: emb.shape(),
                right: (kg.num_entities(), emb.cols()),
            });
        }
        for r in 0..emb.rows() {
            let _ = write!(s, "{}\t{}\t", k + 1, kg.entity_uri(r).expect("valid id"));
            for (c, v) in emb.row(r).iter().enumerate() {
                if c > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{:.16e}", v.to_f64_lossy());
            }
            s.push('\n');
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`export_embeddings`].
pub fn read_embeddings(path: &Path) -> Result<Vec<(usize, String, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let err = |m: &str| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: m.to_owned(),
            };
            let mut f = line.split('\t');
            let kg = f
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err("bad graph index"))?;
            let uri = f.next().ok_or_else(|| err("missing uri"))?.to_owned();
            let vals = f
                .next()
                .ok_or_else(|| err("missing values"))?
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|_| err("bad number")))
                .collect::<Result<Vec<_>>>()?;
            Ok((kg, uri, vals))
        })
        .collect()
}
