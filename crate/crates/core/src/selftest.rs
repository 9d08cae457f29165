//! Built-in numerical self-checks, run by `dsea selftest`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{grad_check, GradCheckOptions, Tensor};
use crate::encoders::{encode_pair_vars, BoundParams, ModelDims, ModelParams, PairGraphs};
use crate::error::Result;
use crate::hypgeom::{exp_map0, log_map0, Curvature};
use crate::inference::{cosine_matrix, csls_rescore, evaluate, AlignmentReport, SimilarityMatrix};
use crate::kgdata::{generate_synthetic_pair, SyntheticConfig};
use crate::losses::{total_loss, LossWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {} ({})", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelfTestOptions {
    /// Perturbs one analytic gradient so the gradient suite must fail.
    pub inject_fault: bool,
}

/// Runs every suite in a fixed order: gradient-check, geometry, csls,
/// metrics. Internal errors count as failures.
pub fn run_selftest(opts: SelfTestOptions) -> Vec<SuiteResult> {
    let suites: [(&'static str, fn(SelfTestOptions) -> Result<(bool, String)>); 4] = [
        ("gradient-check", gradient_suite),
        ("geometry", geometry_suite),
        ("csls", csls_suite),
        ("metrics", metrics_suite),
    ];
    suites
        .iter()
        .map(|&(name, run)| match run(opts) {
            Ok((passed, detail)) => SuiteResult { name, passed, detail },
            Err(e) => SuiteResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

fn gradient_suite(opts: SelfTestOptions) -> Result<(bool, String)> {
    let pair = generate_synthetic_pair(&SyntheticConfig::new(12, 2, 0.1, 5))?;
    let graphs = PairGraphs::<f64>::new(&pair);
    let dims = ModelDims::for_pair(&pair, 4, 2, 2);
    let params = ModelParams::<f64>::init(dims, 11)?;
    let tensors: Vec<Tensor<f64>> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    let weights = LossWeights {
        lambda: 0.5,
        intra_on_both_graphs: true,
        ..LossWeights::default()
    };
    let c = Curvature::new(1.0)?;
    let report = grad_check(
        |tape, vars| {
            let bound = BoundParams::from_vars(dims, vars)?;
            let enc = encode_pair_vars(tape, &graphs, &bound, c, true)?;
            Ok(total_loss(tape, &enc, &pair, &weights, 3, 1, 1)?.total)
        },
        &tensors,
        GradCheckOptions {
            inject_fault: opts.inject_fault,
            ..GradCheckOptions::default()
        },
    )?;
    Ok((
        report.passed(),
        format!("max relative error {:.3e}, tolerance {:.0e}", report.max_error(), report.tolerance),
    ))
}

fn geometry_suite(_: SelfTestOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for &c in &[0.5, 1.0, 2.0] {
        let c = Curvature::new(c)?;
        let vals: Vec<f64> = (0..1000 * 8).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x = Tensor::from_vec(1000, 8, vals)?;
        let back = log_map0(&exp_map0(&x, c), c)?;
        worst = worst.max(back.max_abs_diff(&x));
    }
    Ok((worst < 1e-6, format!("max round-trip error {worst:.3e}")))
}

fn csls_suite(_: SelfTestOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (n, m, d, k) = (9, 7, 5, 3);
    let src = Tensor::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let tgt = Tensor::from_vec(m, d, (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let sim = cosine_matrix(&src, (0..n).collect(), &tgt, (0..m).collect())?;
    let fast = csls_rescore(&sim, k)?;
    let naive = naive_csls(&sim, k);
    let err = fast.scores.max_abs_diff(&naive);
    Ok((err < 1e-12, format!("max deviation from brute force {err:.3e}")))
}

fn naive_csls(sim: &SimilarityMatrix<f64>, k: usize) -> Tensor<f64> {
    let s = &sim.scores;
    let top = |mut v: Vec<f64>| {
        v.sort_by(|a, b| b.total_cmp(a));
        v.iter().take(k).sum::<f64>() / k as f64
    };
    let mut out = Tensor::zeros(s.rows(), s.cols());
    for i in 0..s.rows() {
        for j in 0..s.cols() {
            let ri = top(s.row(i).to_vec());
            let rj = top((0..s.rows()).map(|r| s.get(r, j)).collect());
            out.set(i, j, 2.0 * s.get(i, j) - ri - rj);
        }
    }
    out
}

fn metrics_suite(_: SelfTestOptions) -> Result<(bool, String)> {
    // Row 0 ranks its target 1st, row 1 ranks it 2nd after losing a tie on id.
    let scores = Tensor::<f64>::from_rows(&[[0.9, 0.1, 0.2], [0.5, 0.4, 0.5]]);
    let sim = SimilarityMatrix::new(scores, vec![0, 1], vec![0, 1, 2])?;
    let r = evaluate(&sim, &[(0, 0), (1, 2)], &[1, 5])?;
    let want = AlignmentReport::from_ranks(vec![1, 2], &[1, 5]);
    let ok = r == want && r.h1() == 0.5 && r.h5() == 1.0 && (r.mrr - 0.75).abs() < 1e-15;
    Ok((ok, format!("ranks {:?}, MRR {:.4}", r.ranks, r.mrr)))
}
