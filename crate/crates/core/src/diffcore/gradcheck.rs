use crate::error::Result;
use crate::scalar::Scalar;

use super::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error: entries whose gradients
    /// are both below it are compared in absolute terms.
    pub floor: f64,
    /// Adds a fixed offset to one analytic entry; exercised by the
    /// self-test fault-injection path.
    pub inject_fault: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-3,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub index: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tolerance
    }
}

fn evaluate<T, F>(f: &F, params: &[Tensor<T>]) -> Result<(Tape<T>, Vec<Var>, Var)>
where
    T: Scalar,
    F: Fn(&Tape<T>, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p.detached()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&tape, &vars)?;
    Ok((tape, vars, out))
}

/// Compares tape gradients of the scalar computation `f` against central
/// finite differences, entry by entry.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&Tape<T>, &[Var]) -> Result<Var>,
{
    let (tape, vars, out) = evaluate(&f, params)?;
    tape.backward(out)?;
    let mut analytic = Vec::with_capacity(params.len());
    for (v, p) in vars.iter().zip(params) {
        let g = tape
            .grad(*v)?
            .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()));
        analytic.push(g);
    }
    if opts.inject_fault {
        if let Some(g) = analytic.iter_mut().find(|g| !g.is_empty()) {
            g.values_mut()[0] += T::of(1e-2);
        }
    }

    let h = opts.step;
    let mut work: Vec<Tensor<T>> = params.iter().map(|p| p.detached()).collect();
    let mut report = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut worst = 0.0f64;
        for k in 0..params[pi].len() {
            let orig = work[pi].values()[k];
            work[pi].values_mut()[k] = T::of(orig.to_f64_lossy() + h);
            let (t, _, o) = evaluate(&f, &work)?;
            let plus = t.scalar(o)?.to_f64_lossy();
            work[pi].values_mut()[k] = T::of(orig.to_f64_lossy() - h);
            let (t, _, o) = evaluate(&f, &work)?;
            let minus = t.scalar(o)?.to_f64_lossy();
            work[pi].values_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].values()[k].to_f64_lossy();
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
        report.push(ParamError {
            index: pi,
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        params: report,
        tolerance: opts.tolerance,
    })
}
