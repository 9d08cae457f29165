//! Poincaré-ball geometry with curvature `−c`.
//!
//! Only the maps anchored at the origin are needed: tangent vectors are
//! plain tensor rows, ball points are rows with `√c·‖x‖ < 1`. Both maps
//! are radial (`y = a(‖x‖)·x`), so they plug into the tape as
//! [`RadialFn`] implementations with closed-form Jacobians.

use std::rc::Rc;

use crate::diffcore::{row_norm, RadialFn, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Distance kept from the ball boundary, in units of `1/√c`.
pub const BALL_MARGIN: f64 = 1e-5;

// Below this value of √c·‖x‖ the radial coefficients switch to series.
const SERIES_CUTOFF: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature<T>(T);

impl<T: Scalar> Curvature<T> {
    pub fn new(c: T) -> Result<Self> {
        if !(c > T::zero()) || !c.is_finite() {
            return Err(Error::invalid(format!("curvature must be positive, got {c}")));
        }
        Ok(Self(c))
    }

    pub fn value(self) -> T {
        self.0
    }

    pub fn sqrt(self) -> T {
        self.0.sqrt()
    }

    /// Largest admissible Euclidean norm of a ball point.
    pub fn max_norm(self) -> T {
        (T::one() - T::of(BALL_MARGIN)) / self.sqrt()
    }
}

/// A point strictly inside the ball, margin included.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint<T> {
    coords: Vec<T>,
    curvature: Curvature<T>,
}

impl<T: Scalar> BallPoint<T> {
    pub fn new(coords: Vec<T>, curvature: Curvature<T>) -> Result<Self> {
        if row_norm(&coords) > curvature.max_norm() {
            return Err(Error::NumericDomain {
                op: "ball_point",
                index: 0,
            });
        }
        Ok(Self { coords, curvature })
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn curvature(&self) -> Curvature<T> {
        self.curvature
    }
}

/// `exp_o^c`: tangent space at the origin → ball (before projection).
#[derive(Debug, Clone, Copy)]
pub struct ExpMap0<T>(pub Curvature<T>);

/// `log_o^c`: ball → tangent space at the origin.
#[derive(Debug, Clone, Copy)]
pub struct LogMap0<T>(pub Curvature<T>);

/// Radial rescale of rows that stray past the ball margin.
#[derive(Debug, Clone, Copy)]
pub struct BallProjection<T>(pub Curvature<T>);

impl<T: Scalar> RadialFn<T> for ExpMap0<T> {
    fn name(&self) -> &'static str {
        "exp_map0"
    }

    // a(r) = tanh(u)/u with u = √c·r.
    fn coeffs(&self, r: T) -> Result<(T, T)> {
        let s = self.0.sqrt();
        let u = s * r;
        if u < T::of(SERIES_CUTOFF) {
            let u2 = u * u;
            let a = T::one() - u2 / T::of(3.0) + T::of(2.0 / 15.0) * u2 * u2;
            let b = s * s * (T::of(-2.0 / 3.0) + T::of(8.0 / 15.0) * u2);
            return Ok((a, b));
        }
        let t = u.tanh();
        let a = t / u;
        let sech2 = T::one() - t * t;
        // a'(u)/u = (u·sech²u − tanh u) / u³, chain rule contributes s².
        let b = s * s * (u * sech2 - t) / (u * u * u);
        Ok((a, b))
    }
}

impl<T: Scalar> RadialFn<T> for LogMap0<T> {
    fn name(&self) -> &'static str {
        "log_map0"
    }

    // a(r) = artanh(u)/u with u = √c·r < 1.
    fn coeffs(&self, r: T) -> Result<(T, T)> {
        let s = self.0.sqrt();
        let u = s * r;
        if !(u < T::one()) {
            return Err(Error::NumericDomain {
                op: "log_map0",
                index: 0,
            });
        }
        if u < T::of(SERIES_CUTOFF) {
            let u2 = u * u;
            let a = T::one() + u2 / T::of(3.0) + u2 * u2 / T::of(5.0);
            let b = s * s * (T::of(2.0 / 3.0) + T::of(4.0 / 5.0) * u2);
            return Ok((a, b));
        }
        let at = u.atanh();
        let a = at / u;
        let b = s * s * (u / (T::one() - u * u) - at) / (u * u * u);
        Ok((a, b))
    }
}

impl<T: Scalar> RadialFn<T> for BallProjection<T> {
    fn name(&self) -> &'static str {
        "project_to_ball"
    }

    fn coeffs(&self, r: T) -> Result<(T, T)> {
        let max = self.0.max_norm();
        if r > max {
            Ok((max / r, -max / (r * r * r)))
        } else {
            Ok((T::one(), T::zero()))
        }
    }
}

fn apply_rows<T: Scalar>(x: &Tensor<T>, f: &dyn RadialFn<T>) -> Result<Tensor<T>> {
    let mut out = x.detached();
    for r in 0..x.rows() {
        let (a, _) = f.coeffs(row_norm(x.row(r))).map_err(|e| match e {
            Error::NumericDomain { op, .. } => Error::NumericDomain {
                op,
                index: r * x.cols(),
            },
            other => other,
        })?;
        out.row_mut(r).iter_mut().for_each(|v| *v *= a);
    }
    Ok(out)
}

/// Exponential map at the origin, row-wise, followed by ball projection.
pub fn exp_map0<T: Scalar>(alpha: &Tensor<T>, c: Curvature<T>) -> Tensor<T> {
    let y = apply_rows(alpha, &ExpMap0(c)).expect("exp map is total");
    project_to_ball(&y, c)
}

/// Logarithmic map at the origin, row-wise.
pub fn log_map0<T: Scalar>(beta: &Tensor<T>, c: Curvature<T>) -> Result<Tensor<T>> {
    apply_rows(beta, &LogMap0(c))
}

pub fn project_to_ball<T: Scalar>(x: &Tensor<T>, c: Curvature<T>) -> Tensor<T> {
    apply_rows(x, &BallProjection(c)).expect("projection is total")
}

/// Recorded exponential map (with projection).
pub fn exp_map0_var<T: Scalar>(tape: &Tape<T>, x: Var, c: Curvature<T>) -> Result<Var> {
    let y = tape.radial(Rc::new(ExpMap0(c)), x)?;
    tape.radial(Rc::new(BallProjection(c)), y)
}

pub fn log_map0_var<T: Scalar>(tape: &Tape<T>, x: Var, c: Curvature<T>) -> Result<Var> {
    tape.radial(Rc::new(LogMap0(c)), x)
}

pub fn project_var<T: Scalar>(tape: &Tape<T>, x: Var, c: Curvature<T>) -> Result<Var> {
    tape.radial(Rc::new(BallProjection(c)), x)
}

/// Möbius addition `u ⊕_c v`.
pub fn mobius_add<T: Scalar>(u: &[T], v: &[T], c: Curvature<T>) -> Vec<T> {
    let c = c.value();
    let uv: T = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    let u2: T = u.iter().map(|&a| a * a).sum();
    let v2: T = v.iter().map(|&a| a * a).sum();
    let two = T::of(2.0);
    let ku = T::one() + two * c * uv + c * v2;
    let kv = T::one() - c * u2;
    let den = T::one() + two * c * uv + c * c * u2 * v2;
    u.iter().zip(v).map(|(&a, &b)| (ku * a + kv * b) / den).collect()
}

/// Geodesic distance `(2/√c)·artanh(√c‖(−u) ⊕ v‖)`.
pub fn hyperbolic_distance<T: Scalar>(u: &[T], v: &[T], c: Curvature<T>) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "hyperbolic_distance",
            left: (1, u.len()),
            right: (1, v.len()),
        });
    }
    let limit = T::one() / c.sqrt();
    for (i, p) in [u, v].iter().enumerate() {
        if !(row_norm(p) < limit) {
            return Err(Error::NumericDomain {
                op: "hyperbolic_distance",
                index: i,
            });
        }
    }
    let neg_u: Vec<T> = u.iter().map(|&a| -a).collect();
    let w = mobius_add(&neg_u, v, c);
    let s = c.sqrt();
    let arg = (s * row_norm(&w)).min(T::one() - T::epsilon());
    Ok(T::of(2.0) / s * arg.atanh())
}
