//! Poincaré-ball kernels (curvature −1).
//!
//! Every function here is a pure function of its arguments. Points are plain
//! `&[f64]` slices so the trainer can hand in matrix rows directly; the
//! [`BallPoint`] newtype is available when a validated owned point is wanted.
//!
//! Inputs are validated but never silently clipped: a point with norm ≥ 1 is a
//! domain error. Only the functions that *produce* points (Möbius addition, the
//! exponential map, projection) pull results back inside `1 − ball_epsilon`.

use std::ops::Deref;

use thiserror::Error;

/// Largest admissible norm is `1 - BALL_EPSILON`.
pub const BALL_EPSILON: f64 = 1e-5;

/// Distances below this are treated as coincident points by [`distance_gradient`].
pub const DERIVATIVE_GUARD: f64 = 1e-8;

/// [`h_apply`] refuses distances above this value.
pub const OVERFLOW_GUARD: f64 = 20.0;

/// Tangent vectors and ambient gradients share this representation.
pub type TangentVector = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("point outside the open unit ball (norm {norm})")]
    OutsideBall { norm: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("distance {distance:e} below the derivative guard; gradient is singular")]
    Singular { distance: f64 },
    #[error("distance {distance} above the overflow guard")]
    Saturated { distance: f64 },
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("ball epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("zero vector")]
    ZeroVector,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// A validated point strictly inside the unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint(Vec<f64>);

impl BallPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_point(&coords)?;
        Ok(BallPoint(coords))
    }

    pub fn origin(dim: usize) -> Self {
        BallPoint(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl Deref for BallPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for BallPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::NonFinite)
    }
}

/// Validates a ball point and returns its squared norm.
fn check_point(x: &[f64]) -> Result<f64> {
    check_finite(x)?;
    let sq = norm_sq(x);
    if sq >= 1.0 {
        return Err(GeometryError::OutsideBall { norm: sq.sqrt() });
    }
    Ok(sq)
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(GeometryError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(GeometryError::InvalidEpsilon(eps))
    }
}

/// `ln(w + sqrt(w² − 1))`, with `w` clamped to at least 1.
pub fn arcosh(w: f64) -> f64 {
    let w = w.max(1.0);
    (w + ((w - 1.0) * (w + 1.0)).sqrt()).ln()
}

/// `λ_x = 2 / (1 − ||x||²)`.
pub fn conformal_factor(x: &[f64]) -> Result<f64> {
    let sq = check_point(x)?;
    Ok(2.0 / (1.0 - sq))
}

/// Geodesic distance `arcosh(1 + 2||x−y||² / ((1−||x||²)(1−||y||²)))`.
pub fn poincare_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let xx = check_point(x)?;
    let yy = check_point(y)?;
    let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let w = 1.0 + 2.0 * diff / ((1.0 - xx) * (1.0 - yy));
    Ok(arcosh(w))
}

/// Ambient partial derivative `∂d(x, y)/∂x`.
///
/// With `α = 1−||x||²`, `β = 1−||y||²`, `δ = ||x−y||²` and `w = 1 + 2δ/(αβ)`:
///
/// ```text
/// ∂w/∂x = 4 / (α²β) · (α(x − y) + δ·x)
/// ∂d/∂x = ∂w/∂x / sqrt((w − 1)(w + 1))
/// ```
///
/// `w − 1` is formed directly from `δ` so the denominator keeps full precision
/// for nearby points. The gradient with respect to `y` is this function with
/// the arguments swapped.
pub fn distance_gradient(x: &[f64], y: &[f64]) -> Result<TangentVector> {
    check_dims(x, y)?;
    let xx = check_point(x)?;
    let yy = check_point(y)?;
    let alpha = 1.0 - xx;
    let beta = 1.0 - yy;
    let delta: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let w_minus_one = 2.0 * delta / (alpha * beta);
    let distance = arcosh(1.0 + w_minus_one);
    if distance < DERIVATIVE_GUARD {
        return Err(GeometryError::Singular { distance });
    }
    let denom = (w_minus_one * (w_minus_one + 2.0)).sqrt();
    let scale = 4.0 / (alpha * alpha * beta * denom);
    Ok(x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| scale * (alpha * (xi - yi) + delta * xi))
        .collect())
}

fn mobius_add_raw(x: &[f64], y: &[f64]) -> Vec<f64> {
    let xy = dot(x, y);
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let cx = 1.0 + 2.0 * xy + yy;
    let cy = 1.0 - xx;
    let denom = 1.0 + 2.0 * xy + xx * yy;
    x.iter()
        .zip(y)
        .map(|(&a, &b)| (cx * a + cy * b) / denom)
        .collect()
}

/// Möbius addition `x ⊕ y`, pulled back to `1 − BALL_EPSILON` if rounding
/// carries it to the boundary.
pub fn mobius_add(x: &[f64], y: &[f64]) -> Result<BallPoint> {
    mobius_add_with_epsilon(x, y, BALL_EPSILON)
}

pub fn mobius_add_with_epsilon(x: &[f64], y: &[f64], ball_epsilon: f64) -> Result<BallPoint> {
    check_dims(x, y)?;
    check_point(x)?;
    check_point(y)?;
    project_to_ball(&mobius_add_raw(x, y), ball_epsilon)
}

/// Exponential map `exp_x(v) = x ⊕ tanh(λ_x·||v||/2)·v/||v||`.
pub fn exp_map(x: &[f64], v: &[f64]) -> Result<BallPoint> {
    exp_map_with_epsilon(x, v, BALL_EPSILON)
}

pub fn exp_map_with_epsilon(x: &[f64], v: &[f64], ball_epsilon: f64) -> Result<BallPoint> {
    check_dims(x, v)?;
    check_epsilon(ball_epsilon)?;
    let xx = check_point(x)?;
    check_finite(v)?;
    let v_norm = norm(v);
    if v_norm == 0.0 {
        return Ok(BallPoint(x.to_vec()));
    }
    let lambda = 2.0 / (1.0 - xx);
    // tanh saturates at exactly 1.0 for large arguments; keep the step inside.
    let radius = (lambda * v_norm / 2.0).tanh().min(1.0 - ball_epsilon);
    let step: Vec<f64> = v.iter().map(|c| c * radius / v_norm).collect();
    project_to_ball(&mobius_add_raw(x, &step), ball_epsilon)
}

/// Rescales `x` onto the sphere of radius `1 − ball_epsilon` when it lies
/// outside it; otherwise returns it unchanged.
pub fn project_to_ball(x: &[f64], ball_epsilon: f64) -> Result<BallPoint> {
    let mut out = x.to_vec();
    project_in_place(&mut out, ball_epsilon)?;
    Ok(BallPoint(out))
}

pub fn project_in_place(x: &mut [f64], ball_epsilon: f64) -> Result<()> {
    check_epsilon(ball_epsilon)?;
    check_finite(x)?;
    let max_norm = 1.0 - ball_epsilon;
    let n = norm(x);
    if n > max_norm {
        let scale = max_norm / n;
        x.iter_mut().for_each(|c| *c *= scale);
        // One ulp of rounding can leave the rescaled norm a hair above max_norm.
        while norm(x) > max_norm {
            x.iter_mut().for_each(|c| *c *= 1.0 - f64::EPSILON);
        }
    }
    Ok(())
}

/// Converts an ambient gradient into the Riemannian gradient:
/// multiplies by `1/λ_x² = (1 − ||x||²)² / 4`.
pub fn riemannian_rescale(x: &[f64], euclidean_grad: &[f64]) -> Result<TangentVector> {
    check_dims(x, euclidean_grad)?;
    let xx = check_point(x)?;
    check_finite(euclidean_grad)?;
    let scale = (1.0 - xx) * (1.0 - xx) / 4.0;
    Ok(euclidean_grad.iter().map(|g| g * scale).collect())
}

/// `h(d) = cosh²(d)` and its derivative `h'(d) = sinh(2d)`.
pub fn h_apply(d: f64) -> Result<(f64, f64)> {
    if d.is_nan() {
        return Err(GeometryError::NonFinite);
    }
    if d < 0.0 {
        return Err(GeometryError::NegativeDistance(d));
    }
    if d > OVERFLOW_GUARD {
        return Err(GeometryError::Saturated { distance: d });
    }
    let c = d.cosh();
    Ok((c * c, (2.0 * d).sinh()))
}
