//! Space-time and hyperbolic-ball primitives.
//!
//! Two coupled geometries live here:
//!
//! * **Flat Minkowski space** for events `(t, x)` with metric signature
//!   `(-, +, ..., +)`:
//!
//!   ```text
//!   <a, b> = -a_t b_t + sum_i a_i b_i
//!   ```
//!
//!   Difference vectors classify as timelike (`<d,d> < 0`), spacelike
//!   (`> 0`) or lightlike (`~ 0`), and future-timelike paths accumulate
//!   proper time `tau = sum sqrt(dt^2 - |dx|^2)`.
//!
//! * **The Poincaré ball** of curvature `-c` (`c > 0`), points `v` with
//!   `c|v|^2 < 1`, conformal factor `lambda = 2 / (1 - c|v|^2)` and
//!
//!   ```text
//!   d(x, y) = (1/sqrt(c)) * arccosh(1 + 2c|x-y|^2 / ((1-c|x|^2)(1-c|y|^2)))
//!   ```
//!
//! Tangent vectors are plain Euclidean vectors normalized so that
//! `d(x, exp_map(x, u)) = |u|`; `log_map` is its exact inverse. The ball
//! maps onto the upper hyperboloid sheet `<w, w> = -1, w_0 > 0` (curvature
//! `c = 1`) via
//!
//! ```text
//! m(x)      = (1 + |x|^2, 2 x_1, ..., 2 x_n) / (1 - |x|^2)
//! m^{-1}(w) = (w_1, ..., w_n) / (1 + w_0)
//! ```
//!
//! which turns ball distances into `arccosh(-<a, b>)` on the sheet.

use thiserror::Error;

/// Hard floor keeping clamped points strictly inside the open ball.
pub const BALL_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("curvature mismatch: {left} vs {right}")]
    CurvatureMismatch { left: f64, right: f64 },
    #[error("point outside the open ball: c*|v|^2 = {0}")]
    OutsideBall(f64),
    #[error("coordinates must be finite")]
    NonFinite,
    #[error("curvature must be positive and finite, got {0}")]
    BadCurvature(f64),
    #[error("path segment {index} is not future-timelike within tolerance")]
    NonTimelikeSegment { index: usize },
    #[error("hyperboloid constraint violated: <w,w> = {0}")]
    OffHyperboloid(f64),
}

// ---------------------------------------------------------------------------
// Minkowski events
// ---------------------------------------------------------------------------

/// A point of latent space-time: one time coordinate plus `n` spatial ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: Vec<f64>,
}

impl Event {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        Event { t, x }
    }

    pub fn spatial_dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalClass {
    Timelike,
    Spacelike,
    Lightlike,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Minkowski inner product `-a_t b_t + <a_x, b_x>`.
pub fn minkowski_inner(a: &Event, b: &Event) -> Result<f64, GeometryError> {
    if a.x.len() != b.x.len() {
        return Err(GeometryError::DimensionMismatch {
            left: a.x.len(),
            right: b.x.len(),
        });
    }
    Ok(-a.t * b.t + dot(&a.x, &b.x))
}

/// Squared interval `<b-a, b-a>` of the difference vector.
pub fn interval(a: &Event, b: &Event) -> Result<f64, GeometryError> {
    if a.x.len() != b.x.len() {
        return Err(GeometryError::DimensionMismatch {
            left: a.x.len(),
            right: b.x.len(),
        });
    }
    let dt = b.t - a.t;
    let dx2: f64 = a.x.iter().zip(&b.x).map(|(p, q)| (q - p) * (q - p)).sum();
    Ok(-dt * dt + dx2)
}

/// Scale-aware tolerance for classifying intervals: `1e-9 * (1 + |d|^2)`
/// where `|d|^2` is the Euclidean size of the difference vector.
pub fn default_interval_tol(a: &Event, b: &Event) -> f64 {
    let dt = b.t - a.t;
    let dx2: f64 = a.x.iter().zip(&b.x).map(|(p, q)| (q - p) * (q - p)).sum();
    1e-9 * (1.0 + dt * dt + dx2)
}

/// Classify the separation of two events. `tol` absorbs float noise around
/// the light cone itself: `|interval| <= tol` counts as lightlike.
pub fn interval_classify(a: &Event, b: &Event, tol: f64) -> Result<IntervalClass, GeometryError> {
    let q = interval(a, b)?;
    Ok(if q < -tol {
        IntervalClass::Timelike
    } else if q > tol {
        IntervalClass::Spacelike
    } else {
        IntervalClass::Lightlike
    })
}

/// Proper time along a piecewise-linear causal path:
/// `tau = sum_k sqrt(dt_k^2 - |dx_k|^2)`.
///
/// Every segment must advance in time and be timelike (or lightlike within
/// `tol`, contributing ~0); otherwise `NonTimelikeSegment` names the first
/// offending segment. Paths with fewer than two events have `tau = 0`.
pub fn proper_time(path: &[Event], tol: f64) -> Result<f64, GeometryError> {
    let mut tau = 0.0;
    for (index, pair) in path.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let q = interval(a, b)?;
        let dt = b.t - a.t;
        if q > tol || dt <= 0.0 {
            return Err(GeometryError::NonTimelikeSegment { index });
        }
        tau += (-q).max(0.0).sqrt();
    }
    Ok(tau)
}

// ---------------------------------------------------------------------------
// Poincaré ball
// ---------------------------------------------------------------------------

/// A point strictly inside the ball of curvature `-c`: `c |v|^2 < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincarePoint {
    v: Vec<f64>,
    c: f64,
}

impl PoincarePoint {
    pub fn new(v: Vec<f64>, c: f64) -> Result<Self, GeometryError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(GeometryError::BadCurvature(c));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let s = c * norm_sq(&v);
        if s >= 1.0 {
            return Err(GeometryError::OutsideBall(s));
        }
        Ok(PoincarePoint { v, c })
    }

    pub fn origin(dim: usize, c: f64) -> Self {
        PoincarePoint { v: vec![0.0; dim], c }
    }

    /// Project arbitrary coordinates into the open ball, returning whether
    /// clamping fired. Used as the overflow guard behind `exp_map` and
    /// friends: saturated points sit at `c|v|^2 = 1 - 1e-12`.
    pub fn clamped(mut v: Vec<f64>, c: f64) -> (Self, bool) {
        let s = c * norm_sq(&v);
        let limit = 1.0 - BALL_EPS;
        if s > limit || !s.is_finite() {
            let scale = if s.is_finite() {
                (limit / s).sqrt()
            } else {
                // Direction survives, magnitude saturates.
                let n = norm_sq(&v).sqrt();
                if n.is_finite() && n > 0.0 {
                    (limit / c).sqrt() / n
                } else {
                    0.0
                }
            };
            for x in &mut v {
                *x *= scale;
                if !x.is_finite() {
                    *x = 0.0;
                }
            }
            (PoincarePoint { v, c }, true)
        } else {
            (PoincarePoint { v, c }, false)
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.v
    }

    pub fn curvature(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    fn check_pair(&self, other: &PoincarePoint) -> Result<(), GeometryError> {
        if self.v.len() != other.v.len() {
            return Err(GeometryError::DimensionMismatch {
                left: self.v.len(),
                right: other.v.len(),
            });
        }
        if self.c != other.c {
            return Err(GeometryError::CurvatureMismatch {
                left: self.c,
                right: other.c,
            });
        }
        Ok(())
    }
}

/// Conformal factor `lambda_x = 2 / (1 - c |x|^2)`; the metric at `x` is
/// `lambda_x^2` times Euclidean.
pub fn conformal_factor(x: &PoincarePoint) -> f64 {
    2.0 / (1.0 - x.c * norm_sq(&x.v))
}

/// Möbius (gyrovector) addition, the ball's noncommutative translation:
///
/// ```text
/// x (+) y = [(1 + 2c<x,y> + c|y|^2) x + (1 - c|x|^2) y]
///           / (1 + 2c<x,y> + c^2 |x|^2 |y|^2)
/// ```
pub fn mobius_add(x: &PoincarePoint, y: &PoincarePoint) -> Result<PoincarePoint, GeometryError> {
    x.check_pair(y)?;
    let c = x.c;
    let xy = dot(&x.v, &y.v);
    let xx = norm_sq(&x.v);
    let yy = norm_sq(&y.v);
    let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
    let ax = 1.0 + 2.0 * c * xy + c * yy;
    let ay = 1.0 - c * xx;
    let v: Vec<f64> = x
        .v
        .iter()
        .zip(&y.v)
        .map(|(xi, yi)| (ax * xi + ay * yi) / den)
        .collect();
    Ok(PoincarePoint::clamped(v, c).0)
}

fn mobius_neg(x: &PoincarePoint) -> PoincarePoint {
    PoincarePoint {
        v: x.v.iter().map(|a| -a).collect(),
        c: x.c,
    }
}

/// Geodesic distance on the ball of curvature `-c`.
pub fn poincare_distance(x: &PoincarePoint, y: &PoincarePoint) -> Result<f64, GeometryError> {
    x.check_pair(y)?;
    let c = x.c;
    let diff2: f64 = x
        .v
        .iter()
        .zip(&y.v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den = (1.0 - c * norm_sq(&x.v)) * (1.0 - c * norm_sq(&y.v));
    let arg = 1.0 + 2.0 * c * diff2 / den;
    Ok(arg.max(1.0).acosh() / c.sqrt())
}

/// Exponential map in arclength normalization: `exp_map(x, u)` walks the
/// geodesic from `x` in direction `u` for distance `|u|`, so
/// `poincare_distance(x, exp_map(x, u)) = |u|`.
///
/// `exp_map(x, 0) = x` exactly. Results saturate at the clamp shell rather
/// than leaving the ball; use [`exp_map_guarded`] to observe the flag.
pub fn exp_map(base: &PoincarePoint, u: &[f64]) -> PoincarePoint {
    exp_map_guarded(base, u).0
}

/// `exp_map` plus a saturation flag reporting whether the overflow guard
/// clamped the result onto the `c|v|^2 = 1 - 1e-12` shell.
pub fn exp_map_guarded(base: &PoincarePoint, u: &[f64]) -> (PoincarePoint, bool) {
    assert_eq!(base.dim(), u.len(), "tangent dimension mismatch");
    let c = base.c;
    let s = norm_sq(u).sqrt();
    if s == 0.0 {
        return (base.clone(), false);
    }
    // Geodesic ray from the origin: |exp_0(u)| = tanh(sqrt(c)|u|/2)/sqrt(c),
    // then translate by Möbius addition (an isometry fixing distances).
    let sc = c.sqrt();
    let f = (sc * s / 2.0).tanh() / (sc * s);
    let tip: Vec<f64> = u.iter().map(|a| a * f).collect();
    let (tip, sat1) = PoincarePoint::clamped(tip, c);
    let sum = mobius_add(base, &tip).expect("dims already checked");
    let s_out = c * norm_sq(&sum.v);
    let (out, sat2) = PoincarePoint::clamped(sum.v, c);
    let _ = s_out;
    (out, sat1 || sat2)
}

/// Inverse of [`exp_map`]: the tangent vector at `base` pointing to `target`
/// with `|log_map(base, target)| = poincare_distance(base, target)`.
pub fn log_map(base: &PoincarePoint, target: &PoincarePoint) -> Vec<f64> {
    assert_eq!(base.dim(), target.dim(), "dimension mismatch");
    assert!(
        base.c == target.c,
        "curvature mismatch: {} vs {}",
        base.c,
        target.c
    );
    if base.v == target.v {
        return vec![0.0; base.dim()];
    }
    let c = base.c;
    let w = mobius_add(&mobius_neg(base), target).expect("dims already checked");
    let s = norm_sq(&w.v).sqrt();
    if s == 0.0 {
        return vec![0.0; base.dim()];
    }
    let sc = c.sqrt();
    let r = (sc * s).min(1.0 - 1e-15);
    let f = 2.0 * r.atanh() / (sc * s);
    w.v.iter().map(|a| a * f).collect()
}

// ---------------------------------------------------------------------------
// Hyperboloid (Lorentz) model, curvature c = 1
// ---------------------------------------------------------------------------

/// A point on the upper hyperboloid sheet: `<w,w> = -1`, `w_0 > 0`, where
/// the inner product uses the `(-, +, ..., +)` signature.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    w: Vec<f64>,
}

fn eta_inner(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + dot(&a[1..], &b[1..])
}

impl LorentzPoint {
    /// Validates the sheet constraint to 1e-9.
    pub fn new(w: Vec<f64>) -> Result<Self, GeometryError> {
        if w.is_empty() || w.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let q = eta_inner(&w, &w);
        if (q + 1.0).abs() > 1e-9 || w[0] <= 0.0 {
            return Err(GeometryError::OffHyperboloid(q));
        }
        Ok(LorentzPoint { w })
    }

    pub fn coords(&self) -> &[f64] {
        &self.w
    }

    pub fn spatial_dim(&self) -> usize {
        self.w.len() - 1
    }
}

/// Diffeomorphism from the unit ball (`c = 1`) onto the hyperboloid:
/// `m(x) = (1 + |x|^2, 2x) / (1 - |x|^2)`. For other curvatures rescale
/// coordinates by `sqrt(c)` first.
pub fn to_lorentz(x: &PoincarePoint) -> LorentzPoint {
    assert!(
        (x.c - 1.0).abs() < 1e-12,
        "hyperboloid map defined for c = 1, got c = {}",
        x.c
    );
    let s = norm_sq(&x.v);
    let den = 1.0 - s;
    let mut w = Vec::with_capacity(x.v.len() + 1);
    w.push((1.0 + s) / den);
    w.extend(x.v.iter().map(|a| 2.0 * a / den));
    LorentzPoint { w }
}

/// Inverse map `m^{-1}(w) = (w_1, ..., w_n) / (1 + w_0)` back into the unit
/// ball (`c = 1`).
pub fn to_poincare(w: &LorentzPoint) -> PoincarePoint {
    let den = 1.0 + w.w[0];
    let v: Vec<f64> = w.w[1..].iter().map(|a| a / den).collect();
    PoincarePoint::clamped(v, 1.0).0
}

/// Hyperboloid geodesic distance `arccosh(-<a, b>)`, with the argument
/// clamped to `>= 1` so that `lorentz_distance(a, a) = 0` despite rounding.
pub fn lorentz_distance(a: &LorentzPoint, b: &LorentzPoint) -> f64 {
    assert_eq!(a.w.len(), b.w.len(), "dimension mismatch");
    (-eta_inner(&a.w, &b.w)).max(1.0).acosh()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU_SQRT3: f64 = 1.7320508075688772;
    const ACOSH_5_3: f64 = 1.0986122886681098;
    const D_03_04: f64 = 1.0891371665366823; // extended-precision arccosh evaluation
    const TANH_03: f64 = 0.29131261245159090;

    fn ball(v: &[f64], c: f64) -> PoincarePoint {
        PoincarePoint::new(v.to_vec(), c).unwrap()
    }

    #[test]
    fn inner_product_mixes_signature() {
        let a = Event::new(2.0, vec![1.0, 0.0]);
        let b = Event::new(1.0, vec![3.0, 0.0]);
        assert_eq!(minkowski_inner(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn inner_product_rejects_mismatched_dims() {
        let a = Event::new(0.0, vec![1.0]);
        let b = Event::new(0.0, vec![1.0, 2.0]);
        assert_eq!(
            minkowski_inner(&a, &b),
            Err(GeometryError::DimensionMismatch { left: 1, right: 2 })
        );
    }

    #[test]
    fn interval_classification_three_ways() {
        let o = Event::new(0.0, vec![0.0]);
        let tol = 1e-9;
        // dt = 2, |dx| = 1: q = -3
        assert_eq!(
            interval_classify(&o, &Event::new(2.0, vec![1.0]), tol).unwrap(),
            IntervalClass::Timelike
        );
        // dt = 1, |dx| = 2: q = 3
        assert_eq!(
            interval_classify(&o, &Event::new(1.0, vec![2.0]), tol).unwrap(),
            IntervalClass::Spacelike
        );
        assert_eq!(
            interval_classify(&o, &Event::new(1.5, vec![1.5]), tol).unwrap(),
            IntervalClass::Lightlike
        );
        assert_eq!(interval(&o, &Event::new(2.0, vec![1.0])).unwrap(), -3.0);
    }

    #[test]
    fn proper_time_of_single_timelike_segment() {
        let path = [Event::new(0.0, vec![0.0]), Event::new(2.0, vec![1.0])];
        let tau = proper_time(&path, 1e-9).unwrap();
        assert!(
            (tau - TAU_SQRT3).abs() < 1e-12,
            "tau = {tau}, want sqrt(3)"
        );
    }

    #[test]
    fn proper_time_degenerate_paths_are_zero() {
        assert_eq!(proper_time(&[], 1e-9).unwrap(), 0.0);
        assert_eq!(
            proper_time(&[Event::new(1.0, vec![2.0])], 1e-9).unwrap(),
            0.0
        );
    }

    #[test]
    fn proper_time_rejects_spacelike_segment() {
        let path = [
            Event::new(0.0, vec![0.0]),
            Event::new(1.0, vec![0.5]),
            Event::new(1.5, vec![3.0]),
        ];
        assert_eq!(
            proper_time(&path, 1e-9),
            Err(GeometryError::NonTimelikeSegment { index: 1 })
        );
    }

    #[test]
    fn proper_time_rejects_backwards_time() {
        let path = [Event::new(1.0, vec![0.0]), Event::new(0.5, vec![0.0])];
        assert_eq!(
            proper_time(&path, 1e-9),
            Err(GeometryError::NonTimelikeSegment { index: 0 })
        );
    }

    #[test]
    fn proper_time_tolerates_lightlike_segments() {
        let path = [Event::new(0.0, vec![0.0]), Event::new(1.0, vec![1.0])];
        let tau = proper_time(&path, 1e-9).unwrap();
        assert!(tau.abs() < 1e-4, "lightlike segment contributes ~0, got {tau}");
    }

    #[test]
    fn conformal_factor_reference_values() {
        assert!((conformal_factor(&ball(&[0.5], 1.0)) - 8.0 / 3.0).abs() < 1e-15);
        assert_eq!(conformal_factor(&PoincarePoint::origin(3, 1.0)), 2.0);
    }

    #[test]
    fn ball_constructor_guards() {
        assert!(PoincarePoint::new(vec![0.9], 1.0).is_ok());
        assert_eq!(
            PoincarePoint::new(vec![1.0], 1.0),
            Err(GeometryError::OutsideBall(1.0))
        );
        assert!(matches!(
            PoincarePoint::new(vec![f64::NAN], 1.0),
            Err(GeometryError::NonFinite)
        ));
        assert!(matches!(
            PoincarePoint::new(vec![0.1], -1.0),
            Err(GeometryError::BadCurvature(_))
        ));
        // c scales the admissible radius: |v| = 1.5 fits in a c = 0.25 ball.
        assert!(PoincarePoint::new(vec![1.5], 0.25).is_ok());
    }

    #[test]
    fn distance_matches_frozen_oracles() {
        let o = PoincarePoint::origin(1, 1.0);
        let d = poincare_distance(&o, &ball(&[0.5], 1.0)).unwrap();
        assert!((d - ACOSH_5_3).abs() < 1e-12, "d = {d}, want arccosh(5/3)");
        // Same value through the artanh identity d = 2 artanh(|v|).
        assert!((d - 2.0 * 0.5f64.atanh()).abs() < 1e-12);

        let x = ball(&[0.3, 0.0], 1.0);
        let y = ball(&[0.0, 0.4], 1.0);
        let d2 = poincare_distance(&x, &y).unwrap();
        assert!((d2 - D_03_04).abs() < 1e-12, "d = {d2}");
        let d2r = poincare_distance(&y, &x).unwrap();
        assert_eq!(d2, d2r, "symmetry must be exact");
        assert_eq!(poincare_distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn distance_rejects_mixed_curvatures() {
        let x = ball(&[0.1], 1.0);
        let y = ball(&[0.1], 2.0);
        assert!(matches!(
            poincare_distance(&x, &y),
            Err(GeometryError::CurvatureMismatch { .. })
        ));
    }

    #[test]
    fn exp_map_frozen_value_and_distance_property() {
        let o = PoincarePoint::origin(1, 1.0);
        let p = exp_map(&o, &[0.6]);
        assert!(
            (p.coords()[0] - TANH_03).abs() < 1e-12,
            "exp_0(0.6) = {}, want tanh(0.3)",
            p.coords()[0]
        );
        let d = poincare_distance(&o, &p).unwrap();
        assert!((d - 0.6).abs() < 1e-12, "arclength normalization: d = {d}");

        // Same property away from the origin.
        let base = ball(&[0.2, -0.4], 1.0);
        for s in [0.05, 0.7, 2.0] {
            let u = [s * 0.6, s * 0.8];
            let q = exp_map(&base, &u);
            let d = poincare_distance(&base, &q).unwrap();
            assert!((d - s).abs() < 1e-10, "walked {s}, measured {d}");
        }
    }

    #[test]
    fn exp_map_of_zero_is_base_exactly() {
        let base = ball(&[0.3, 0.1], 1.0);
        assert_eq!(exp_map(&base, &[0.0, 0.0]), base);
    }

    #[test]
    fn exp_map_saturates_instead_of_escaping() {
        let o = PoincarePoint::origin(2, 1.0);
        let (p, saturated) = exp_map_guarded(&o, &[800.0, 0.0]);
        assert!(saturated);
        let s = p.coords().iter().map(|a| a * a).sum::<f64>();
        assert!(s < 1.0, "clamped inside the ball, |v|^2 = {s}");
        assert!(s > 1.0 - 1e-9, "sits on the clamp shell, |v|^2 = {s}");
    }

    #[test]
    fn log_map_inverts_exp_map() {
        let base = ball(&[0.1, 0.25], 1.0);
        let u = [0.4, -0.3];
        let p = exp_map(&base, &u);
        let back = log_map(&base, &p);
        for (a, b) in back.iter().zip(&u) {
            assert!((a - b).abs() < 1e-10, "log(exp(u)) = {back:?}, want {u:?}");
        }
        let d = poincare_distance(&base, &p).unwrap();
        let n = back.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((n - d).abs() < 1e-10, "|log| = {n} vs d = {d}");
    }

    #[test]
    fn log_map_at_base_is_zero() {
        let base = ball(&[0.5, 0.2], 1.0);
        assert_eq!(log_map(&base, &base), vec![0.0, 0.0]);
    }

    #[test]
    fn geodesic_sub_segments_have_equal_length() {
        let base = ball(&[-0.3, 0.1], 1.0);
        let dir = [3.0 / 5.0, 4.0 / 5.0];
        let total = 1.2;
        let m = 4;
        let pts: Vec<PoincarePoint> = (0..=m)
            .map(|k| {
                let s = total * k as f64 / m as f64;
                exp_map(&base, &[dir[0] * s, dir[1] * s])
            })
            .collect();
        for pair in pts.windows(2) {
            let d = poincare_distance(&pair[0], &pair[1]).unwrap();
            assert!(
                (d - total / m as f64).abs() < 1e-9,
                "constant-speed geodesic, segment length {d}"
            );
        }
    }

    #[test]
    fn mobius_left_cancellation() {
        let x = ball(&[0.3, -0.2], 1.0);
        let y = ball(&[-0.1, 0.5], 1.0);
        let sum = mobius_add(&x, &y).unwrap();
        let back = mobius_add(&mobius_neg(&x), &sum).unwrap();
        for (a, b) in back.coords().iter().zip(y.coords()) {
            assert!((a - b).abs() < 1e-14, "(-x)+(x+y) = {back:?} vs y = {y:?}");
        }
    }

    #[test]
    fn hyperboloid_map_frozen_value() {
        let w = to_lorentz(&ball(&[0.5], 1.0));
        assert!((w.coords()[0] - 5.0 / 3.0).abs() < 1e-15);
        assert!((w.coords()[1] - 4.0 / 3.0).abs() < 1e-15);
        // Constraint holds by construction.
        assert!(LorentzPoint::new(w.coords().to_vec()).is_ok());
    }

    #[test]
    fn hyperboloid_round_trip() {
        let x = ball(&[0.3, -0.55, 0.1], 1.0);
        let back = to_poincare(&to_lorentz(&x));
        for (a, b) in back.coords().iter().zip(x.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lorentz_distance_agrees_with_ball_distance() {
        let x = ball(&[0.3, 0.0], 1.0);
        let y = ball(&[0.0, 0.4], 1.0);
        let dl = lorentz_distance(&to_lorentz(&x), &to_lorentz(&y));
        assert!((dl - D_03_04).abs() < 1e-9, "lorentz d = {dl}");
        let w = to_lorentz(&x);
        assert_eq!(lorentz_distance(&w, &w), 0.0, "clamp keeps d(a,a) = 0");
    }

    #[test]
    fn lorentz_constructor_rejects_off_sheet_points() {
        assert!(matches!(
            LorentzPoint::new(vec![1.0, 1.0]),
            Err(GeometryError::OffHyperboloid(_))
        ));
        assert!(LorentzPoint::new(vec![1.0, 0.0, 0.0]).is_ok());
    }
}
