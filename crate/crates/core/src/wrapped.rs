//! Wrapped normal distributions on the Poincaré ball, and the seeded
//! randomness that feeds every stochastic component.
//!
//! A wrapped normal is a tangent-space Gaussian pushed through the
//! exponential map at `mu`:
//!
//! ```text
//! z_e ~ N(0, diag(sigma^2)),   z = exp_map(mu, z_e)
//! ```
//!
//! (`exp_map` here is arclength-normalized; in the gyrovector convention
//! the same construction reads `exp_mu(z_e / lambda_mu)`.) Its density with
//! respect to the Riemannian volume element is
//!
//! ```text
//! N_W(z | mu, Sigma) = N(log_map(mu, z) | 0, Sigma)
//!                      * (sqrt(c) d / sinh(sqrt(c) d))^(n-1),   d = d(mu, z)
//! ```
//!
//! which collapses to the Euclidean Gaussian as `c -> 0`.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{exp_map, log_map, poincare_distance, GeometryError, PoincarePoint};

#[derive(Debug, Error, PartialEq)]
pub enum WrappedError {
    #[error("sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("sigma length {got} does not match mu dimension {want}")]
    SigmaDimension { got: usize, want: usize },
    #[error("monte carlo estimates need at least one sample")]
    ZeroSamples,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

// ---------------------------------------------------------------------------
// Seeded randomness
// ---------------------------------------------------------------------------

/// Deterministic random source: ChaCha8 keyed by a 64-bit seed, with
/// Box-Muller on top for Gaussian draws.
///
/// Runs record `(algorithm, seed, stream)` in their metadata; replaying a
/// seed replays the exact bit stream. Independent substreams (data
/// generation vs. training vs. sampling) come from ChaCha's stream counter
/// rather than seed arithmetic, so they never collide.
#[derive(Debug, Clone)]
pub struct RandomState {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
    spare: Option<f64>,
}

impl RandomState {
    pub fn new(seed: u64) -> Self {
        RandomState {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            stream: 0,
            spare: None,
        }
    }

    /// Fresh generator on an independent stream of the same seed.
    pub fn substream(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        RandomState {
            rng,
            seed: self.seed,
            stream,
            spare: None,
        }
    }

    pub fn algorithm(&self) -> &'static str {
        "chacha8+box-muller"
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `[0, n)` via multiply-shift.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() over an empty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw by the Box-Muller transform; the paired value
    /// is cached so consecutive calls consume one uniform pair per two
    /// normals.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]: keeps ln finite
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for slot in out {
            *slot = self.normal();
        }
    }
}

// ---------------------------------------------------------------------------
// Wrapped normal
// ---------------------------------------------------------------------------

/// `ln(sinh(x)/x)` for `x >= 0`, stable across the whole range: Taylor near
/// zero, direct in the middle, `x - ln 2 - ln x` asymptotics before `sinh`
/// would overflow.
pub(crate) fn ln_sinhc(x: f64) -> f64 {
    if x < 1e-4 {
        let x2 = x * x;
        x2 / 6.0 - x2 * x2 / 180.0
    } else if x < 20.0 {
        (x.sinh() / x).ln()
    } else {
        x - std::f64::consts::LN_2 - x.ln() + (-2.0 * x).exp().ln_1p()
    }
}

/// Wrapped normal distribution on the ball carrying `mu`'s curvature.
#[derive(Debug, Clone)]
pub struct WrappedNormal {
    mu: PoincarePoint,
    sigma: Vec<f64>,
}

impl WrappedNormal {
    pub fn new(mu: PoincarePoint, sigma: Vec<f64>) -> Result<Self, WrappedError> {
        if sigma.len() != mu.dim() {
            return Err(WrappedError::SigmaDimension {
                got: sigma.len(),
                want: mu.dim(),
            });
        }
        if let Some(&bad) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(WrappedError::BadSigma(bad));
        }
        Ok(WrappedNormal { mu, sigma })
    }

    /// Unit-scale prior at the origin.
    pub fn standard(dim: usize, c: f64) -> Self {
        WrappedNormal {
            mu: PoincarePoint::origin(dim, c),
            sigma: vec![1.0; dim],
        }
    }

    pub fn mu(&self) -> &PoincarePoint {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn curvature(&self) -> f64 {
        self.mu.curvature()
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    /// Draw one point: scale a standard normal by `sigma` in the tangent
    /// space at `mu`, then push through the exponential map.
    pub fn sample(&self, rng: &mut RandomState) -> PoincarePoint {
        let z_e: Vec<f64> = self.sigma.iter().map(|s| s * rng.normal()).collect();
        exp_map(&self.mu, &z_e)
    }

    /// Log-density with respect to the Riemannian volume element.
    pub fn log_density(&self, z: &PoincarePoint) -> Result<f64, WrappedError> {
        // Distance check doubles as the dim/curvature guard.
        let d = poincare_distance(&self.mu, z)?;
        let u = log_map(&self.mu, z);
        let mut ll = 0.0;
        for (ui, si) in u.iter().zip(&self.sigma) {
            let w = ui / si;
            ll += -0.5 * w * w - si.ln() - 0.5 * (2.0 * PI).ln();
        }
        let n = self.dim() as f64;
        let sc = self.curvature().sqrt();
        ll -= (n - 1.0) * ln_sinhc(sc * d);
        Ok(ll)
    }
}

/// Monte Carlo KL divergence estimate `E_q[ln q(z) - ln p(z)]` with `z ~ q`.
///
/// Nonnegative in expectation; individual estimates can dip below zero by
/// no more than sampling noise.
pub fn kl_monte_carlo(
    q: &WrappedNormal,
    p: &WrappedNormal,
    n: usize,
    rng: &mut RandomState,
) -> Result<f64, WrappedError> {
    if n == 0 {
        return Err(WrappedError::ZeroSamples);
    }
    let mut acc = 0.0;
    for _ in 0..n {
        let z = q.sample(rng);
        acc += q.log_density(&z)? - p.log_density(&z)?;
    }
    Ok(acc / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PoincarePoint;

    #[test]
    fn identical_seeds_replay_identical_streams() {
        let mut a = RandomState::new(7);
        let mut b = RandomState::new(7);
        for _ in 0..10 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut a = RandomState::new(7);
        let mut b = RandomState::new(7);
        for _ in 0..10 {
            assert!(a.normal() == b.normal(), "normal stream must be bitwise stable");
        }
    }

    #[test]
    fn substreams_diverge_from_the_root_stream() {
        let root = RandomState::new(7);
        let mut s1 = root.substream(1);
        let mut s2 = root.substream(2);
        let a: Vec<u64> = (0..4).map(|_| s1.next_u64()).collect();
        let b: Vec<u64> = (0..4).map(|_| s2.next_u64()).collect();
        assert_ne!(a, b);
        // Re-deriving the same substream replays it.
        let mut s1_again = root.substream(1);
        let c: Vec<u64> = (0..4).map(|_| s1_again.next_u64()).collect();
        assert_eq!(a, c);
    }

    #[test]
    fn box_muller_moments_are_sane() {
        let mut rng = RandomState::new(11);
        let n = 200_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt() * 1.5, "mean = {mean}");
        assert!((var - 1.0).abs() < 0.02, "var = {var}");
    }

    #[test]
    fn sigma_validation() {
        let mu = PoincarePoint::origin(2, 1.0);
        assert!(matches!(
            WrappedNormal::new(mu.clone(), vec![0.3]),
            Err(WrappedError::SigmaDimension { got: 1, want: 2 })
        ));
        assert!(matches!(
            WrappedNormal::new(mu.clone(), vec![0.3, 0.0]),
            Err(WrappedError::BadSigma(_))
        ));
        assert!(matches!(
            WrappedNormal::new(mu, vec![0.3, f64::INFINITY]),
            Err(WrappedError::BadSigma(_))
        ));
    }

    #[test]
    fn tiny_sigma_concentrates_at_mu() {
        let mu = PoincarePoint::new(vec![0.2, -0.3], 1.0).unwrap();
        let q = WrappedNormal::new(mu.clone(), vec![1e-12, 1e-12]).unwrap();
        let mut rng = RandomState::new(3);
        for _ in 0..100 {
            let z = q.sample(&mut rng);
            let d = poincare_distance(&mu, &z).unwrap();
            assert!(d < 1e-9, "sample strayed {d} from mu");
        }
    }

    #[test]
    fn tangent_mean_vanishes_by_symmetry() {
        // sigma = 0.3 per coordinate at the origin: the arclength tangent
        // coordinates of samples are exactly the underlying Gaussian draws,
        // so their mean is 0 within 3 standard errors (0.3 / sqrt(N)).
        let dim = 4;
        let q = WrappedNormal::new(PoincarePoint::origin(dim, 1.0), vec![0.3; dim]).unwrap();
        let mut rng = RandomState::new(5);
        let n = 100_000;
        let mut acc = vec![0.0; dim];
        let origin = PoincarePoint::origin(dim, 1.0);
        for _ in 0..n {
            let z = q.sample(&mut rng);
            for (a, u) in acc.iter_mut().zip(log_map(&origin, &z)) {
                *a += u;
            }
        }
        let bound = 3.0 * 0.3 / (n as f64).sqrt();
        for (i, a) in acc.iter().enumerate() {
            let mean = a / n as f64;
            assert!(
                mean.abs() < bound,
                "coordinate {i}: mean {mean} exceeds {bound}"
            );
        }
    }

    #[test]
    fn flat_limit_density_matches_euclidean_gaussian() {
        // c = 1e-6: the sinh correction is O(c d^2) and the log-density in
        // arclength coordinates must agree with the flat Gaussian to 1e-3.
        let c = 1e-6;
        let sigma = [0.7, 1.1, 0.9];
        let mu = PoincarePoint::origin(3, c);
        let q = WrappedNormal::new(mu.clone(), sigma.to_vec()).unwrap();
        for trial in 0..5 {
            let u: Vec<f64> = (0..3)
                .map(|k| 0.3 * (trial as f64 + 1.0) * (0.2 + 0.1 * k as f64))
                .collect();
            let z = exp_map(&mu, &u);
            let got = q.log_density(&z).unwrap();
            let want: f64 = u
                .iter()
                .zip(&sigma)
                .map(|(ui, si)| {
                    -0.5 * (ui / si) * (ui / si) - si.ln() - 0.5 * (2.0 * PI).ln()
                })
                .sum();
            assert!(
                (got - want).abs() < 1e-3 * want.abs().max(1.0),
                "trial {trial}: wrapped {got} vs flat {want}"
            );
        }
    }

    #[test]
    fn ln_sinhc_is_smooth_across_branch_points() {
        for cut in [1e-4, 20.0] {
            let a = ln_sinhc(cut * (1.0 - 1e-9));
            let b = ln_sinhc(cut * (1.0 + 1e-9));
            assert!((a - b).abs() < 1e-6, "jump at branch {cut}: {a} vs {b}");
        }
        assert_eq!(ln_sinhc(0.0), 0.0);
        // Large arguments: sinh would overflow, the asymptotic form must not.
        assert!(ln_sinhc(800.0).is_finite());
    }

    #[test]
    fn kl_of_distribution_with_itself_is_zero() {
        let q = WrappedNormal::new(
            PoincarePoint::new(vec![0.1, 0.2], 1.0).unwrap(),
            vec![0.5, 0.8],
        )
        .unwrap();
        let mut rng = RandomState::new(9);
        let kl = kl_monte_carlo(&q, &q.clone(), 64, &mut rng).unwrap();
        assert_eq!(kl, 0.0, "log-ratio of identical densities is exactly 0");
    }

    #[test]
    fn kl_flat_limit_matches_closed_form() {
        // Both at the origin, c -> 0: the sinh corrections cancel and the
        // estimate targets the Euclidean diagonal-Gaussian KL exactly.
        let c = 1e-6;
        let (sq, sp) = (0.8, 1.2);
        let q = WrappedNormal::new(PoincarePoint::origin(2, c), vec![sq; 2]).unwrap();
        let p = WrappedNormal::new(PoincarePoint::origin(2, c), vec![sp; 2]).unwrap();
        let mut rng = RandomState::new(13);
        let n = 200_000;
        let kl = kl_monte_carlo(&q, &p, n, &mut rng).unwrap();
        let closed = 2.0 * ((sp / sq).ln() + sq * sq / (2.0 * sp * sp) - 0.5);
        // Per-sample variance of the log-ratio is ~(1 - sq^2/sp^2)^2/2 per
        // coordinate; 3 standard errors with margin.
        let bound = 3.0 * 0.8 / (n as f64).sqrt() + 1e-4;
        assert!(
            (kl - closed).abs() < bound,
            "kl = {kl}, closed form = {closed}, bound = {bound}"
        );
    }

    #[test]
    fn kl_requires_samples() {
        let q = WrappedNormal::standard(2, 1.0);
        let mut rng = RandomState::new(1);
        assert_eq!(
            kl_monte_carlo(&q, &q.clone(), 0, &mut rng),
            Err(WrappedError::ZeroSamples)
        );
    }

    #[test]
    fn kl_estimate_is_deterministic_per_seed() {
        let q = WrappedNormal::new(PoincarePoint::origin(3, 1.0), vec![0.6; 3]).unwrap();
        let p = WrappedNormal::standard(3, 1.0);
        let a = kl_monte_carlo(&q, &p, 512, &mut RandomState::new(21)).unwrap();
        let b = kl_monte_carlo(&q, &p, 512, &mut RandomState::new(21)).unwrap();
        assert!(a == b, "same seed must give bitwise-equal estimates");
        assert!(a.is_finite());
    }
}
