//! Light cones over latent space-time, and rejection sampling inside them.
//!
//! An embedded frame becomes an apex event; its future cone with slope `s`
//! is the set `{e : e.t >= apex.t, |e.x - apex.x| <= s (e.t - apex.t)}`
//! (Euclidean norm on the spatial part, per the flat Minkowski metric).
//! Slope 1 is the 45-degree cone; data-driven slopes come from
//! [`estimate_aperture`]. Constant-time slices of cones are balls, so cone
//! intersections restricted to a time plane are ball intersections, which
//! is what the samplers exploit.

use thiserror::Error;

use crate::geometry::{Event, PoincarePoint};
use crate::wrapped::{RandomState, WrappedNormal};

/// Degenerate embeddings (e.g. a static world where consecutive latents
/// coincide) would estimate a zero aperture; the estimator floors at this
/// value to keep every cone's slope strictly positive.
pub const APERTURE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ConeError {
    #[error("cone slope must be positive and finite, got {0}")]
    BadSlope(f64),
    #[error("section time {t} is on the wrong side of the apex at t = {apex_t}")]
    WrongSide { t: f64, apex_t: f64 },
    #[error("operation over an empty cone list")]
    EmptyConeList,
    #[error("expected a Future cone at index {0}")]
    NotFuture(usize),
    #[error("no proposals accepted after {trials} trials")]
    ZeroAccepted { trials: usize },
    #[error("aperture estimation needs at least one consecutive positive pair")]
    EmptyPositives,
    #[error("positive sequence {seq} is not strictly time-ordered at step {index}")]
    NonIncreasingTimestamps { seq: usize, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Future,
    Past,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeRegion {
    Interior,
    Boundary,
    Exterior,
}

/// Half-cone anchored at an apex event.
#[derive(Debug, Clone)]
pub struct LightCone {
    pub apex: Event,
    pub slope: f64,
    pub orientation: Orientation,
}

impl LightCone {
    pub fn new(apex: Event, slope: f64, orientation: Orientation) -> Result<Self, ConeError> {
        if !(slope.is_finite() && slope > 0.0) {
            return Err(ConeError::BadSlope(slope));
        }
        Ok(LightCone {
            apex,
            slope,
            orientation,
        })
    }

    pub fn future(apex: Event, slope: f64) -> Result<Self, ConeError> {
        LightCone::new(apex, slope, Orientation::Future)
    }

    pub fn past(apex: Event, slope: f64) -> Result<Self, ConeError> {
        LightCone::new(apex, slope, Orientation::Past)
    }

    /// Time elapsed from the apex in the cone's own direction: positive
    /// inside the half-space the cone occupies.
    fn causal_dt(&self, e: &Event) -> f64 {
        match self.orientation {
            Orientation::Future => e.t - self.apex.t,
            Orientation::Past => self.apex.t - e.t,
        }
    }
}

fn spatial_distance(a: &Event, b: &Event) -> f64 {
    debug_assert_eq!(a.x.len(), b.x.len());
    a.x.iter()
        .zip(&b.x)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Scale-aware membership tolerance, mirroring the interval classifier:
/// `1e-9 * (1 + dt^2 + |dx|^2)`.
pub fn membership_tol(cone: &LightCone, e: &Event) -> f64 {
    let dt = e.t - cone.apex.t;
    let dx2: f64 = e
        .x
        .iter()
        .zip(&cone.apex.x)
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    1e-9 * (1.0 + dt * dt + dx2)
}

/// Membership test including the apex and the mantle, with `tol` absorbing
/// float noise on both the time and space conditions.
pub fn contains(cone: &LightCone, e: &Event, tol: f64) -> bool {
    assert_eq!(
        cone.apex.x.len(),
        e.x.len(),
        "event dimension does not match cone apex"
    );
    let dt = cone.causal_dt(e);
    dt >= -tol && spatial_distance(&cone.apex, e) <= cone.slope * dt + tol
}

/// Interior / mantle / exterior classification. Events on the wrong time
/// side are Exterior regardless of how close they sit to the mantle's
/// mathematical extension.
pub fn boundary_classify(cone: &LightCone, e: &Event, tol: f64) -> ConeRegion {
    let dt = cone.causal_dt(e);
    if dt < -tol {
        return ConeRegion::Exterior;
    }
    let gap = spatial_distance(&cone.apex, e) - cone.slope * dt.max(0.0);
    if gap.abs() <= tol {
        ConeRegion::Boundary
    } else if gap < 0.0 {
        ConeRegion::Interior
    } else {
        ConeRegion::Exterior
    }
}

/// Radius of the cone's ball-shaped slice at time `t`; errors if `t` is on
/// the wrong side of the apex.
pub fn section_radius(cone: &LightCone, t: f64) -> Result<f64, ConeError> {
    let dt = cone.causal_dt(&Event::new(t, cone.apex.x.clone()));
    if dt < 0.0 {
        return Err(ConeError::WrongSide {
            t,
            apex_t: cone.apex.t,
        });
    }
    Ok(cone.slope * dt)
}

/// A cone sliced at a fixed time: a ball centered under the apex.
#[derive(Debug, Clone)]
pub struct ConicSection {
    pub cone: LightCone,
    pub t: f64,
}

impl ConicSection {
    pub fn new(cone: LightCone, t: f64) -> Result<Self, ConeError> {
        section_radius(&cone, t)?;
        Ok(ConicSection { cone, t })
    }

    pub fn radius(&self) -> f64 {
        self.cone.slope * self.cone.causal_dt(&Event::new(self.t, vec![]))
    }

    pub fn center(&self) -> &[f64] {
        &self.cone.apex.x
    }
}

/// Conjunction of [`contains`] over every cone; errors on an empty list.
pub fn intersection_contains(
    cones: &[LightCone],
    e: &Event,
    tol: f64,
) -> Result<bool, ConeError> {
    if cones.is_empty() {
        return Err(ConeError::EmptyConeList);
    }
    Ok(cones.iter().all(|c| contains(c, e, tol)))
}

/// Emptiness certificate for the time-`t` slice of a Future-cone
/// intersection.
///
/// `false` is definitive: some cone has no slice at `t`, or two slices are
/// disjoint balls. `true` is exact for one or two cones; for three or more
/// it means "no pairwise obstruction found", the caller's cue to attempt
/// sampling.
pub fn section_intersection_nonempty(cones: &[LightCone], t: f64) -> Result<bool, ConeError> {
    if cones.is_empty() {
        return Err(ConeError::EmptyConeList);
    }
    if let Some(i) = cones
        .iter()
        .position(|c| c.orientation != Orientation::Future)
    {
        return Err(ConeError::NotFuture(i));
    }
    let mut radii = Vec::with_capacity(cones.len());
    for c in cones {
        let dt = t - c.apex.t;
        if dt < 0.0 {
            return Ok(false);
        }
        radii.push(c.slope * dt);
    }
    for i in 0..cones.len() {
        for j in (i + 1)..cones.len() {
            let d = spatial_distance(&cones[i].apex, &cones[j].apex);
            if d > radii[i] + radii[j] {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Spatial coordinates of an embedded latent: the ball vector scaled by a
/// fixed factor `rho` (the time axis comes from frame index, not from the
/// hyperboloid's zeroth coordinate, which is a function of the spatial norm
/// and cannot order a sequence).
pub fn latent_event(latent: &PoincarePoint, t: f64, rho: f64) -> Event {
    Event::new(t, latent.coords().iter().map(|a| a * rho).collect())
}

/// A frame embedded into latent space-time.
#[derive(Debug, Clone)]
pub struct EmbeddedFrameEvent {
    pub frame_index: usize,
    pub event: Event,
    pub latent: PoincarePoint,
}

/// Rejection-sampling outcome: the accepted latents with their plane
/// events, plus the exact trial count that produced them.
#[derive(Debug, Clone)]
pub struct SectionSample {
    pub samples: Vec<(Event, PoincarePoint)>,
    pub attempted: usize,
}

impl SectionSample {
    pub fn accepted(&self) -> usize {
        self.samples.len()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.samples.len() as f64 / self.attempted as f64
    }
}

/// Draw `max_trials` latents from `proposal`, map each onto the time-`t`
/// plane through `embed`, and keep those inside every cone. Errors with
/// `ZeroAccepted` when nothing survives the full budget.
///
/// The trial budget always runs to completion so the acceptance rate is an
/// unbiased estimate of the section's proposal mass.
pub fn sample_in_section<F>(
    cones: &[LightCone],
    t: f64,
    proposal: &WrappedNormal,
    embed: F,
    rng: &mut RandomState,
    max_trials: usize,
) -> Result<SectionSample, ConeError>
where
    F: Fn(&PoincarePoint, f64) -> Event,
{
    if cones.is_empty() {
        return Err(ConeError::EmptyConeList);
    }
    let mut samples = Vec::new();
    for _ in 0..max_trials {
        let z = proposal.sample(rng);
        let e = embed(&z, t);
        let inside = cones
            .iter()
            .all(|c| contains(c, &e, membership_tol(c, &e)));
        if inside {
            samples.push((e, z));
        }
    }
    if samples.is_empty() {
        return Err(ConeError::ZeroAccepted { trials: max_trials });
    }
    Ok(SectionSample {
        samples,
        attempted: max_trials,
    })
}

/// Reachable-future probe: sample the Future cone of `state` on the plane
/// `state.t + horizon`, returning up to `k` accepted events.
#[allow(clippy::too_many_arguments)]
pub fn probe_futures<F>(
    state: &EmbeddedFrameEvent,
    horizon: f64,
    slope: f64,
    proposal: &WrappedNormal,
    embed: F,
    rng: &mut RandomState,
    k: usize,
    max_trials: usize,
) -> Result<SectionSample, ConeError>
where
    F: Fn(&PoincarePoint, f64) -> Event,
{
    let cone = LightCone::future(state.event.clone(), slope)?;
    let mut out = sample_in_section(
        std::slice::from_ref(&cone),
        state.event.t + horizon,
        proposal,
        embed,
        rng,
        max_trials,
    )?;
    out.samples.truncate(k);
    Ok(out)
}

/// Mirror of [`probe_futures`]: the Past cone sliced at `state.t - horizon`.
#[allow(clippy::too_many_arguments)]
pub fn probe_pasts<F>(
    state: &EmbeddedFrameEvent,
    horizon: f64,
    slope: f64,
    proposal: &WrappedNormal,
    embed: F,
    rng: &mut RandomState,
    k: usize,
    max_trials: usize,
) -> Result<SectionSample, ConeError>
where
    F: Fn(&PoincarePoint, f64) -> Event,
{
    let cone = LightCone::past(state.event.clone(), slope)?;
    let mut out = sample_in_section(
        std::slice::from_ref(&cone),
        state.event.t - horizon,
        proposal,
        embed,
        rng,
        max_trials,
    )?;
    out.samples.truncate(k);
    Ok(out)
}

/// Contrastive cone-aperture estimation.
///
/// Positives (real embedded sequences) lower-bound the aperture: any slope
/// below the fastest observed consecutive step would exclude actually
/// reachable states, so `L = max |dx| / dt`. Negatives (pairs that should
/// NOT be reachable) upper-bound it by the slowest offending speed `U`,
/// ignoring pairs already below `L` or with zero time gap. The estimate is
/// the midpoint of `[L, min(U, 1.1 L)]`, or `1.05 L` when no negative
/// binds. Degenerate all-zero speeds return [`APERTURE_FLOOR`].
pub fn estimate_aperture(
    positives: &[Vec<EmbeddedFrameEvent>],
    negatives: &[(EmbeddedFrameEvent, EmbeddedFrameEvent)],
) -> Result<f64, ConeError> {
    let mut lower = 0.0_f64;
    let mut pairs = 0usize;
    for (seq, events) in positives.iter().enumerate() {
        for (index, pair) in events.windows(2).enumerate() {
            let dt = pair[1].event.t - pair[0].event.t;
            if dt <= 0.0 {
                return Err(ConeError::NonIncreasingTimestamps { seq, index });
            }
            lower = lower.max(spatial_distance(&pair[0].event, &pair[1].event) / dt);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(ConeError::EmptyPositives);
    }
    if lower <= APERTURE_FLOOR {
        return Ok(APERTURE_FLOOR);
    }
    let mut upper = f64::INFINITY;
    for (a, b) in negatives {
        let dt = (b.event.t - a.event.t).abs();
        if dt == 0.0 {
            continue; // instantaneous pair carries no finite speed bound
        }
        let speed = spatial_distance(&a.event, &b.event) / dt;
        if speed > lower {
            upper = upper.min(speed);
        }
    }
    if upper.is_finite() {
        Ok((lower + upper.min(1.1 * lower)) / 2.0)
    } else {
        Ok(1.05 * lower)
    }
}
