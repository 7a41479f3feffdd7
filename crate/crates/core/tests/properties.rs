//! Randomized invariant checks over the geometry and causal-order
//! primitives. Constructive generators keep the exact properties exact:
//! points built inside a cone with slack must be contained at zero
//! tolerance, so any failure here is a real defect, not float noise.

use lightcone_core::cones::{contains, LightCone};
use lightcone_core::geometry::{
    self, Event, GeometryError, IntervalClass, PoincarePoint,
};
use proptest::prelude::*;

const DIMS: std::ops::RangeInclusive<usize> = 1..=5;

fn curvature() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.5), Just(1.0), Just(2.0)]
}

proptest! {
    #[test]
    fn minkowski_inner_is_bilinear(
        dim in DIMS,
        (alpha, beta) in (-3.0..3.0f64, -3.0..3.0f64),
        seed in any::<u64>(),
    ) {
        let mut gen = lightcone_core::wrapped::RandomState::new(seed);
        let mut ev = |dim: usize| {
            Event::new(gen.range(-2.0, 2.0), (0..dim).map(|_| gen.range(-2.0, 2.0)).collect())
        };
        let (a, b, c) = (ev(dim), ev(dim), ev(dim));
        let combo = Event::new(
            alpha * a.t + beta * b.t,
            a.x.iter().zip(&b.x).map(|(p, q)| alpha * p + beta * q).collect(),
        );
        let lhs = geometry::minkowski_inner(&combo, &c).unwrap();
        let rhs = alpha * geometry::minkowski_inner(&a, &c).unwrap()
            + beta * geometry::minkowski_inner(&b, &c).unwrap();
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        prop_assert!((lhs - rhs).abs() < 1e-12 * scale);
    }

    #[test]
    fn classification_follows_the_interval_sign(
        dim in DIMS,
        t in -3.0..3.0f64,
        raw in prop::collection::vec(-3.0..3.0f64, 5),
    ) {
        let a = Event::new(0.0, vec![0.0; dim]);
        let b = Event::new(t, raw[..dim].to_vec());
        let q = geometry::interval(&a, &b).unwrap();
        let tol = geometry::default_interval_tol(&a, &b);
        let class = geometry::interval_classify(&a, &b, tol).unwrap();
        match class {
            IntervalClass::Timelike => prop_assert!(q < -tol),
            IntervalClass::Spacelike => prop_assert!(q > tol),
            IntervalClass::Lightlike => prop_assert!(q.abs() <= tol),
        }
    }

    #[test]
    fn straight_timelike_paths_have_closed_form_proper_time(
        dim in DIMS,
        dt in 0.1..5.0f64,
        raw in prop::collection::vec(-1.0..1.0f64, 5),
        frac in 0.0..0.9f64,
        splits in 1..6usize,
    ) {
        // Spatial displacement strictly inside the light cone: |dx| = frac·dt.
        let norm = raw[..dim].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let dx: Vec<f64> = raw[..dim].iter().map(|v| v * frac * dt / norm).collect();
        let want = (dt * dt - (frac * dt).powi(2)).sqrt();

        // Subdivide the straight segment; proper time is additive.
        let mut path = Vec::new();
        for k in 0..=splits {
            let lam = k as f64 / splits as f64;
            path.push(Event::new(lam * dt, dx.iter().map(|v| lam * v).collect()));
        }
        let got = geometry::proper_time(&path, 1e-9).unwrap();
        prop_assert!((got - want).abs() < 1e-12 * (1.0 + want));
    }

    #[test]
    fn spacelike_segments_are_rejected(
        dim in DIMS,
        dt in 0.0..1.0f64,
        margin in 1.5..4.0f64,
    ) {
        // |dx| = margin·dt (+1 when dt = 0): clearly spacelike.
        let mut dx = vec![0.0; dim];
        dx[0] = margin * dt + 1.0;
        let path = [Event::new(0.0, vec![0.0; dim]), Event::new(dt, dx)];
        let rejected = matches!(
            geometry::proper_time(&path, 1e-9),
            Err(GeometryError::NonTimelikeSegment { index: 0 })
        );
        prop_assert!(rejected);
    }

    #[test]
    fn exp_log_round_trip(
        dim in DIMS,
        c in curvature(),
        base_r in 0.0..0.7f64,
        tangent_raw in prop::collection::vec(-1.0..1.0f64, 5),
        tangent_len in 1e-3..0.9f64,
    ) {
        let base = {
            let mut raw = tangent_raw.clone();
            raw.rotate_left(1);
            let norm = raw[..dim].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            PoincarePoint::new(
                raw[..dim].iter().map(|v| v * base_r / (norm * c.sqrt())).collect(),
                c,
            ).unwrap()
        };
        let norm = tangent_raw[..dim].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let u: Vec<f64> = tangent_raw[..dim].iter().map(|v| v * tangent_len / norm).collect();

        let tip = geometry::exp_map(&base, &u);
        let back = geometry::log_map(&base, &tip);
        for (got, want) in back.iter().zip(&u) {
            prop_assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        // Arclength normalization: the tangent norm is the geodesic distance.
        let d = geometry::poincare_distance(&base, &tip).unwrap();
        prop_assert!((d - tangent_len).abs() < 1e-8);
    }

    #[test]
    fn poincare_distance_satisfies_the_triangle_inequality(
        dim in DIMS,
        c in curvature(),
        seed in any::<u64>(),
    ) {
        let mut gen = lightcone_core::wrapped::RandomState::new(seed);
        let mut pt = |dim: usize| {
            let raw: Vec<f64> = (0..dim).map(|_| gen.range(-1.0, 1.0)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            let r = gen.range(0.0, 0.93);
            PoincarePoint::new(raw.iter().map(|v| v * r / (norm * c.sqrt())).collect(), c).unwrap()
        };
        let (x, y, z) = (pt(dim), pt(dim), pt(dim));
        let dxz = geometry::poincare_distance(&x, &z).unwrap();
        let dxy = geometry::poincare_distance(&x, &y).unwrap();
        let dyz = geometry::poincare_distance(&y, &z).unwrap();
        prop_assert!(dxz <= dxy + dyz + 1e-9);
    }

    #[test]
    fn mobius_left_cancellation(
        dim in DIMS,
        c in curvature(),
        seed in any::<u64>(),
    ) {
        let mut gen = lightcone_core::wrapped::RandomState::new(seed);
        let mut pt = |dim: usize| {
            let raw: Vec<f64> = (0..dim).map(|_| gen.range(-1.0, 1.0)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            let r = gen.range(0.0, 0.9);
            PoincarePoint::new(raw.iter().map(|v| v * r / (norm * c.sqrt())).collect(), c).unwrap()
        };
        let (x, y) = (pt(dim), pt(dim));
        let neg_x = PoincarePoint::new(x.coords().iter().map(|v| -v).collect(), c).unwrap();
        let sum = geometry::mobius_add(&x, &y).unwrap();
        let back = geometry::mobius_add(&neg_x, &sum).unwrap();
        for (got, want) in back.coords().iter().zip(y.coords()) {
            prop_assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn hyperboloid_model_agrees_with_the_ball(
        dim in DIMS,
        seed in any::<u64>(),
    ) {
        let mut gen = lightcone_core::wrapped::RandomState::new(seed);
        let mut pt = |dim: usize| {
            let raw: Vec<f64> = (0..dim).map(|_| gen.range(-1.0, 1.0)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            let r = gen.range(0.0, 0.95);
            PoincarePoint::new(raw.iter().map(|v| v * r / norm).collect(), 1.0).unwrap()
        };
        let (x, y) = (pt(dim), pt(dim));
        let (wx, wy) = (geometry::to_lorentz(&x), geometry::to_lorentz(&y));
        let back = geometry::to_poincare(&wx);
        for (got, want) in back.coords().iter().zip(x.coords()) {
            prop_assert!((got - want).abs() < 1e-9);
        }
        let dl = geometry::lorentz_distance(&wx, &wy);
        let db = geometry::poincare_distance(&x, &y).unwrap();
        prop_assert!((dl - db).abs() < 1e-7);
    }

    #[test]
    fn cone_membership_is_transitive(
        dim in DIMS,
        slope in 0.05..3.0f64,
        seed in any::<u64>(),
    ) {
        let mut gen = lightcone_core::wrapped::RandomState::new(seed);
        let apex = Event::new(
            gen.range(-1.0, 1.0),
            (0..dim).map(|_| gen.range(-1.0, 1.0)).collect(),
        );
        // Reach a strictly interior point of a cone: random dt, offset of
        // norm at most 0.9·slope·dt.
        let mut interior = |base: &Event| {
            let dt = gen.range(0.0, 2.0);
            let raw: Vec<f64> = (0..dim).map(|_| gen.range(-1.0, 1.0)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            let reach = gen.range(0.0, 0.9) * slope * dt;
            Event::new(
                base.t + dt,
                base.x.iter().zip(&raw).map(|(b, r)| b + r * reach / norm).collect(),
            )
        };
        let b = interior(&apex);
        let c = interior(&b);
        let cone = LightCone::future(apex, slope).unwrap();
        prop_assert!(contains(&cone, &b, 0.0));
        prop_assert!(contains(&cone, &c, 0.0), "two causal hops left the cone");
    }

    #[test]
    fn cone_interiors_are_convex(
        dim in DIMS,
        slope in 0.05..3.0f64,
        lambda in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let mut gen = lightcone_core::wrapped::RandomState::new(seed);
        let apex = Event::new(0.0, (0..dim).map(|_| gen.range(-1.0, 1.0)).collect());
        let mut interior = |base: &Event| {
            let dt = gen.range(0.0, 2.0);
            let raw: Vec<f64> = (0..dim).map(|_| gen.range(-1.0, 1.0)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            let reach = gen.range(0.0, 0.9) * slope * dt;
            Event::new(
                base.t + dt,
                base.x.iter().zip(&raw).map(|(b, r)| b + r * reach / norm).collect(),
            )
        };
        let p = interior(&apex);
        let q = interior(&apex);
        let mix = Event::new(
            lambda * p.t + (1.0 - lambda) * q.t,
            p.x.iter().zip(&q.x).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect(),
        );
        let cone = LightCone::future(apex, slope).unwrap();
        prop_assert!(contains(&cone, &p, 0.0));
        prop_assert!(contains(&cone, &q, 0.0));
        prop_assert!(contains(&cone, &mix, 0.0), "convex combination escaped");
    }

    #[test]
    fn time_reflection_swaps_future_and_past(
        dim in DIMS,
        slope in 0.05..3.0f64,
        seed in any::<u64>(),
    ) {
        let mut gen = lightcone_core::wrapped::RandomState::new(seed);
        let apex_x: Vec<f64> = (0..dim).map(|_| gen.range(-1.0, 1.0)).collect();
        let apex_t = gen.range(-1.0, 1.0);
        let e = Event::new(
            gen.range(-3.0, 3.0),
            (0..dim).map(|_| gen.range(-3.0, 3.0)).collect(),
        );
        let future = LightCone::future(Event::new(apex_t, apex_x.clone()), slope).unwrap();
        let past = LightCone::past(Event::new(-apex_t, apex_x), slope).unwrap();
        let mirrored = Event::new(-e.t, e.x.clone());
        prop_assert_eq!(contains(&future, &e, 1e-12), contains(&past, &mirrored, 1e-12));
    }

    #[test]
    fn wrapped_samples_stay_on_the_ball(
        dim in 1..=4usize,
        c in curvature(),
        sigma in 0.05..2.0f64,
        seed in any::<u64>(),
    ) {
        use lightcone_core::wrapped::{RandomState, WrappedNormal};
        let q = WrappedNormal::standard(dim, c);
        let mut rng = RandomState::new(seed);
        let scaled = WrappedNormal::new(
            q.mu().clone(),
            vec![sigma; dim],
        ).unwrap();
        let z = scaled.sample(&mut rng);
        let norm2: f64 = z.coords().iter().map(|v| v * v).sum();
        prop_assert!(c * norm2 < 1.0);
        prop_assert!(scaled.log_density(&z).unwrap().is_finite());
    }
}
