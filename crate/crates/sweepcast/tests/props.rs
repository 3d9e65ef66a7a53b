//! Property suites for the invariants that must hold on arbitrary
//! inputs, not just the seeded acceptance scenes.

mod common;

use proptest::prelude::*;

use common::spinning_set;
use sweepcast::geometry::{
    apex_ray_hits, channel_index_of_point, closest_point_distance, ray_index_of_point,
    surface_crossings, surface_intersects, Facing, OrientedFrame, Triangle, TriangleDerived,
    Vec3,
};
use sweepcast::pipeline::{
    classify_span, origin_filters, predict_channel_span, predict_ray_span_fast, SpanClass,
    Thresholds,
};
use sweepcast::reference::brute_force_cast;
use sweepcast::scene::PreparedScene;
use sweepcast::sensor::{decode_distance, encode_raw, global_ray_index, HitBuffer, MISS};

fn finite_component() -> impl Strategy<Value = f32> {
    (-50.0f32..50.0).prop_filter("nonzero-ish", |v| v.is_finite())
}

fn triangle() -> impl Strategy<Value = Triangle> {
    (
        prop::array::uniform3(finite_component()),
        prop::array::uniform3(finite_component()),
        prop::array::uniform3(finite_component()),
    )
        .prop_map(|(a, b, c)| {
            Triangle::new(
                Vec3::new(a[0], a[1], a[2]),
                Vec3::new(b[0], b[1], b[2]),
                Vec3::new(c[0], c[1], c[2]),
            )
        })
}

fn nonneg_f32() -> impl Strategy<Value = f32> {
    proptest::num::u32::ANY.prop_map(|u| f32::from_bits(u & 0x7fff_ffff)).prop_filter("no NaN", |v| !v.is_nan())
}

proptest! {
    #[test]
    fn encode_round_trips_and_orders(a in nonneg_f32(), b in nonneg_f32()) {
        prop_assert_eq!(decode_distance(encode_raw(a)).to_bits(), a.to_bits());
        prop_assert_eq!(decode_distance(encode_raw(b)).to_bits(), b.to_bits());
        if a < b {
            prop_assert!(encode_raw(a) < encode_raw(b));
        } else if a > b {
            prop_assert!(encode_raw(a) > encode_raw(b));
        } else {
            prop_assert_eq!(encode_raw(a), encode_raw(b));
        }
    }

    #[test]
    fn grid_indexing_round_trips(
        j in 1usize..15, i in 1usize..63,
        kappa in prop::sample::select(vec![0.5f32, 10.0, 500.0]),
        yaw in -3.0f64..3.0,
    ) {
        let frame = OrientedFrame::from_forward_up(
            Vec3::new(yaw.cos() as f32, yaw.sin() as f32, 0.0),
            Vec3::Z,
        ).unwrap();
        let origin = Vec3::new(1.0, -2.0, 0.5);
        let (gamma, chi) = (16usize, 64usize);
        let dphi = std::f64::consts::PI / gamma as f64;
        let dtheta = 2.0 * std::f64::consts::PI / chi as f64;
        let phi0 = -((gamma / 2) as f64) * dphi;
        let theta0 = -((chi / 2) as f64) * dtheta;
        let dir = sweepcast::geometry::ray_direction(theta0 + i as f64 * dtheta, phi0 + j as f64 * dphi, &frame);
        let p = origin + dir * kappa;
        prop_assert_eq!(channel_index_of_point(p, origin, &frame, phi0, dphi, gamma).unwrap(), j);
        prop_assert_eq!(ray_index_of_point(p, origin, &frame, theta0, dtheta, chi).unwrap(), i);
    }

    #[test]
    fn surface_bool_equals_full(tri in triangle(), phi in -1.5f64..1.5) {
        prop_assume!(TriangleDerived::new(&tri).is_some());
        let origin = Vec3::ZERO;
        let up = Vec3::Z;
        let apex = apex_ray_hits(origin, up, &tri);
        let delta = closest_point_distance(origin, &tri);
        let full = surface_crossings(&tri, origin, up, phi, delta, 80.0, apex);
        let fast = surface_intersects(&tri, origin, up, phi, delta, 80.0, apex);
        prop_assert_eq!(fast, full.intersects());
        // Reported crossings satisfy the surface membership residual.
        for p in full.points() {
            let len = (*p - origin).length() as f64;
            prop_assert!(
                sweepcast::geometry::surface_residual(*p, origin, up, phi) <= 1e-3 * len.max(1e-6)
            );
        }
    }

    #[test]
    fn buffer_merge_is_associative_and_commutative(
        records in prop::collection::vec((0usize..64, 0.01f32..100.0), 0..120)
    ) {
        let bufs: Vec<HitBuffer> = (0..3)
            .map(|k| {
                let b = HitBuffer::new(64);
                for (n, &(i, d)) in records.iter().enumerate() {
                    if n % 3 == k {
                        b.record(i, d);
                    }
                }
                b
            })
            .collect();
        let left = bufs[0].merge_min(&bufs[1]).merge_min(&bufs[2]);
        let right = bufs[0].merge_min(&bufs[1].merge_min(&bufs[2]));
        let swapped = bufs[2].merge_min(&bufs[0]).merge_min(&bufs[1]);
        prop_assert_eq!(left.to_encoded(), right.to_encoded());
        prop_assert_eq!(left.to_encoded(), swapped.to_encoded());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every oracle hit of an inline-classified triangle lies inside its
    /// predicted index window.
    #[test]
    fn inline_span_is_conservative(tri in triangle()) {
        prop_assume!(TriangleDerived::new(&tri).is_some());
        let derived = TriangleDerived::new(&tri).unwrap();
        let set = spinning_set(&[Vec3::ZERO], 16, 64, 0.05, 200.0);
        let (config, _) = set.get(0);
        let thresholds = Thresholds { channel_limit: 16, ray_limit: 64, ..Thresholds::default() };

        let Ok(delta) = origin_filters(&tri, &derived, config, &thresholds, Facing::Toward) else {
            return Ok(());
        };
        let apex = apex_ray_hits(config.origin, config.frame.up, &tri);
        let Some((c_from, c_to)) = predict_channel_span(&tri, config, delta, apex) else {
            return Ok(());
        };
        let (all_cw, Some((r_from, r_to))) = predict_ray_span_fast(&tri, config) else {
            return Ok(());
        };
        let channel_span = (c_to - c_from) as usize + 1;
        let ray_span = (r_to - r_from) as usize + 1;
        if classify_span(all_cw, channel_span, ray_span, &thresholds) != SpanClass::Inline {
            return Ok(());
        }

        let scene = PreparedScene::from_triangles([tri]);
        let oracle = brute_force_cast(&scene, &set, Facing::Toward);
        for flat in 0..set.total_rays() {
            if oracle.load(flat) == MISS {
                continue;
            }
            let j = flat / config.chi_n();
            let i = flat % config.chi_n();
            prop_assert!(
                (c_from as usize..=c_to as usize).contains(&j),
                "hit channel {} outside [{}, {}]", j, c_from, c_to
            );
            prop_assert!(
                (r_from as usize..=r_to as usize).contains(&i),
                "hit ray {} outside [{}, {}]", i, r_from, r_to
            );
        }
    }

    /// The global index map stays within each sensor's slice of the
    /// buffer.
    #[test]
    fn global_index_stays_in_range(
        j in 0usize..32, i in 0usize..256, r_from in 0usize..256
    ) {
        let chi = 256usize;
        let offset = 32 * 256;
        let g = global_ray_index(j, i, r_from, chi, offset);
        prop_assert!(g >= offset);
        prop_assert!(g < offset + 32 * chi);
        prop_assert_eq!((g - offset) / chi, j);
    }
}
