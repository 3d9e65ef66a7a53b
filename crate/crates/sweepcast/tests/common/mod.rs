//! Shared builders for the integration suites: spinning-sensor configs,
//! seeded random benchmark scenes, and the well-conditioned constructed
//! family used for the exact-equivalence checks.
//!
//! Each test target uses its own subset.
#![allow(dead_code)]

use sweepcast::geometry::{
    apex_ray_hits, closest_point_distance, surface_crossings, Aabb, Triangle, TriangleDerived,
    Vec3,
};
use sweepcast::scene::{
    Deformation, Mesh, MotionConfig, MotionParams, MotionStream, PoseStream, PreparedScene,
    SceneModel, SceneObject,
};
use sweepcast::sensor::{SensorConfig, SensorSet};
use sweepcast::OrientedFrame;

/// Test-local splitmix generator, independent of the library's streams.
pub struct TestRng(pub u64);

impl TestRng {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.unit() * (hi - lo)
    }
}

/// Full-sphere spinning sensor: `chi` azimuth steps over 360 degrees,
/// `gamma` elevation steps over 180.
pub fn spinning_sensor(origin: Vec3, gamma: usize, chi: usize, d_min: f32, d_max: f32) -> SensorConfig {
    SensorConfig::new(
        origin,
        OrientedFrame::identity(),
        gamma,
        chi,
        2.0 * std::f64::consts::PI / chi as f64,
        std::f64::consts::PI / gamma as f64,
        d_min,
        d_max,
    )
    .unwrap()
}

pub fn spinning_set(origins: &[Vec3], gamma: usize, chi: usize, d_min: f32, d_max: f32) -> SensorSet {
    SensorSet::new(
        origins
            .iter()
            .map(|&o| spinning_sensor(o, gamma, chi, d_min, d_max))
            .collect(),
    )
}

pub const WORLD: Aabb = Aabb {
    min: Vec3 { x: -30.0, y: -30.0, z: -4.0 },
    max: Vec3 { x: 30.0, y: 30.0, z: 16.0 },
};

/// Seeded benchmark scene: half the triangles form a static backdrop soup
/// spread through the world box, the other half one dynamic soup mesh
/// instanced five times with per-axis scale drawn from [0.001, 30] under
/// full-instant motion.
pub fn benchmark_scene(seed: u64, triangles: usize, deformation: Deformation) -> SceneModel {
    let instances = 5u32;
    let backdrop = Mesh::soup(seed ^ 0xbac, triangles / 2, WORLD, 6.0);
    let per_mesh = (triangles / 2).div_ceil(instances as usize).max(1);
    let local = Aabb::from_points([Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)]);
    let mesh = Mesh::soup(seed ^ 0x5eed, per_mesh, local, 0.7);
    SceneModel {
        objects: vec![
            SceneObject { mesh: backdrop, instances: 1, dynamic: false },
            SceneObject { mesh, instances, dynamic: true },
        ],
        motion: MotionStream {
            seed,
            params: MotionParams { world_box: WORLD, scale_range: (0.001, 30.0) },
            config: MotionConfig::FULL_INSTANT,
        },
        deformation,
    }
}

/// Frames sampled for oracle comparison: every tenth frame, floor(n/10)
/// samples per n-frame run.
pub fn sampled_frames(frames: u32) -> Vec<u32> {
    (0..frames / 10).map(|k| k * 10).collect()
}

pub fn assemble(model: &SceneModel, poses: &PoseStream, frame: u32) -> PreparedScene {
    model.frame_scene(poses, frame)
}

// ---------------------------------------------------------------------------
// Constructed well-conditioned family

/// Random triangle at a controlled distance and size, rejected until it is
/// far from every classification boundary of every channel of `config`:
/// vertices clear of each cone by margin, crossing pairs azimuthally
/// separated, no tangent touches, apparent area an order of magnitude over
/// the cull threshold, and closest distance well inside the range window.
fn well_conditioned_triangle(rng: &mut TestRng, config: &SensorConfig) -> Triangle {
    'outer: for _ in 0..10_000 {
        let azim = rng.range(-std::f64::consts::PI, std::f64::consts::PI);
        let elev = rng.range(-0.75, 0.75);
        let dist = rng.range(2.0, 35.0);
        let size = rng.range(0.5, 2.5);
        let center = config.origin
            + Vec3::new(
                (azim.cos() * elev.cos() * dist) as f32,
                (azim.sin() * elev.cos() * dist) as f32,
                (elev.sin() * dist) as f32,
            );
        // Random orientation, biased toward facing the line of sight so
        // the footprint stays healthy.
        let (e1, e2) = random_tangent_basis(rng, center - config.origin);
        let s = size as f32;
        let jitter = |rng: &mut TestRng| rng.range(0.7, 1.3) as f32;
        let mut tri = Triangle::new(
            center + e1 * (s * jitter(rng)),
            center + e2 * (s * jitter(rng)) - e1 * (s * 0.5 * jitter(rng)),
            center - e1 * (s * 0.6 * jitter(rng)) - e2 * (s * 0.9 * jitter(rng)),
        );
        let Some(mut derived) = TriangleDerived::new(&tri) else {
            continue;
        };
        // Wind the face toward the origin so the visibility filter keeps it.
        if (derived.centroid - config.origin).dot(derived.normal) > 0.0 {
            std::mem::swap(&mut tri.v1, &mut tri.v2);
            derived = TriangleDerived::new(&tri).unwrap();
        }

        // Apparent area an order of magnitude above the cull threshold
        // (with headroom), measured like the pipeline does.
        let co = derived.centroid - config.origin;
        let dist_c = co.length() as f64;
        let seen = (co.dot(derived.normal) as f64).abs();
        let apparent = derived.area as f64 * seen / dist_c.powi(3);
        if apparent < 2.5e-5 {
            continue;
        }

        let delta_min = closest_point_distance(config.origin, &tri);
        if delta_min < config.d_min + 0.3 || delta_min > config.d_max - 10.0 {
            continue;
        }

        // Margins against every channel cone.
        let apex = apex_ray_hits(config.origin, config.frame.up, &tri);
        for j in 0..config.gamma_n() {
            let phi = config.elevation(j);
            let sin_phi = phi.sin();
            for v in tri.vertices() {
                let w = v - config.origin;
                let sn = (w.dot(config.frame.up) / w.length()) as f64;
                if (sn - sin_phi).abs() < 2e-3 {
                    continue 'outer;
                }
            }
            let crossings =
                surface_crossings(&tri, config.origin, config.frame.up, phi, delta_min, config.d_max, apex);
            if crossings.full_span {
                continue 'outer;
            }
            match crossings.count() {
                0 => {}
                2 => {
                    let pts = crossings.points();
                    let a = azimuth_of(pts[0], config);
                    let b = azimuth_of(pts[1], config);
                    let mut diff = (a - b).abs();
                    if diff > std::f64::consts::PI {
                        diff = 2.0 * std::f64::consts::PI - diff;
                    }
                    if diff < 2e-3 {
                        continue 'outer;
                    }
                }
                // Tangent touch: too close to a grazing configuration.
                _ => continue 'outer,
            }
        }
        return tri;
    }
    panic!("rejection sampler failed to produce a well-conditioned triangle");
}

fn azimuth_of(p: Vec3, config: &SensorConfig) -> f64 {
    let w = p - config.origin;
    (w.dot(config.frame.right) as f64).atan2(w.dot(config.frame.forward) as f64)
}

fn random_tangent_basis(rng: &mut TestRng, toward: Vec3) -> (Vec3, Vec3) {
    let n = toward.normalized().unwrap();
    let pick = if n.z.abs() < 0.8 { Vec3::Z } else { Vec3::Y };
    let t1 = pick.cross(n).normalized().unwrap();
    let t2 = n.cross(t1).normalized().unwrap();
    // Rotate the in-plane basis by a random angle and lean it out of the
    // tangent plane by up to ~50 degrees.
    let ang = rng.range(0.0, std::f64::consts::PI) as f32;
    let lean = rng.range(-0.6, 0.6) as f32;
    let e1 = (t1 * ang.cos() + t2 * ang.sin()).normalized().unwrap();
    let e2p = (t2 * ang.cos() - t1 * ang.sin() + n * lean).normalized().unwrap();
    (e1, e2p)
}

/// Scene of well-conditioned triangles for the exact-equivalence check.
pub fn tangent_free_scene(seed: u64, count: usize, config: &SensorConfig) -> PreparedScene {
    let mut rng = TestRng(seed);
    let tris: Vec<Triangle> = (0..count)
        .map(|_| well_conditioned_triangle(&mut rng, config))
        .collect();
    PreparedScene::from_triangles(tris)
}
