//! Ground-truth casters and the accuracy comparator.
//!
//! [`brute_force_cast`] tests every ray against every triangle and is the
//! oracle all accuracy claims are measured against. [`ReferenceBvh`] is a
//! deliberately simple median-split tree whose output is bit-identical to
//! brute force; it serves as the static-side backend of the hybrid
//! pipeline and as an informational rebuild-per-frame baseline.

use rayon::prelude::*;

use thiserror::Error;

use crate::geometry::{faces_origin, moller_trumbore, Aabb, DVec3, Facing, Vec3};
use crate::scene::PreparedScene;
use crate::sensor::{HitBuffer, SensorSet};

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("hit buffers have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Tests every ray of every sensor against every triangle under the given
/// facing convention. Nearest hit per ray within the sensor's detection
/// range; shares the encoding and min-merge semantics of the pipeline.
pub fn brute_force_cast(scene: &PreparedScene, set: &SensorSet, facing: Facing) -> HitBuffer {
    let buffer = HitBuffer::new(set.total_rays());
    for (config, grid) in set.iter() {
        let visible: Vec<bool> = scene
            .derived
            .iter()
            .map(|d| faces_origin(d, config.origin, facing))
            .collect();
        (0..config.ray_count()).into_par_iter().for_each(|flat| {
            let dir = grid.dir_flat(flat);
            let mut best = f32::INFINITY;
            for (idx, tri) in scene.triangles.iter().enumerate() {
                if !visible[idx] {
                    continue;
                }
                if let Some(t) = moller_trumbore(config.origin, dir, tri) {
                    if t >= config.d_min && t <= config.d_max && t < best {
                        best = t;
                    }
                }
            }
            if best.is_finite() {
                buffer.record(config.ray_offset + flat, best);
            }
        });
    }
    buffer
}

// ---------------------------------------------------------------------------
// Reference BVH

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    /// Leaf when `count > 0`: primitive range [start, start+count) in
    /// `order`. Interior otherwise: child node indices in `left`/`right`.
    left: u32,
    right: u32,
    start: u32,
    count: u32,
}

/// Static-scene tree of nested axis-aligned boxes, median split over
/// triangle centroids along the longest axis, rebuilt from scratch when
/// geometry changes. Exact: it only prunes boxes a ray provably misses.
#[derive(Debug)]
pub struct ReferenceBvh {
    scene: PreparedScene,
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

impl ReferenceBvh {
    /// Builds over a non-empty triangle set.
    pub fn build(scene: PreparedScene) -> ReferenceBvh {
        assert!(!scene.is_empty(), "reference tree needs at least one triangle");
        let centroids: Vec<Vec3> = scene.derived.iter().map(|d| d.centroid).collect();
        let tri_bounds: Vec<Aabb> = scene
            .triangles
            .iter()
            .map(|t| Aabb::from_points(t.vertices()))
            .collect();
        let mut order: Vec<u32> = (0..scene.len() as u32).collect();
        let mut nodes = Vec::new();
        build_node(&mut nodes, &mut order, 0, scene.len(), &centroids, &tri_bounds);
        ReferenceBvh { scene, nodes, order }
    }

    pub fn scene(&self) -> &PreparedScene {
        &self.scene
    }

    /// Casts every sensor ray through the tree. Output is bit-identical to
    /// [`brute_force_cast`] on the same scene.
    pub fn cast(&self, set: &SensorSet, facing: Facing) -> HitBuffer {
        let buffer = HitBuffer::new(set.total_rays());
        for (config, grid) in set.iter() {
            let visible: Vec<bool> = self
                .scene
                .derived
                .iter()
                .map(|d| faces_origin(d, config.origin, facing))
                .collect();
            (0..config.ray_count()).into_par_iter().for_each(|flat| {
                let dir = grid.dir_flat(flat);
                let best = self.nearest_hit(config.origin, dir, config.d_min, config.d_max, &visible);
                if best.is_finite() {
                    buffer.record(config.ray_offset + flat, best);
                }
            });
        }
        buffer
    }

    fn nearest_hit(&self, origin: Vec3, dir: Vec3, d_min: f32, d_max: f32, visible: &[bool]) -> f32 {
        let o = DVec3::from(origin);
        let d = DVec3::from(dir);
        let inv = DVec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut best = f32::INFINITY;
        let mut stack: Vec<u32> = vec![0];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            let limit = (best.min(d_max) as f64) + 1e-6;
            if !slab_overlap(&node.bounds, o, inv, limit) {
                continue;
            }
            if node.count > 0 {
                for k in node.start..node.start + node.count {
                    let idx = self.order[k as usize] as usize;
                    if !visible[idx] {
                        continue;
                    }
                    if let Some(t) = moller_trumbore(origin, dir, &self.scene.triangles[idx]) {
                        if t >= d_min && t <= d_max && t < best {
                            best = t;
                        }
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        best
    }
}

/// Conservative ray/box overlap on `[0, limit]`, padded so rounding can
/// only cause extra triangle tests, never a pruned hit.
fn slab_overlap(b: &Aabb, o: DVec3, inv: DVec3, limit: f64) -> bool {
    let mut t0 = 0.0f64;
    let mut t1 = limit;
    for axis in 0..3 {
        let (lo, hi, oa, ia) = match axis {
            0 => (b.min.x as f64, b.max.x as f64, o.x, inv.x),
            1 => (b.min.y as f64, b.max.y as f64, o.y, inv.y),
            _ => (b.min.z as f64, b.max.z as f64, o.z, inv.z),
        };
        let (mut near, mut far) = ((lo - oa) * ia, (hi - oa) * ia);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        if near.is_nan() || far.is_nan() {
            // Ray parallel to the slab with the origin on a face plane.
            continue;
        }
        t0 = t0.max(near - 1e-9);
        t1 = t1.min(far + 1e-9);
        if t0 > t1 {
            return false;
        }
    }
    true
}

fn build_node(
    nodes: &mut Vec<BvhNode>,
    order: &mut [u32],
    start: usize,
    count: usize,
    centroids: &[Vec3],
    tri_bounds: &[Aabb],
) -> u32 {
    let slice = &order[start..start + count];
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &i in slice.iter() {
        bounds = bounds.union(&tri_bounds[i as usize]);
        cbounds.extend(centroids[i as usize]);
    }
    let id = nodes.len() as u32;
    nodes.push(BvhNode { bounds, left: 0, right: 0, start: start as u32, count: count as u32 });
    if count <= LEAF_SIZE {
        return id;
    }
    let axis = cbounds.longest_axis();
    let mid = count / 2;
    let coord = |i: u32| match axis {
        0 => centroids[i as usize].x,
        1 => centroids[i as usize].y,
        _ => centroids[i as usize].z,
    };
    order[start..start + count]
        .select_nth_unstable_by(mid, |&a, &b| coord(a).total_cmp(&coord(b)));
    let left = build_node(nodes, order, start, mid, centroids, tri_bounds);
    let right = build_node(nodes, order, start + mid, count - mid, centroids, tri_bounds);
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    nodes[id as usize].count = 0;
    id
}

// ---------------------------------------------------------------------------
// Comparator

/// Outcome of comparing a candidate buffer against a reference: per-ray
/// match counts plus the miss causes. The match fraction is taken over
/// rays where the reference records a hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchReport {
    pub rays_compared: usize,
    pub matched: usize,
    pub reference_hits: usize,
    pub matched_hits: usize,
    pub match_fraction: f64,
    pub miss_vs_hit: usize,
    pub hit_vs_miss: usize,
    pub distance_mismatch: usize,
}

/// Compares two buffers ray by ray: a ray matches when both miss, or both
/// hit with an absolute difference within `tolerance` (inclusive).
pub fn compare_hit_buffers(
    reference: &HitBuffer,
    candidate: &HitBuffer,
    tolerance: f32,
) -> Result<MatchReport, CompareError> {
    if reference.len() != candidate.len() {
        return Err(CompareError::LengthMismatch(reference.len(), candidate.len()));
    }
    let mut report = MatchReport {
        rays_compared: reference.len(),
        matched: 0,
        reference_hits: 0,
        matched_hits: 0,
        match_fraction: 1.0,
        miss_vs_hit: 0,
        hit_vs_miss: 0,
        distance_mismatch: 0,
    };
    for i in 0..reference.len() {
        let a = reference.distance(i);
        let b = candidate.distance(i);
        match (a.is_finite(), b.is_finite()) {
            (false, false) => report.matched += 1,
            (false, true) => report.miss_vs_hit += 1,
            (true, false) => {
                report.reference_hits += 1;
                report.hit_vs_miss += 1;
            }
            (true, true) => {
                report.reference_hits += 1;
                if (a - b).abs() <= tolerance {
                    report.matched += 1;
                    report.matched_hits += 1;
                } else {
                    report.distance_mismatch += 1;
                }
            }
        }
    }
    if report.reference_hits > 0 {
        report.match_fraction = report.matched_hits as f64 / report.reference_hits as f64;
    }
    Ok(report)
}
