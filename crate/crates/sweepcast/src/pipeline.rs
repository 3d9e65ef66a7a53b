//! The two-pass caster.
//!
//! Early pass, per (triangle, origin): three cheap filters, a channel-span
//! prediction via binary search over the sweep-surface predicate, a
//! conservative ray span from vertex projections, and a span-size
//! classification. Small-span triangles are intersected inline; large-span
//! ones land in a deferred list. The late pass revisits deferred entries
//! per channel with the full surface test for exact span endpoints,
//! resolves the wrap-around arc where needed, and intersects the exact
//! span. Both passes write through the same min-merge hit buffer, so the
//! result is independent of scheduling.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use rayon::prelude::*;

use crate::geometry::{
    apex_ray_hits, azimuth_of_point, channel_index_of_point, dsub, faces_origin, moller_trumbore,
    ray_direction, ray_index_of_azimuth, reflect_across_axis, surface_crossings,
    surface_intersects, ApexHits, DVec3, Facing, Triangle, TriangleDerived, Vec3, GUARD_EPS,
};
use crate::reference::ReferenceBvh;
use crate::scene::PreparedScene;
use crate::sensor::{global_ray_index, HitBuffer, RayGrid, SensorConfig, SensorSet};

/// Tunable pipeline parameters with the defaults used throughout the
/// benchmarks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Largest predicted channel span resolved inline.
    pub channel_limit: u16,
    /// Largest predicted ray span resolved inline.
    pub ray_limit: u16,
    /// Apparent-area cull threshold (square metres at unit distance).
    pub min_apparent_area: f32,
    /// Face-alignment epsilon for the arc-midpoint plane test.
    pub face_epsilon: f32,
    /// Deferred-list size above which the counters raise a warning flag.
    /// The list itself grows without bound on this backend.
    pub deferred_soft_cap: usize,
}

impl Default for Thresholds {
    fn default() -> Thresholds {
        Thresholds {
            channel_limit: 64,
            ray_limit: 64,
            min_apparent_area: 1e-6,
            face_epsilon: 1e-4,
            deferred_soft_cap: 800_000,
        }
    }
}

/// Predicted reachable index window of one triangle from one origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanRect {
    pub c_from: u16,
    pub c_to: u16,
    pub r_from: u16,
    pub r_to: u16,
}

impl SpanRect {
    pub fn channel_span(&self) -> usize {
        (self.c_to - self.c_from) as usize + 1
    }

    /// Ray count of the clockwise arc from `r_from` to `r_to`, wrapping
    /// modulo `chi_n`.
    pub fn ray_span(&self, chi_n: usize) -> usize {
        if self.r_from <= self.r_to {
            (self.r_to - self.r_from) as usize + 1
        } else {
            chi_n - (self.r_from - self.r_to) as usize + 1
        }
    }
}

/// Why the early filters rejected a (triangle, origin) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterReject {
    BackFace,
    ApparentArea,
    Range,
}

/// Span-size classification: small spans run inline in the early pass,
/// large ones defer to the late pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanClass {
    Inline,
    Deferred,
}

// ---------------------------------------------------------------------------
// Counters

/// Thread-shared accumulation state for one frame; snapshot into
/// [`CastCounters`] once the passes finish.
#[derive(Default)]
pub struct LiveCounters {
    rejected_backface: AtomicU64,
    rejected_area: AtomicU64,
    rejected_range: AtomicU64,
    rejected_no_channel: AtomicU64,
    inline_pairs: AtomicU64,
    deferred_pairs: AtomicU64,
    inline_tests: AtomicU64,
    late_tests: AtomicU64,
    apex_tests: AtomicU64,
    arc_tiebreak_tests: AtomicU64,
    soft_cap_exceeded: AtomicBool,
}

impl LiveCounters {
    pub fn snapshot(&self) -> CastCounters {
        CastCounters {
            rejected_backface: self.rejected_backface.load(Ordering::Relaxed),
            rejected_area: self.rejected_area.load(Ordering::Relaxed),
            rejected_range: self.rejected_range.load(Ordering::Relaxed),
            rejected_no_channel: self.rejected_no_channel.load(Ordering::Relaxed),
            inline_pairs: self.inline_pairs.load(Ordering::Relaxed),
            deferred_pairs: self.deferred_pairs.load(Ordering::Relaxed),
            deferred_entries: 0,
            inline_tests: self.inline_tests.load(Ordering::Relaxed),
            late_tests: self.late_tests.load(Ordering::Relaxed),
            apex_tests: self.apex_tests.load(Ordering::Relaxed),
            arc_tiebreak_tests: self.arc_tiebreak_tests.load(Ordering::Relaxed),
            brute_force_bound: 0,
            soft_cap_exceeded: self.soft_cap_exceeded.load(Ordering::Relaxed),
        }
    }
}

/// Workload accounting for one frame. `intersection_tests()` counts every
/// ray/triangle evaluation the pipeline performed, including the auxiliary
/// apex and arc-tiebreak probes; it can never exceed `brute_force_bound`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CastCounters {
    pub rejected_backface: u64,
    pub rejected_area: u64,
    pub rejected_range: u64,
    pub rejected_no_channel: u64,
    /// (triangle, origin) pairs resolved inline.
    pub inline_pairs: u64,
    /// (triangle, origin) pairs pushed to the deferred list.
    pub deferred_pairs: u64,
    /// Triangles with at least one deferred origin.
    pub deferred_entries: u64,
    pub inline_tests: u64,
    pub late_tests: u64,
    pub apex_tests: u64,
    pub arc_tiebreak_tests: u64,
    /// Rays x triangles across all origins.
    pub brute_force_bound: u64,
    pub soft_cap_exceeded: bool,
}

impl CastCounters {
    pub fn intersection_tests(&self) -> u64 {
        self.inline_tests + self.late_tests + self.apex_tests + self.arc_tiebreak_tests
    }
}

// ---------------------------------------------------------------------------
// Deferred list

const FLAG_ACTIVE: u8 = 1;
const FLAG_APEX_UP: u8 = 2;
const FLAG_APEX_DOWN: u8 = 4;
const FLAG_ALL_CW: u8 = 8;

/// Per-origin fields of a deferred entry, precomputed by the early pass so
/// the late pass never re-derives them.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OriginSlot {
    pub c_from: u16,
    pub c_to: u16,
    pub delta_min: f32,
    flags: u8,
}

impl OriginSlot {
    pub fn active(&self) -> bool {
        self.flags & FLAG_ACTIVE != 0
    }

    pub fn all_cw(&self) -> bool {
        self.flags & FLAG_ALL_CW != 0
    }

    pub fn apex(&self) -> ApexHits {
        ApexHits { up: self.flags & FLAG_APEX_UP != 0, down: self.flags & FLAG_APEX_DOWN != 0 }
    }
}

/// One deferred triangle: its index plus one slot per origin. Only
/// origin-active slots carry meaning; no geometry is duplicated here.
#[derive(Debug, Clone, PartialEq)]
pub struct DeferredEntry {
    pub triangle: u32,
    pub origins: Vec<OriginSlot>,
}

// ---------------------------------------------------------------------------
// Early-pass steps

/// Step 1: back-face, apparent-area, and range filters, in that order. On
/// pass, returns the closest-point distance for reuse by later steps.
pub fn origin_filters(
    tri: &Triangle,
    derived: &TriangleDerived,
    config: &SensorConfig,
    thresholds: &Thresholds,
    facing: Facing,
) -> Result<f32, FilterReject> {
    if !faces_origin(derived, config.origin, facing) {
        return Err(FilterReject::BackFace);
    }
    let co = dsub(derived.centroid, config.origin);
    let seen = co.dot(derived.normal.into()).abs();
    let lhs = (derived.area as f64) * seen;
    let dist2 = co.length_squared().max(GUARD_EPS);
    let eps = thresholds.min_apparent_area as f64;
    if lhs * lhs < eps * eps * dist2 * dist2 * dist2 {
        return Err(FilterReject::ApparentArea);
    }
    let delta_min = crate::geometry::closest_point_distance(config.origin, tri);
    if delta_min > config.d_max {
        return Err(FilterReject::Range);
    }
    // Blind zone: rejected only when the whole triangle sits inside it.
    // The farthest point of a triangle from the origin is a vertex. A
    // triangle merely grazing the blind zone stays; the per-hit range
    // clamp discards its near hits exactly like the reference casters.
    if delta_min < config.d_min {
        let all_inside = tri
            .vertices()
            .iter()
            .all(|v| dsub(*v, config.origin).length() < config.d_min as f64);
        if all_inside {
            return Err(FilterReject::Range);
        }
    }
    Ok(delta_min)
}

/// Step 2: contiguous channel interval whose sweep surface crosses the
/// triangle, bracketed by two binary searches around a seed probe.
///
/// The seed is the ceiling midpoint of the vertex elevation indices; if
/// its probe fails, probes gallop outward by doubling offsets within the
/// vertex index range. No surviving probe means the triangle is discarded.
pub fn predict_channel_span(
    tri: &Triangle,
    config: &SensorConfig,
    delta_min: f32,
    apex: ApexHits,
) -> Option<(u16, u16)> {
    let gamma = config.gamma_n();
    let probe = |j: usize| {
        surface_intersects(
            tri,
            config.origin,
            config.frame.up,
            config.elevation(j),
            delta_min,
            config.d_max,
            apex,
        )
    };

    let mut v_lo = gamma - 1;
    let mut v_hi = 0usize;
    for v in tri.vertices() {
        let idx = channel_index_of_point(
            v,
            config.origin,
            &config.frame,
            config.angles.phi0,
            config.angles.dphi,
            gamma,
        )
        .unwrap_or(gamma / 2);
        v_lo = v_lo.min(idx);
        v_hi = v_hi.max(idx);
    }
    let mid = (v_lo + v_hi).div_ceil(2);

    // Index rounding can push the intersecting interval one channel past
    // the vertex range, so the gallop gets two channels of slack. With the
    // slack, a failed midpoint probe always has a true neighbour at
    // distance one whenever any channel intersects at all.
    let g_lo = v_lo.saturating_sub(2);
    let g_hi = (v_hi + 2).min(gamma - 1);

    let seed = if probe(mid) {
        Some(mid)
    } else {
        let mut found = None;
        let mut step = 1usize;
        loop {
            let lo_in = mid >= g_lo + step;
            let hi_in = mid + step <= g_hi;
            if !lo_in && !hi_in {
                break;
            }
            if lo_in && probe(mid - step) {
                found = Some(mid - step);
                break;
            }
            if hi_in && probe(mid + step) {
                found = Some(mid + step);
                break;
            }
            step *= 2;
        }
        found
    };

    // Elevation noise moves real rays off the nominal cones the probes
    // evaluate, so predictions widen by one channel; a triangle between
    // two nominal cones falls back to its vertex neighbourhood. The
    // intersection tests on the actual perturbed rays stay the arbiter.
    let dilate = config.noise.is_some();
    let Some(seed) = seed else {
        if dilate {
            return Some((g_lo.max(v_lo.saturating_sub(1)) as u16, g_hi.min(v_hi + 1) as u16));
        }
        return None;
    };

    // Lower boundary: first intersecting channel in [0, seed].
    let mut lo = 0usize;
    let mut hi = seed;
    while lo < hi {
        let m = (lo + hi) / 2;
        if probe(m) {
            hi = m;
        } else {
            lo = m + 1;
        }
    }
    let c_from = lo;

    // Upper boundary: last intersecting channel in [seed, gamma).
    let mut lo = seed;
    let mut hi = gamma - 1;
    while lo < hi {
        let m = (lo + hi).div_ceil(2);
        if probe(m) {
            lo = m;
        } else {
            hi = m - 1;
        }
    }
    if dilate {
        Some((c_from.saturating_sub(1) as u16, (lo + 1).min(gamma - 1) as u16))
    } else {
        Some((c_from as u16, lo as u16))
    }
}

/// Step 3: conservative ray span from the three vertex projections,
/// uniform across channels. For sensors wider than 180 degrees, three
/// half-space tests first prove the triangle clear of the wrap-around
/// seam; failing all three returns `(false, None)` and forces deferral.
pub fn predict_ray_span_fast(tri: &Triangle, config: &SensorConfig) -> (bool, Option<(u16, u16)>) {
    let chi = config.chi_n();
    if config.full_azimuth {
        let d_ctr = DVec3::from(ray_direction(
            config.azimuth(chi / 2),
            config.elevation(config.gamma_n() / 2),
            &config.frame,
        ));
        // Horizontal side vector from the sensor's own up axis; a fixed
        // world axis here would tilt the split plane for tilted mounts.
        let mut w = DVec3::from(config.frame.up);
        if w.dot(d_ctr).abs() > 0.9 {
            w = if d_ctr.y.abs() < 0.9 { DVec3::new(0.0, 1.0, 0.0) } else { DVec3::new(1.0, 0.0, 0.0) };
        }
        let u_perp = {
            let v = w - d_ctr * w.dot(d_ctr);
            v / v.length()
        };
        let r_perp = {
            let v = d_ctr.cross(u_perp);
            v / v.length()
        };
        let rel: Vec<DVec3> = tri.vertices().iter().map(|v| dsub(*v, config.origin)).collect();
        let all_front = rel.iter().all(|p| p.dot(d_ctr) > 0.0);
        let all_right = rel.iter().all(|p| p.dot(r_perp) > 0.0);
        let all_left = rel.iter().all(|p| p.dot(r_perp) < 0.0);
        if !(all_front || all_right || all_left) {
            return (false, None);
        }
    }
    let mut r_lo = chi - 1;
    let mut r_hi = 0usize;
    for v in tri.vertices() {
        let idx = match azimuth_of_point(v, config.origin, &config.frame) {
            Ok(theta) => ray_index_of_azimuth(theta, config.angles.theta0, config.angles.dtheta, chi),
            // Vertex on the spin axis subtends every azimuth.
            Err(_) => return (true, Some((0, chi as u16 - 1))),
        };
        r_lo = r_lo.min(idx);
        r_hi = r_hi.max(idx);
    }
    if config.noise.is_some() {
        // Perturbed azimuths sit within one step of nominal.
        r_lo = r_lo.saturating_sub(1);
        r_hi = (r_hi + 1).min(chi - 1);
    }
    (true, Some((r_lo as u16, r_hi as u16)))
}

/// Step 4: inline/deferred classification from the predicted span sizes.
/// Seam-straddling triangles always defer.
pub fn classify_span(
    all_cw: bool,
    channel_span: usize,
    ray_span: usize,
    thresholds: &Thresholds,
) -> SpanClass {
    if all_cw
        && channel_span <= thresholds.channel_limit as usize
        && ray_span <= thresholds.ray_limit as usize
    {
        SpanClass::Inline
    } else {
        SpanClass::Deferred
    }
}

// ---------------------------------------------------------------------------
// Early pass

/// Runs filters, span prediction, classification, and inline intersection
/// for every (triangle, origin) pair; returns the deferred list consumed
/// by the late pass.
pub fn run_early_pass(
    scene: &PreparedScene,
    set: &SensorSet,
    thresholds: &Thresholds,
    facing: Facing,
    buffer: &HitBuffer,
    counters: &LiveCounters,
) -> Vec<DeferredEntry> {
    let deferred: Vec<DeferredEntry> = scene
        .triangles
        .par_iter()
        .enumerate()
        .filter_map(|(tri_idx, tri)| {
            let derived = &scene.derived[tri_idx];
            let mut slots: Vec<OriginSlot> = Vec::new();
            for (n, (config, grid)) in set.iter().enumerate() {
                if let Some(slot) =
                    process_pair(tri, derived, config, grid, thresholds, facing, buffer, counters)
                {
                    if slots.is_empty() {
                        slots = vec![OriginSlot::default(); set.len()];
                    }
                    slots[n] = slot;
                }
            }
            if slots.is_empty() {
                None
            } else {
                Some(DeferredEntry { triangle: tri_idx as u32, origins: slots })
            }
        })
        .collect();
    if deferred.len() > thresholds.deferred_soft_cap {
        counters.soft_cap_exceeded.store(true, Ordering::Relaxed);
    }
    deferred
}

/// One (triangle, origin) pair of the early pass. Returns a deferred slot
/// when the pair classifies as large-span.
#[allow(clippy::too_many_arguments)]
fn process_pair(
    tri: &Triangle,
    derived: &TriangleDerived,
    config: &SensorConfig,
    grid: &RayGrid,
    thresholds: &Thresholds,
    facing: Facing,
    buffer: &HitBuffer,
    counters: &LiveCounters,
) -> Option<OriginSlot> {
    let delta_min = match origin_filters(tri, derived, config, thresholds, facing) {
        Ok(d) => d,
        Err(FilterReject::BackFace) => {
            counters.rejected_backface.fetch_add(1, Ordering::Relaxed);
            return None;
        }
        Err(FilterReject::ApparentArea) => {
            counters.rejected_area.fetch_add(1, Ordering::Relaxed);
            return None;
        }
        Err(FilterReject::Range) => {
            counters.rejected_range.fetch_add(1, Ordering::Relaxed);
            return None;
        }
    };

    let apex = apex_ray_hits(config.origin, config.frame.up, tri);
    counters.apex_tests.fetch_add(2, Ordering::Relaxed);

    let Some((c_from, c_to)) = predict_channel_span(tri, config, delta_min, apex) else {
        counters.rejected_no_channel.fetch_add(1, Ordering::Relaxed);
        return None;
    };
    let (all_cw, ray_span) = predict_ray_span_fast(tri, config);
    let channel_span = (c_to - c_from) as usize + 1;

    if let (true, Some((r_from, r_to))) = (all_cw, ray_span) {
        let span = SpanRect { c_from, c_to, r_from, r_to };
        if classify_span(true, channel_span, span.ray_span(config.chi_n()), thresholds)
            == SpanClass::Inline
        {
            counters.inline_pairs.fetch_add(1, Ordering::Relaxed);
            let tested = intersect_span(tri, config, grid, &span, buffer);
            counters.inline_tests.fetch_add(tested, Ordering::Relaxed);
            return None;
        }
    }

    counters.deferred_pairs.fetch_add(1, Ordering::Relaxed);
    let mut flags = FLAG_ACTIVE;
    if apex.up {
        flags |= FLAG_APEX_UP;
    }
    if apex.down {
        flags |= FLAG_APEX_DOWN;
    }
    if all_cw {
        flags |= FLAG_ALL_CW;
    }
    Some(OriginSlot { c_from, c_to, delta_min, flags })
}

/// Step 5 / late step 3: Möller–Trumbore over every cell of a span window,
/// min-merging hits within the detection range. Returns the number of
/// tests performed.
fn intersect_span(
    tri: &Triangle,
    config: &SensorConfig,
    grid: &RayGrid,
    span: &SpanRect,
    buffer: &HitBuffer,
) -> u64 {
    let chi = config.chi_n();
    let ray_span = span.ray_span(chi);
    let mut tested = 0u64;
    for j in span.c_from as usize..=span.c_to as usize {
        for i in 0..ray_span {
            let ray = (span.r_from as usize + i) % chi;
            let dir = grid.dir(j, ray);
            tested += 1;
            if let Some(t) = moller_trumbore(config.origin, dir, tri) {
                if t >= config.d_min && t <= config.d_max {
                    buffer.record(global_ray_index(j, i, span.r_from as usize, chi, config.ray_offset), t);
                }
            }
        }
    }
    tested
}

// ---------------------------------------------------------------------------
// Late pass

/// Per-channel outcome of the exact surface test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelSpan {
    /// Surface misses the triangle at this channel.
    Skip,
    /// Every azimuth may reach it (surrounding cone or degenerate
    /// crossing count).
    Full,
    /// Unordered endpoint ray indices of the crossing pair; equal indices
    /// mean a tangent touch.
    Endpoints(usize, usize),
}

/// Late step 1: exact per-channel span from the full surface test.
pub fn resolve_channel_ray_span(
    tri: &Triangle,
    config: &SensorConfig,
    channel: usize,
    delta_min: f32,
    apex: ApexHits,
) -> ChannelSpan {
    let crossings = surface_crossings(
        tri,
        config.origin,
        config.frame.up,
        config.elevation(channel),
        delta_min,
        config.d_max,
        apex,
    );
    if crossings.full_span || crossings.apex_hit {
        return ChannelSpan::Full;
    }
    let points = crossings.points();
    match points.len() {
        0 => ChannelSpan::Skip,
        n => {
            let mut idx = [0usize; 2];
            for (k, p) in points.iter().enumerate() {
                match crossing_ray_index(*p, config) {
                    Some(i) => idx[k] = i,
                    // Crossing on the spin axis: azimuth undefined.
                    None => return ChannelSpan::Full,
                }
            }
            if n == 1 {
                ChannelSpan::Endpoints(idx[0], idx[0])
            } else {
                ChannelSpan::Endpoints(idx[0], idx[1])
            }
        }
    }
}

/// Ray index of a crossing point, through the perturbed-angle lookup when
/// the sensor carries noise.
fn crossing_ray_index(p: Vec3, config: &SensorConfig) -> Option<usize> {
    let theta = azimuth_of_point(p, config.origin, &config.frame).ok()?;
    let nominal = ray_index_of_azimuth(theta, config.angles.theta0, config.angles.dtheta, config.chi_n());
    Some(match &config.noise {
        Some(noise) => noise.ray_index_near(theta, nominal),
        None => nominal,
    })
}

/// Late step 2: picks the arc between two endpoint indices for a
/// seam-straddling triangle. True selects the direct arc `lo..hi`, false
/// its wrap-around complement.
///
/// Both arc midpoints are plane-tested against the triangle; the
/// complement midpoint direction is the up-axis reflection of the direct
/// one. An ambiguous outcome falls back to a full intersection test on the
/// direct midpoint.
#[allow(clippy::too_many_arguments)]
pub fn disambiguate_arc(
    tri: &Triangle,
    derived: &TriangleDerived,
    config: &SensorConfig,
    grid: &RayGrid,
    channel: usize,
    lo: usize,
    hi: usize,
    thresholds: &Thresholds,
    facing: Facing,
    counters: &LiveCounters,
) -> bool {
    let chi = config.chi_n();
    let span_cw = hi - lo + 1;
    let mid_cw = (lo + span_cw / 2) % chi;
    let d_cw = grid.dir(channel, mid_cw);
    let tiebreak = || {
        counters.arc_tiebreak_tests.fetch_add(1, Ordering::Relaxed);
        moller_trumbore(config.origin, d_cw, tri).is_some()
    };
    // The reflection stands in for the complement arc's midpoint only
    // while the direct arc is the minor one; past half a turn it lands
    // back inside the direct arc and the plane shortcut loses meaning.
    if span_cw > chi / 2 {
        return tiebreak();
    }
    let d_ccw = reflect_across_axis(d_cw, config.frame.up);

    let plane_hit = |d: Vec3| {
        let nd = DVec3::from(derived.normal).dot(d.into());
        if facing.sign() * nd < thresholds.face_epsilon as f64 {
            return false;
        }
        let nc = dsub(derived.centroid, config.origin).dot(derived.normal.into());
        nc / nd >= 0.0
    };

    match (plane_hit(d_cw), plane_hit(d_ccw)) {
        (true, false) => true,
        (false, true) => false,
        _ => tiebreak(),
    }
}

/// Late pass: per deferred entry and active origin, resolve each channel's
/// exact span, pick the arc, and intersect. Writes land in the shared
/// buffer through the same min-merge as the early pass.
pub fn run_late_pass(
    deferred: &[DeferredEntry],
    scene: &PreparedScene,
    set: &SensorSet,
    thresholds: &Thresholds,
    facing: Facing,
    buffer: &HitBuffer,
    counters: &LiveCounters,
) {
    deferred.par_iter().for_each(|entry| {
        let tri = &scene.triangles[entry.triangle as usize];
        let derived = &scene.derived[entry.triangle as usize];
        for (n, slot) in entry.origins.iter().enumerate() {
            if !slot.active() {
                continue;
            }
            let (config, grid) = set.get(n);
            let chi = config.chi_n();
            let mut tested = 0u64;
            for j in slot.c_from as usize..=slot.c_to as usize {
                let span = match resolve_channel_ray_span(tri, config, j, slot.delta_min, slot.apex()) {
                    ChannelSpan::Skip => continue,
                    ChannelSpan::Full => SpanRect {
                        c_from: j as u16,
                        c_to: j as u16,
                        r_from: 0,
                        r_to: chi as u16 - 1,
                    },
                    ChannelSpan::Endpoints(a, b) => {
                        let (lo, hi) = (a.min(b), a.max(b));
                        let direct = slot.all_cw()
                            || lo == hi
                            || disambiguate_arc(
                                tri, derived, config, grid, j, lo, hi, thresholds, facing, counters,
                            );
                        let (mut r_from, mut r_to) = if direct { (lo, hi) } else { (hi, lo) };
                        if config.noise.is_some() {
                            // One extra ray each side: perturbed angles can
                            // put the neighbouring ray inside the arc.
                            let span = if r_from <= r_to {
                                r_to - r_from + 1
                            } else {
                                chi - (r_from - r_to) + 1
                            };
                            if span + 2 >= chi {
                                (r_from, r_to) = (0, chi - 1);
                            } else {
                                r_from = (r_from + chi - 1) % chi;
                                r_to = (r_to + 1) % chi;
                            }
                        }
                        SpanRect {
                            c_from: j as u16,
                            c_to: j as u16,
                            r_from: r_from as u16,
                            r_to: r_to as u16,
                        }
                    }
                };
                tested += intersect_span(tri, config, grid, &span, buffer);
            }
            counters.late_tests.fetch_add(tested, Ordering::Relaxed);
        }
    });
}

// ---------------------------------------------------------------------------
// Frame drivers

/// Casts one frame: early pass, late pass, counters. The returned buffer
/// is bit-identical for any thread count.
pub fn cast_frame(
    scene: &PreparedScene,
    set: &SensorSet,
    thresholds: &Thresholds,
    facing: Facing,
) -> (HitBuffer, CastCounters) {
    let buffer = HitBuffer::new(set.total_rays());
    let counters = LiveCounters::default();
    let deferred = run_early_pass(scene, set, thresholds, facing, &buffer, &counters);
    run_late_pass(&deferred, scene, set, thresholds, facing, &buffer, &counters);
    let mut snap = counters.snapshot();
    snap.deferred_entries = deferred.len() as u64;
    snap.brute_force_bound = set
        .iter()
        .map(|(c, _)| c.ray_count() as u64)
        .sum::<u64>()
        .saturating_mul(scene.len() as u64);
    (buffer, snap)
}

/// Hybrid mode: this caster handles the dynamic subset while a prebuilt
/// static tree handles the static subset; the two buffers min-merge per
/// ray. `None` for either side degenerates to the other backend alone.
pub fn hybrid_cast_frame(
    dynamic: &PreparedScene,
    static_backend: Option<&ReferenceBvh>,
    set: &SensorSet,
    thresholds: &Thresholds,
    facing: Facing,
) -> (HitBuffer, CastCounters) {
    let (dynamic_buf, counters) = cast_frame(dynamic, set, thresholds, facing);
    match static_backend {
        Some(bvh) => (dynamic_buf.merge_min(&bvh.cast(set, facing)), counters),
        None => (dynamic_buf, counters),
    }
}
