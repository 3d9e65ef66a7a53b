//! Sensor configuration, ray-grid construction, global ray indexing, the
//! order-preserving distance encoding, the shared hit buffer, and the
//! angular/distance noise model.

use std::sync::atomic::{AtomicU32, Ordering};

use thiserror::Error;

use crate::geometry::{ray_direction, OrientedFrame, Vec3};
use crate::stream;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("channel and ray counts must be at least 1")]
    BadCounts,
    #[error("angular steps must be positive")]
    BadStep,
    #[error("range must satisfy 0 <= d_min < d_max")]
    BadRange,
    #[error("azimuth grid extends beyond +pi")]
    AzimuthOverflow,
    #[error("noise tables must have one azimuth per ray and one elevation per channel")]
    NoiseTableSize,
    #[error("noise perturbation crosses an adjacent {0} boundary")]
    NoiseTableBounds(&'static str),
    #[error("distance is NaN")]
    NanDistance,
}

// ---------------------------------------------------------------------------
// Order-preserving distance encoding

/// Encoded +infinity; the initial value of every hit-buffer slot.
pub const MISS: u32 = 0xff80_0000;

/// Order-preserving bijection from f32 bits to u32: unsigned comparisons on
/// the output agree with float comparisons on the input, so a nearest hit
/// is an atomic unsigned minimum.
#[inline]
pub fn encode_raw(d: f32) -> u32 {
    let u = d.to_bits();
    let m = ((u >> 31) as i32).wrapping_neg() as u32 | 0x8000_0000;
    u ^ m
}

/// Checked encoding for distances: rejects NaN, accepts `d >= 0` and
/// +infinity.
pub fn encode_distance(d: f32) -> Result<u32, SensorError> {
    if d.is_nan() {
        return Err(SensorError::NanDistance);
    }
    Ok(encode_raw(d))
}

/// Exact inverse of [`encode_raw`].
#[inline]
pub fn decode_distance(u: u32) -> f32 {
    let m = ((u >> 31).wrapping_sub(1)) | 0x8000_0000;
    f32::from_bits(u ^ m)
}

/// Global ray index of channel `j`, ray offset `i` within a span starting
/// at `r_from`: `j*chi_n + (r_from + i) % chi_n + ray_offset`.
#[inline]
pub fn global_ray_index(j: usize, i: usize, r_from: usize, chi_n: usize, ray_offset: usize) -> usize {
    j * chi_n + (r_from + i) % chi_n + ray_offset
}

// ---------------------------------------------------------------------------
// Noise model

/// Pre-materialized perturbed scan angles plus a distance sigma.
///
/// Azimuth noise is per ray, elevation noise per channel; per-ray vertical
/// noise is unsupported by construction since the surface test evaluates a
/// single elevation per channel. No perturbed angle may cross an adjacent
/// grid boundary, which keeps the three-neighbour index lookup exact.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub distance_sigma: f32,
    pub seed: u64,
    azimuths: Vec<f64>,
    elevations: Vec<f64>,
}

const NOISE_AZ: u64 = 0x41;
const NOISE_EL: u64 = 0x45;
const NOISE_DIST: u64 = 0x44;

impl NoiseSpec {
    /// Builds tables from explicit perturbed angles, validating the
    /// adjacent-boundary precondition against the nominal grid.
    pub fn from_tables(
        azimuths: Vec<f64>,
        elevations: Vec<f64>,
        distance_sigma: f32,
        seed: u64,
        grid: &GridAngles,
    ) -> Result<NoiseSpec, SensorError> {
        if azimuths.len() != grid.chi_n || elevations.len() != grid.gamma_n {
            return Err(SensorError::NoiseTableSize);
        }
        for (i, az) in azimuths.iter().enumerate() {
            if (az - grid.azimuth(i)).abs() >= grid.dtheta {
                return Err(SensorError::NoiseTableBounds("ray"));
            }
        }
        for (j, el) in elevations.iter().enumerate() {
            if (el - grid.elevation(j)).abs() >= grid.dphi {
                return Err(SensorError::NoiseTableBounds("channel"));
            }
        }
        Ok(NoiseSpec { distance_sigma, seed, azimuths, elevations })
    }

    /// Samples jitter uniformly within `jitter * step` of each nominal
    /// angle. Jitter fractions must be below 1 to satisfy the boundary
    /// precondition.
    pub fn generate(
        seed: u64,
        grid: &GridAngles,
        distance_sigma: f32,
        azimuth_jitter: f64,
        elevation_jitter: f64,
    ) -> Result<NoiseSpec, SensorError> {
        if !(0.0..1.0).contains(&azimuth_jitter) || !(0.0..1.0).contains(&elevation_jitter) {
            return Err(SensorError::NoiseTableBounds("jitter fraction"));
        }
        let azimuths = (0..grid.chi_n)
            .map(|i| {
                grid.azimuth(i)
                    + stream::uniform(&[seed, NOISE_AZ, i as u64], -azimuth_jitter, azimuth_jitter)
                        * grid.dtheta
            })
            .collect();
        let elevations = (0..grid.gamma_n)
            .map(|j| {
                grid.elevation(j)
                    + stream::uniform(&[seed, NOISE_EL, j as u64], -elevation_jitter, elevation_jitter)
                        * grid.dphi
            })
            .collect();
        NoiseSpec::from_tables(azimuths, elevations, distance_sigma, seed, grid)
    }

    pub fn azimuth(&self, i: usize) -> f64 {
        self.azimuths[i]
    }

    pub fn elevation(&self, j: usize) -> f64 {
        self.elevations[j]
    }

    /// Index of the perturbed ray nearest to `theta` among the nominal
    /// index and its two neighbours.
    pub fn ray_index_near(&self, theta: f64, nominal: usize) -> usize {
        argmin_neighbourhood(theta, nominal, &self.azimuths)
    }

    /// Mirror of [`NoiseSpec::ray_index_near`] for channel elevations.
    pub fn channel_index_near(&self, phi: f64, nominal: usize) -> usize {
        argmin_neighbourhood(phi, nominal, &self.elevations)
    }

    /// Distance perturbation for one global ray, reproducible from the
    /// seed. Applied after output conversion.
    pub fn distance_offset(&self, global_ray: usize) -> f32 {
        self.distance_sigma * stream::gaussian(&[self.seed, NOISE_DIST, global_ray as u64]) as f32
    }
}

fn argmin_neighbourhood(angle: f64, nominal: usize, table: &[f64]) -> usize {
    let lo = nominal.saturating_sub(1);
    let hi = (nominal + 1).min(table.len() - 1);
    (lo..=hi)
        .min_by(|&a, &b| {
            let da = (angle - table[a]).abs();
            let db = (angle - table[b]).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap_or(nominal)
}

// ---------------------------------------------------------------------------
// Sensor configuration

/// Nominal angular grid of one sensor, shared between the config and the
/// noise-table validator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAngles {
    pub gamma_n: usize,
    pub chi_n: usize,
    pub dtheta: f64,
    pub dphi: f64,
    pub theta0: f64,
    pub phi0: f64,
}

impl GridAngles {
    /// Centered grid: `theta0 = -floor(chi/2)*dtheta`,
    /// `phi0 = -floor(gamma/2)*dphi`.
    pub fn centered(gamma_n: usize, chi_n: usize, dtheta: f64, dphi: f64) -> GridAngles {
        GridAngles {
            gamma_n,
            chi_n,
            dtheta,
            dphi,
            theta0: -((chi_n / 2) as f64) * dtheta,
            phi0: -((gamma_n / 2) as f64) * dphi,
        }
    }

    pub fn azimuth(&self, i: usize) -> f64 {
        self.theta0 + i as f64 * self.dtheta
    }

    pub fn elevation(&self, j: usize) -> f64 {
        self.phi0 + j as f64 * self.dphi
    }
}

/// One ray origin: pose, angular grid, range limits, global ray-index
/// offset, and the FOV flag that gates the azimuth seam check.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    pub origin: Vec3,
    pub frame: OrientedFrame,
    pub angles: GridAngles,
    pub d_min: f32,
    pub d_max: f32,
    pub ray_offset: usize,
    pub full_azimuth: bool,
    pub noise: Option<NoiseSpec>,
}

impl SensorConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        origin: Vec3,
        frame: OrientedFrame,
        gamma_n: usize,
        chi_n: usize,
        dtheta: f64,
        dphi: f64,
        d_min: f32,
        d_max: f32,
    ) -> Result<SensorConfig, SensorError> {
        if gamma_n < 1 || chi_n < 1 {
            return Err(SensorError::BadCounts);
        }
        if dtheta <= 0.0 || dphi <= 0.0 {
            return Err(SensorError::BadStep);
        }
        if !(d_min >= 0.0 && d_min < d_max) {
            return Err(SensorError::BadRange);
        }
        let angles = GridAngles::centered(gamma_n, chi_n, dtheta, dphi);
        let fov = chi_n as f64 * dtheta;
        if fov > 2.0 * std::f64::consts::PI * (1.0 + 1e-9)
            || angles.azimuth(chi_n - 1) > std::f64::consts::PI + 1e-9
        {
            return Err(SensorError::AzimuthOverflow);
        }
        Ok(SensorConfig {
            origin,
            frame,
            angles,
            d_min,
            d_max,
            ray_offset: 0,
            full_azimuth: fov > std::f64::consts::PI * (1.0 + 1e-9),
            noise: None,
        })
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> SensorConfig {
        self.noise = Some(noise);
        self
    }

    pub fn gamma_n(&self) -> usize {
        self.angles.gamma_n
    }

    pub fn chi_n(&self) -> usize {
        self.angles.chi_n
    }

    pub fn ray_count(&self) -> usize {
        self.angles.gamma_n * self.angles.chi_n
    }

    /// Nominal channel elevation; the surface test always evaluates here,
    /// even when the built grid carries perturbed elevations.
    pub fn elevation(&self, j: usize) -> f64 {
        self.angles.elevation(j)
    }

    pub fn azimuth(&self, i: usize) -> f64 {
        self.angles.azimuth(i)
    }
}

// ---------------------------------------------------------------------------
// Ray grid

/// Precomputed unit directions for every (channel, ray) cell, channel-major
/// with each component stored contiguously. Directions use the perturbed
/// angles when the sensor carries a noise spec.
#[derive(Debug, Clone, PartialEq)]
pub struct RayGrid {
    pub gamma_n: usize,
    pub chi_n: usize,
    azimuths: Vec<f64>,
    elevations: Vec<f64>,
    xs: Vec<f32>,
    ys: Vec<f32>,
    zs: Vec<f32>,
}

/// Evaluates every grid direction from the config's angle tables.
pub fn build_ray_grid(config: &SensorConfig) -> RayGrid {
    let (gamma, chi) = (config.gamma_n(), config.chi_n());
    let azimuths: Vec<f64> = match &config.noise {
        Some(n) => (0..chi).map(|i| n.azimuth(i)).collect(),
        None => (0..chi).map(|i| config.azimuth(i)).collect(),
    };
    let elevations: Vec<f64> = match &config.noise {
        Some(n) => (0..gamma).map(|j| n.elevation(j)).collect(),
        None => (0..gamma).map(|j| config.elevation(j)).collect(),
    };
    let count = gamma * chi;
    let mut xs = Vec::with_capacity(count);
    let mut ys = Vec::with_capacity(count);
    let mut zs = Vec::with_capacity(count);
    for &phi in &elevations {
        for &theta in &azimuths {
            let d = ray_direction(theta, phi, &config.frame);
            xs.push(d.x);
            ys.push(d.y);
            zs.push(d.z);
        }
    }
    RayGrid { gamma_n: gamma, chi_n: chi, azimuths, elevations, xs, ys, zs }
}

impl RayGrid {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    #[inline]
    pub fn dir(&self, j: usize, i: usize) -> Vec3 {
        self.dir_flat(j * self.chi_n + i)
    }

    #[inline]
    pub fn dir_flat(&self, idx: usize) -> Vec3 {
        Vec3::new(self.xs[idx], self.ys[idx], self.zs[idx])
    }

    pub fn azimuth(&self, i: usize) -> f64 {
        self.azimuths[i]
    }

    pub fn elevation(&self, j: usize) -> f64 {
        self.elevations[j]
    }
}

// ---------------------------------------------------------------------------
// Sensor set

/// All sensors of a run with grids built and global ray offsets assigned
/// sequentially.
#[derive(Debug)]
pub struct SensorSet {
    sensors: Vec<(SensorConfig, RayGrid)>,
    total_rays: usize,
}

impl SensorSet {
    pub fn new(configs: Vec<SensorConfig>) -> SensorSet {
        let mut sensors = Vec::with_capacity(configs.len());
        let mut offset = 0;
        for mut config in configs {
            config.ray_offset = offset;
            offset += config.ray_count();
            let grid = build_ray_grid(&config);
            sensors.push((config, grid));
        }
        SensorSet { sensors, total_rays: offset }
    }

    pub fn total_rays(&self) -> usize {
        self.total_rays
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SensorConfig, &RayGrid)> {
        self.sensors.iter().map(|(c, g)| (c, g))
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn get(&self, n: usize) -> (&SensorConfig, &RayGrid) {
        let (c, g) = &self.sensors[n];
        (c, g)
    }
}

// ---------------------------------------------------------------------------
// Hit buffer

/// Per-ray encoded nearest distances, min-merged across passes and threads.
/// Every slot starts at encoded +infinity; updates are linearizable atomic
/// minimums, so the final state is independent of write order.
#[derive(Debug)]
pub struct HitBuffer {
    slots: Vec<AtomicU32>,
}

impl HitBuffer {
    pub fn new(len: usize) -> HitBuffer {
        HitBuffer { slots: (0..len).map(|_| AtomicU32::new(MISS)).collect() }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Min-merges a hit distance into one slot. The caller keeps distances
    /// within the sensor's detection range.
    #[inline]
    pub fn record(&self, index: usize, d: f32) {
        debug_assert!(d >= 0.0 && !d.is_nan());
        self.slots[index].fetch_min(encode_raw(d), Ordering::Relaxed);
    }

    pub fn load(&self, index: usize) -> u32 {
        self.slots[index].load(Ordering::Relaxed)
    }

    pub fn distance(&self, index: usize) -> f32 {
        decode_distance(self.load(index))
    }

    pub fn to_encoded(&self) -> Vec<u32> {
        self.slots.iter().map(|s| s.load(Ordering::Relaxed)).collect()
    }

    /// Per-ray minimum of two buffers of equal length.
    pub fn merge_min(&self, other: &HitBuffer) -> HitBuffer {
        assert_eq!(self.len(), other.len());
        HitBuffer {
            slots: self
                .slots
                .iter()
                .zip(&other.slots)
                .map(|(a, b)| AtomicU32::new(a.load(Ordering::Relaxed).min(b.load(Ordering::Relaxed))))
                .collect(),
        }
    }
}

impl Clone for HitBuffer {
    fn clone(&self) -> HitBuffer {
        HitBuffer {
            slots: self.slots.iter().map(|s| AtomicU32::new(s.load(Ordering::Relaxed))).collect(),
        }
    }
}

impl PartialEq for HitBuffer {
    fn eq(&self, other: &HitBuffer) -> bool {
        self.len() == other.len()
            && self
                .slots
                .iter()
                .zip(&other.slots)
                .all(|(a, b)| a.load(Ordering::Relaxed) == b.load(Ordering::Relaxed))
    }
}

/// One output record: ray direction and decoded distance, +infinity for
/// misses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayRecord {
    pub direction: Vec3,
    pub distance: f32,
}

/// Decodes the buffer into output records. Misses keep +infinity as a
/// sentinel. Distance noise, when configured, is applied here as a
/// post-processing step, truncated so distances never drop below the
/// sensor's near limit.
pub fn finalize_output(buffer: &HitBuffer, set: &SensorSet) -> Vec<RayRecord> {
    assert_eq!(buffer.len(), set.total_rays());
    let mut out = Vec::with_capacity(buffer.len());
    for (config, grid) in set.iter() {
        for j in 0..config.gamma_n() {
            for i in 0..config.chi_n() {
                let global = config.ray_offset + j * config.chi_n() + i;
                let mut d = buffer.distance(global);
                if d.is_finite() {
                    if let Some(noise) = &config.noise {
                        if noise.distance_sigma > 0.0 {
                            d = (d + noise.distance_offset(global)).max(config.d_min);
                        }
                    }
                }
                out.push(RayRecord { direction: grid.dir(j, i), distance: d });
            }
        }
    }
    out
}
