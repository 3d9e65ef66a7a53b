//! Run configuration: one TOML file describing the scene, sensors,
//! thresholds, and outputs. Every tunable is explicit; the shipped example
//! configs spell out the defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use sweepcast::geometry::{Aabb, Facing, OrientedFrame, Vec3};
use sweepcast::scene::{
    Deformation, Mesh, MotionConfig, MotionParams, MotionStream, SceneModel, SceneObject,
};
use sweepcast::sensor::{NoiseSpec, SensorConfig};
use sweepcast::{SensorSet, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// The two-pass sweep-surface caster.
    Sweep,
    /// Brute-force oracle.
    Brute,
    /// Rebuild-per-frame reference tree.
    Bvh,
    /// Sweep on dynamic geometry, static tree built once, min-merged.
    Hybrid,
}

impl Backend {
    pub fn parse(s: &str) -> Result<Backend> {
        Ok(match s {
            "sweep" => Backend::Sweep,
            "brute" => Backend::Brute,
            "bvh" => Backend::Bvh,
            "hybrid" => Backend::Hybrid,
            other => bail!("unknown backend {other:?} (expected sweep|brute|bvh|hybrid)"),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Backend::Sweep => "sweep",
            Backend::Brute => "brute",
            Backend::Bvh => "bvh",
            Backend::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub run: RunSection,
    #[serde(default)]
    pub thresholds: ThresholdsSection,
    pub world: WorldSection,
    #[serde(default)]
    pub objects: Vec<ObjectSection>,
    pub sensors: Vec<SensorSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub frames: u32,
    pub seed: u64,
    pub backend: String,
    pub motion: String,
    pub deformation: String,
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub verify: bool,
    /// Largest rays x triangles product per oracle frame when verifying.
    #[serde(default = "default_oracle_budget")]
    pub oracle_budget: u64,
}

fn default_oracle_budget() -> u64 {
    5_000_000_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsSection {
    pub channel_limit: u16,
    pub ray_limit: u16,
    pub min_apparent_area: f32,
    pub face_epsilon: f32,
    pub deferred_soft_cap: usize,
    pub facing: String,
}

impl Default for ThresholdsSection {
    fn default() -> Self {
        ThresholdsSection {
            channel_limit: 64,
            ray_limit: 64,
            min_apparent_area: 1e-6,
            face_epsilon: 1e-4,
            deferred_soft_cap: 800_000,
            facing: "toward".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    pub bounds_min: [f32; 3],
    pub bounds_max: [f32; 3],
    pub scale_range: [f32; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSection {
    /// OBJ file to load.
    pub path: Option<PathBuf>,
    /// Procedural triangle soup instead of a file.
    pub soup: Option<SoupSection>,
    #[serde(default = "one")]
    pub instances: u32,
    #[serde(default)]
    pub dynamic: bool,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoupSection {
    pub triangles: usize,
    pub size: f32,
    #[serde(default)]
    pub seed: u64,
    /// Soup volume; the world bounds when omitted.
    pub bounds_min: Option<[f32; 3]>,
    pub bounds_max: Option<[f32; 3]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    pub origin: [f32; 3],
    pub channels: usize,
    pub rays_per_channel: usize,
    pub vertical_fov_deg: f64,
    pub azimuth_fov_deg: f64,
    pub range: [f32; 2],
    pub forward: Option<[f32; 3]>,
    pub up: Option<[f32; 3]>,
    pub noise: Option<NoiseSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub distance_sigma: f32,
    pub azimuth_jitter: f64,
    pub elevation_jitter: f64,
    pub seed: u64,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub stats: Option<PathBuf>,
    /// Point-cloud path; format chosen by extension (.ply or .csv).
    pub point_cloud: Option<PathBuf>,
    /// Pose-stream file: replayed when it exists, recorded otherwise.
    pub pose_stream: Option<PathBuf>,
}

/// Fully resolved run: everything the frame loop needs.
pub struct RunConfig {
    pub frames: u32,
    pub seed: u64,
    pub backend: Backend,
    pub threads: usize,
    pub verify: bool,
    pub oracle_budget: u64,
    pub thresholds: Thresholds,
    pub facing: Facing,
    pub scene: SceneModel,
    pub sensors: SensorSet,
    pub stats_path: Option<PathBuf>,
    pub point_cloud_path: Option<PathBuf>,
    pub pose_stream_path: Option<PathBuf>,
    pub motion_label: String,
    pub deformation_label: String,
}

pub fn load(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: FileConfig =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    Ok(cfg)
}

/// Resolves the parsed file relative to its directory (mesh paths) into a
/// ready-to-run configuration.
pub fn resolve(cfg: FileConfig, base: &Path) -> Result<RunConfig> {
    let backend = Backend::parse(&cfg.run.backend)?;
    let motion = MotionConfig::from_label(&cfg.run.motion)
        .with_context(|| format!("unknown motion label {:?}", cfg.run.motion))?;
    let deformation = Deformation::from_label(&cfg.run.deformation)
        .with_context(|| format!("unknown deformation {:?} (nd|obd|swd)", cfg.run.deformation))?;
    let facing = match cfg.thresholds.facing.as_str() {
        "toward" => Facing::Toward,
        "away" => Facing::Away,
        other => bail!("unknown facing convention {other:?} (toward|away)"),
    };
    let thresholds = Thresholds {
        channel_limit: cfg.thresholds.channel_limit,
        ray_limit: cfg.thresholds.ray_limit,
        min_apparent_area: cfg.thresholds.min_apparent_area,
        face_epsilon: cfg.thresholds.face_epsilon,
        deferred_soft_cap: cfg.thresholds.deferred_soft_cap,
    };

    let world_box = Aabb::from_points([
        Vec3::new(cfg.world.bounds_min[0], cfg.world.bounds_min[1], cfg.world.bounds_min[2]),
        Vec3::new(cfg.world.bounds_max[0], cfg.world.bounds_max[1], cfg.world.bounds_max[2]),
    ]);
    if cfg.world.scale_range[0] <= 0.0 || cfg.world.scale_range[0] >= cfg.world.scale_range[1] {
        bail!("scale_range must satisfy 0 < lo < hi");
    }

    let mut objects = Vec::new();
    for (i, obj) in cfg.objects.iter().enumerate() {
        let mesh = match (&obj.path, &obj.soup) {
            (Some(p), None) => {
                let full = if p.is_absolute() { p.clone() } else { base.join(p) };
                Mesh::load(&full).with_context(|| format!("loading mesh {}", full.display()))?
            }
            (None, Some(s)) => {
                let volume = match (s.bounds_min, s.bounds_max) {
                    (Some(lo), Some(hi)) => Aabb::from_points([
                        Vec3::new(lo[0], lo[1], lo[2]),
                        Vec3::new(hi[0], hi[1], hi[2]),
                    ]),
                    (None, None) => world_box,
                    _ => bail!("object {i}: soup bounds need both min and max"),
                };
                Mesh::soup(s.seed ^ cfg.run.seed, s.triangles, volume, s.size)
            }
            _ => bail!("object {i}: specify exactly one of `path` or `soup`"),
        };
        if obj.instances == 0 {
            bail!("object {i}: instances must be at least 1");
        }
        objects.push(SceneObject { mesh, instances: obj.instances, dynamic: obj.dynamic });
    }

    let scene = SceneModel {
        objects,
        motion: MotionStream {
            seed: cfg.run.seed,
            params: MotionParams {
                world_box,
                scale_range: (cfg.world.scale_range[0], cfg.world.scale_range[1]),
            },
            config: motion,
        },
        deformation,
    };

    let mut sensor_configs = Vec::new();
    for (i, s) in cfg.sensors.iter().enumerate() {
        let frame = match (s.forward, s.up) {
            (None, None) => OrientedFrame::identity(),
            (f, u) => {
                let fwd = f.map(|v| Vec3::new(v[0], v[1], v[2])).unwrap_or(Vec3::X);
                let up = u.map(|v| Vec3::new(v[0], v[1], v[2])).unwrap_or(Vec3::Z);
                OrientedFrame::from_forward_up(fwd, up)
                    .map_err(|e| anyhow::anyhow!("sensor {i}: {e}"))?
            }
        };
        if s.channels == 0 || s.rays_per_channel == 0 {
            bail!("sensor {i}: channels and rays_per_channel must be positive");
        }
        let dtheta = s.azimuth_fov_deg.to_radians() / s.rays_per_channel as f64;
        let dphi = s.vertical_fov_deg.to_radians() / s.channels as f64;
        let mut config = SensorConfig::new(
            Vec3::new(s.origin[0], s.origin[1], s.origin[2]),
            frame,
            s.channels,
            s.rays_per_channel,
            dtheta,
            dphi,
            s.range[0],
            s.range[1],
        )
        .map_err(|e| anyhow::anyhow!("sensor {i}: {e}"))?;
        if let Some(n) = &s.noise {
            let noise = NoiseSpec::generate(
                n.seed,
                &config.angles,
                n.distance_sigma,
                n.azimuth_jitter,
                n.elevation_jitter,
            )
            .map_err(|e| anyhow::anyhow!("sensor {i} noise: {e}"))?;
            config = config.with_noise(noise);
        }
        sensor_configs.push(config);
    }
    if sensor_configs.is_empty() {
        bail!("at least one sensor is required");
    }

    Ok(RunConfig {
        frames: cfg.run.frames,
        seed: cfg.run.seed,
        backend,
        threads: cfg.run.threads,
        verify: cfg.run.verify,
        oracle_budget: cfg.run.oracle_budget,
        thresholds,
        facing,
        scene,
        sensors: SensorSet::new(sensor_configs),
        stats_path: cfg.output.stats.map(|p| rebase(p, base)),
        point_cloud_path: cfg.output.point_cloud.map(|p| rebase(p, base)),
        pose_stream_path: cfg.output.pose_stream.map(|p| rebase(p, base)),
        motion_label: cfg.run.motion.clone(),
        deformation_label: cfg.run.deformation.clone(),
    })
}

fn rebase(p: PathBuf, base: &Path) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}
