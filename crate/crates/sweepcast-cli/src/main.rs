//! Benchmark and validation harness: runs a configured frame loop on one
//! of four backends over a replayed pose stream, reports frame statistics
//! and workload counters, optionally verifies sampled frames against the
//! brute-force oracle, sweeps classification thresholds, and exports point
//! clouds.

mod config;
mod export;
mod stats;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{Backend, RunConfig};
use stats::{FrameRow, Header, RunStats, VerifyRow};
use sweepcast::pipeline::{cast_frame, hybrid_cast_frame};
use sweepcast::reference::{brute_force_cast, compare_hit_buffers, ReferenceBvh};
use sweepcast::scene::PoseStream;
use sweepcast::sensor::finalize_output;
use sweepcast::{CastCounters, HitBuffer, PreparedScene};

#[derive(Parser)]
#[command(name = "sweepcast", about = "Spinning-LiDAR simulation harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured frame loop on one backend.
    Run(RunArgs),
    /// Run with oracle verification forced on.
    Verify(RunArgs),
    /// Evaluate all 16 classification-threshold combinations.
    Sweep(SweepArgs),
    /// Cast one frame and export its point cloud.
    Export(ExportArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured backend (sweep|brute|bvh|hybrid).
    #[arg(long)]
    backend: Option<String>,
    /// Override the configured frame count.
    #[arg(long)]
    frames: Option<u32>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Compare sampled frames against the brute-force oracle.
    #[arg(long)]
    verify: bool,
    /// Write the stats report here instead of the configured path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export the final frame's point cloud (.ply or .csv).
    #[arg(long)]
    export_ply: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Write the sweep table here (defaults to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    frames: Option<u32>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output point cloud (.ply or .csv).
    #[arg(long)]
    out: PathBuf,
    /// Frame index to cast.
    #[arg(long, default_value_t = 0)]
    frame: u32,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args, false),
        Command::Verify(args) => cmd_run(args, true),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Export(args) => cmd_export(args),
    }
}

fn load_with_overrides(args: &RunArgs, force_verify: bool) -> Result<RunConfig> {
    let mut file = config::load(&args.config)?;
    if let Some(b) = &args.backend {
        file.run.backend = b.clone();
    }
    if let Some(f) = args.frames {
        file.run.frames = f;
    }
    if let Some(s) = args.seed {
        file.run.seed = s;
    }
    if let Some(t) = args.threads {
        file.run.threads = t;
    }
    if args.verify || force_verify {
        file.run.verify = true;
    }
    let base = args.config.parent().unwrap_or(std::path::Path::new(".")).to_path_buf();
    let mut run = config::resolve(file, &base)?;
    if let Some(out) = &args.out {
        run.stats_path = Some(out.clone());
    }
    if let Some(ply) = &args.export_ply {
        run.point_cloud_path = Some(ply.clone());
    }
    Ok(run)
}

fn cmd_run(args: RunArgs, force_verify: bool) -> Result<()> {
    let run = load_with_overrides(&args, force_verify)?;
    let header_backend = run.backend.label();
    let (seed, motion, deformation, threads) =
        (run.seed, run.motion_label.clone(), run.deformation_label.clone(), run.threads);
    let stats_path = run.stats_path.clone();
    let stats = execute(run)?;

    let text = stats::render(
        &Header {
            backend: header_backend,
            seed,
            motion: &motion,
            deformation: &deformation,
            threads,
        },
        &stats,
    );
    match &stats_path {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
            println!("stats written to {}", path.display());
        }
        None => print!("{text}"),
    }
    let ms: Vec<f64> = stats.frames.iter().map(|f| f.ms).collect();
    let summary = stats::summarize(&ms);
    println!(
        "{} frames on {header_backend}: mean {:.3} ms, {:.0}% within +-20%, {:.0}% below mean",
        ms.len(),
        summary.mean_ms,
        summary.within_20pct * 100.0,
        summary.below_mean * 100.0
    );
    for v in &stats.verifies {
        println!(
            "verify frame {}: match {:.4} ({} reference hits)",
            v.frame, v.report.match_fraction, v.report.reference_hits
        );
    }
    Ok(())
}

/// Runs the frame loop and returns the collected statistics.
fn execute(run: RunConfig) -> Result<RunStats> {
    if run.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(run.threads)
            .build()
            .context("building thread pool")?;
        pool.install(|| frame_loop(&run))
    } else {
        frame_loop(&run)
    }
}

fn obtain_poses(run: &RunConfig) -> Result<PoseStream> {
    let instances = run.scene.dynamic_instances();
    match &run.pose_stream_path {
        Some(path) if path.exists() => {
            let stream = PoseStream::load(path)
                .with_context(|| format!("replaying pose stream {}", path.display()))?;
            if stream.instances != instances || stream.frames < run.frames || stream.seed != run.seed
            {
                bail!(
                    "pose-stream mismatch: file has seed {} / {} frames / {} instances, run needs seed {} / {} frames / {} instances",
                    stream.seed, stream.frames, stream.instances,
                    run.seed, run.frames, instances
                );
            }
            Ok(stream)
        }
        Some(path) => {
            let stream = run.scene.record_poses(run.frames);
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            stream
                .save(path)
                .with_context(|| format!("recording pose stream {}", path.display()))?;
            Ok(stream)
        }
        None => Ok(run.scene.record_poses(run.frames)),
    }
}

fn frame_loop(run: &RunConfig) -> Result<RunStats> {
    let poses = obtain_poses(run)?;
    let mut stats = RunStats::default();

    // Hybrid mode builds its static backend once, outside the timed loop.
    let static_bvh = match run.backend {
        Backend::Hybrid => {
            let static_scene = run.scene.static_scene();
            if static_scene.is_empty() {
                None
            } else {
                Some(ReferenceBvh::build(static_scene))
            }
        }
        _ => None,
    };

    let mut soft_cap_warned = false;
    for frame in 0..run.frames {
        // World assembly is charged to the harness, not the backend.
        let full = run.scene.frame_scene(&poses, frame);
        let dynamic = match run.backend {
            Backend::Hybrid => Some(run.scene.dynamic_scene(&poses, frame)),
            _ => None,
        };

        let start = Instant::now();
        let (buffer, counters) = cast_with_backend(run, &full, dynamic.as_ref(), static_bvh.as_ref());
        let ms = start.elapsed().as_secs_f64() * 1e3;

        if counters.soft_cap_exceeded && !soft_cap_warned {
            eprintln!(
                "warning: deferred list exceeded the soft cap of {} entries at frame {frame}",
                run.thresholds.deferred_soft_cap
            );
            soft_cap_warned = true;
        }

        if run.verify && is_sampled(frame, run.frames) {
            let work = run.sensors.total_rays() as u64 * full.len() as u64;
            if work > run.oracle_budget {
                bail!(
                    "oracle budget exceeded: frame {frame} needs {work} ray-triangle tests, budget {}",
                    run.oracle_budget
                );
            }
            let oracle = brute_force_cast(&full, &run.sensors, run.facing);
            let report = compare_hit_buffers(&oracle, &buffer, 0.001)
                .expect("backend and oracle buffers have equal lengths");
            stats.verifies.push(VerifyRow { frame, report });
        }

        if frame + 1 == run.frames {
            if let Some(path) = &run.point_cloud_path {
                let records = finalize_output(&buffer, &run.sensors);
                export::export_to_file(path, &records, &run.sensors)?;
                println!("point cloud written to {}", path.display());
            }
        }

        stats.frames.push(FrameRow {
            frame,
            ms,
            triangles: full.len(),
            digest: full.digest,
            counters,
        });
    }
    Ok(stats)
}

/// Oracle sampling rule: floor(frames/10) samples, every tenth frame.
fn is_sampled(frame: u32, frames: u32) -> bool {
    frame % 10 == 0 && frame / 10 < frames / 10
}

fn cast_with_backend(
    run: &RunConfig,
    full: &PreparedScene,
    dynamic: Option<&PreparedScene>,
    static_bvh: Option<&ReferenceBvh>,
) -> (HitBuffer, CastCounters) {
    match run.backend {
        Backend::Sweep => cast_frame(full, &run.sensors, &run.thresholds, run.facing),
        Backend::Brute => {
            (brute_force_cast(full, &run.sensors, run.facing), CastCounters::default())
        }
        Backend::Bvh => {
            // Rebuild-per-frame reference policy: construction is part of
            // the timed cost.
            let bvh = ReferenceBvh::build(full.clone());
            (bvh.cast(&run.sensors, run.facing), CastCounters::default())
        }
        Backend::Hybrid => hybrid_cast_frame(
            dynamic.expect("hybrid assembles a dynamic subset"),
            static_bvh,
            &run.sensors,
            &run.thresholds,
            run.facing,
        ),
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = args.config.parent().unwrap_or(std::path::Path::new(".")).to_path_buf();
    let levels = [32u16, 64, 96, 128];
    let mut out = String::from("# sweepcast sweep v1\n");
    out.push_str("columns channel_limit ray_limit mean_ms inline_pairs deferred_pairs intersection_tests\n");
    for &channel_limit in &levels {
        for &ray_limit in &levels {
            let mut fc = config::load(&args.config)?;
            fc.run.backend = "sweep".into();
            fc.run.verify = false;
            if let Some(f) = args.frames {
                fc.run.frames = f;
            }
            if let Some(t) = args.threads {
                fc.run.threads = t;
            }
            fc.thresholds.channel_limit = channel_limit;
            fc.thresholds.ray_limit = ray_limit;
            fc.output.stats = None;
            fc.output.point_cloud = None;
            let run = config::resolve(fc, &base)?;
            let stats = execute(run)?;
            let ms: Vec<f64> = stats.frames.iter().map(|f| f.ms).collect();
            let mean = stats::summarize(&ms).mean_ms;
            let n = stats.frames.len().max(1) as u64;
            let inline: u64 = stats.frames.iter().map(|f| f.counters.inline_pairs).sum::<u64>() / n;
            let deferred: u64 =
                stats.frames.iter().map(|f| f.counters.deferred_pairs).sum::<u64>() / n;
            let tests: u64 =
                stats.frames.iter().map(|f| f.counters.intersection_tests()).sum::<u64>() / n;
            out.push_str(&format!(
                "row {channel_limit} {ray_limit} {mean} {inline} {deferred} {tests}\n"
            ));
        }
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, &out)?;
            println!("sweep table written to {}", path.display());
        }
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let run_args = RunArgs {
        config: args.config,
        backend: args.backend,
        frames: Some(args.frame + 1),
        seed: None,
        verify: false,
        out: None,
        export_ply: None,
        threads: args.threads,
    };
    let mut run = load_with_overrides(&run_args, false)?;
    run.point_cloud_path = Some(args.out.clone());
    run.stats_path = None;
    let run_frames = run.frames;
    let stats = execute(run)?;
    println!(
        "frame {} cast in {:.3} ms, point cloud at {}",
        run_frames - 1,
        stats.frames.last().map(|f| f.ms).unwrap_or(0.0),
        args.out.display()
    );
    Ok(())
}
