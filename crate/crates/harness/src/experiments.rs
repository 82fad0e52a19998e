//! Push sweep, safeset statistics, tracking runs and the in-place
//! all-direction push test.

use std::collections::BTreeMap;
use std::io::Write;

use anyhow::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wallbrace_core::controller::{ControllerConfig, Variant};
use wallbrace_core::geometry::Wall;
use wallbrace_core::mpc::Command;
use wallbrace_core::plant::PushEvent;
use wallbrace_core::sim::{run_scenario, run_scenario_with, CommandProfile, Scenario, ScenarioResult};

use crate::config::{AllDirectionConfig, HarnessConfig, SweepCell, SweepGrid, TrackingConfig};

pub const VARIANTS: [Variant; 2] = [Variant::HlipOnly, Variant::SrbMpcHlip];

pub fn parse_variant(s: &str) -> Option<Variant> {
    match s.to_ascii_lowercase().as_str() {
        "hliponly" | "hlip" | "baseline" => Some(Variant::HlipOnly),
        "srbmpchlip" | "mpc" | "full" => Some(Variant::SrbMpcHlip),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub variant: Variant,
    pub cell: SweepCell,
    pub recovered: bool,
    pub failure_code: String,
    pub recovery_s: f64,
    pub peak_vdev: f64,
    pub peak_wdev: f64,
    /// Largest contact-row violation of the applied wrench over the run.
    /// Not stored in the CSV.
    #[serde(default)]
    pub max_violation: f64,
    /// Controller error text for runs that crashed.
    pub diagnostic: Option<String>,
}

/// Build the scenario for one grid cell.
pub fn cell_scenario(variant: Variant, cell: &SweepCell, grid: &SweepGrid, walls: &[Wall]) -> Scenario {
    let mut push = PushEvent::lateral(cell.force, cell.side, cell.height, cell.push_time);
    push.duration = grid.push_duration;
    Scenario {
        variant,
        walls: walls.to_vec(),
        pushes: vec![push],
        commands: CommandProfile::constant(Command { vx: cell.speed, vy: 0.0, yaw_rate: 0.0 }),
        duration: cell.push_time + grid.post_window,
    }
}

fn record(variant: Variant, cell: SweepCell, outcome: Result<ScenarioResult, String>) -> SweepRecord {
    match outcome {
        Ok(r) => {
            let diagnostic = r.error.as_ref().map(|e| e.to_string());
            let failure_code = if diagnostic.is_some() { "controller_error".to_string() } else { r.failure.as_str().to_string() };
            SweepRecord {
                variant,
                cell,
                recovered: r.recovered(),
                failure_code,
                recovery_s: r.recovery_time,
                peak_vdev: r.peak_velocity_deviation,
                peak_wdev: r.peak_angular_deviation,
                max_violation: r.max_constraint_violation,
                diagnostic,
            }
        }
        Err(e) => SweepRecord {
            variant,
            cell,
            recovered: false,
            failure_code: "controller_error".to_string(),
            recovery_s: 0.0,
            peak_vdev: 0.0,
            peak_wdev: 0.0,
            max_violation: 0.0,
            diagnostic: Some(e),
        },
    }
}

fn pool(parallel: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(parallel.max(1)).build()?)
}

/// One record per cell per variant, ordered by variant then grid order.
/// Individual failures never abort the sweep.
pub fn run_push_sweep(
    grid: &SweepGrid,
    walls: &[Wall],
    variants: &[Variant],
    config: &ControllerConfig,
    parallel: usize,
) -> Result<Vec<SweepRecord>> {
    let cells = grid.cells();
    let jobs: Vec<(Variant, SweepCell)> =
        variants.iter().flat_map(|&v| cells.iter().map(move |c| (v, *c))).collect();
    let pool = pool(parallel)?;
    let out = pool.install(|| {
        jobs.par_iter()
            .map(|(v, c)| {
                let sc = cell_scenario(*v, c, grid, walls);
                let outcome = std::panic::catch_unwind(|| run_scenario(&sc, config))
                    .map_err(|_| "panic".to_string())
                    .and_then(|r| r.map_err(|e| e.to_string()));
                record(*v, *c, outcome)
            })
            .collect()
    });
    Ok(out)
}

pub const CSV_HEADER: [&str; 11] = [
    "variant",
    "force_N",
    "height_m",
    "side",
    "speed_mps",
    "push_time_s",
    "outcome",
    "failure_code",
    "recovery_s",
    "peak_vdev",
    "peak_wdev",
];

fn side_str(s: wallbrace_core::geometry::Side) -> &'static str {
    match s {
        wallbrace_core::geometry::Side::Left => "left",
        wallbrace_core::geometry::Side::Right => "right",
    }
}

pub fn write_sweep_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.variant.as_str().to_string(),
            format!("{:.1}", r.cell.force),
            format!("{:.2}", r.cell.height),
            side_str(r.cell.side).to_string(),
            format!("{:.2}", r.cell.speed),
            format!("{:.2}", r.cell.push_time),
            if r.recovered { "Recovered".to_string() } else { "Failed".to_string() },
            r.failure_code.clone(),
            format!("{:.3}", r.recovery_s),
            format!("{:.4}", r.peak_vdev),
            format!("{:.4}", r.peak_wdev),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a results CSV back into records (diagnostics are not stored).
pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<SweepRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("");
        let variant = parse_variant(get(0)).ok_or_else(|| anyhow::anyhow!("unknown variant {}", get(0)))?;
        let side = match get(3) {
            "left" => wallbrace_core::geometry::Side::Left,
            "right" => wallbrace_core::geometry::Side::Right,
            s => anyhow::bail!("unknown side {s}"),
        };
        out.push(SweepRecord {
            variant,
            cell: SweepCell {
                force: get(1).parse()?,
                height: get(2).parse()?,
                side,
                speed: get(4).parse()?,
                push_time: get(5).parse()?,
            },
            recovered: get(6) == "Recovered",
            failure_code: get(7).to_string(),
            recovery_s: get(8).parse()?,
            peak_vdev: get(9).parse()?,
            peak_wdev: get(10).parse()?,
            max_violation: 0.0,
            diagnostic: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub variant: Variant,
    pub recovered: usize,
    pub total: usize,
    pub percentage: f64,
    /// Largest force tolerated from every direction in place, if measured.
    pub all_direction_tolerance: Option<f64>,
    pub failure_codes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafesetStats {
    pub variants: Vec<VariantStats>,
    /// Full controller percentage over baseline percentage.
    pub ratio: Option<f64>,
    /// Cells recovered by the baseline but not by the full controller.
    pub dominance_counterexamples: Vec<SweepCell>,
}

impl SafesetStats {
    pub fn get(&self, v: Variant) -> Option<&VariantStats> {
        self.variants.iter().find(|s| s.variant == v)
    }
}

pub fn compute_safeset_stats(records: &[SweepRecord], tolerances: &[(Variant, f64)]) -> SafesetStats {
    let mut variants = Vec::new();
    for v in VARIANTS {
        let rs: Vec<_> = records.iter().filter(|r| r.variant == v).collect();
        let tolerance = tolerances.iter().find(|(tv, _)| *tv == v).map(|(_, f)| *f);
        if rs.is_empty() && tolerance.is_none() {
            continue;
        }
        let recovered = rs.iter().filter(|r| r.recovered).count();
        let mut failure_codes = BTreeMap::new();
        for r in &rs {
            *failure_codes.entry(r.failure_code.clone()).or_insert(0) += 1;
        }
        variants.push(VariantStats {
            variant: v,
            recovered,
            total: rs.len(),
            percentage: if rs.is_empty() { 0.0 } else { 100.0 * recovered as f64 / rs.len() as f64 },
            all_direction_tolerance: tolerance,
            failure_codes,
        });
    }
    let pct = |v| variants.iter().find(|s: &&VariantStats| s.variant == v).map(|s| s.percentage);
    let ratio = match (pct(Variant::SrbMpcHlip), pct(Variant::HlipOnly)) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let full: BTreeMap<String, bool> = records
        .iter()
        .filter(|r| r.variant == Variant::SrbMpcHlip)
        .map(|r| (cell_key(&r.cell), r.recovered))
        .collect();
    let dominance_counterexamples = records
        .iter()
        .filter(|r| r.variant == Variant::HlipOnly && r.recovered)
        .filter(|r| full.get(&cell_key(&r.cell)) == Some(&false))
        .map(|r| r.cell)
        .collect();
    SafesetStats { variants, ratio, dominance_counterexamples }
}

fn cell_key(c: &SweepCell) -> String {
    format!("{:.3}/{:.3}/{}/{:.3}/{:.3}", c.force, c.height, side_str(c.side), c.speed, c.push_time)
}

/// Whether the controller survives an in-place push of `force` along
/// `angle` (rad, world frame) at the configured height.
pub fn survives_push(variant: Variant, config: &ControllerConfig, walls: &[Wall], ad: &AllDirectionConfig, force: f64, angle: f64) -> bool {
    let f = wallbrace_core::nalgebra::Vector3::new(force * angle.cos(), force * angle.sin(), 0.0);
    let push = match PushEvent::new(f, ad.height, ad.push_time, 0.2) {
        Ok(p) => p,
        Err(_) => return false,
    };
    let sc = Scenario {
        variant,
        walls: walls.to_vec(),
        pushes: vec![push],
        commands: CommandProfile::constant(Command::default()),
        duration: ad.push_time + ad.post_window,
    };
    run_scenario(&sc, config).map(|r| r.recovered()).unwrap_or(false)
}

/// Largest force, in `force_step` increments, that is survived from every
/// direction, with every smaller increment also survived.
pub fn all_direction_tolerance(
    variant: Variant,
    config: &ControllerConfig,
    walls: &[Wall],
    ad: &AllDirectionConfig,
    parallel: usize,
) -> Result<f64> {
    let levels: Vec<f64> = (1..).map(|i| i as f64 * ad.force_step).take_while(|f| *f <= ad.max_force + 1e-9).collect();
    let angles: Vec<f64> =
        (0..ad.directions).map(|i| 2.0 * std::f64::consts::PI * i as f64 / ad.directions as f64).collect();
    let pool = pool(parallel)?;
    let mut best = 0.0;
    for f in levels {
        let ok = pool.install(|| angles.par_iter().all(|&a| survives_push(variant, config, walls, ad, f, a)));
        if !ok {
            break;
        }
        best = f;
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSample {
    pub variant: Variant,
    pub time: f64,
    pub command_vx: f64,
    pub command_vy: f64,
    pub command_yaw_rate: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    pub roll_rate: f64,
    pub pitch_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub variant: Variant,
    pub failure_code: String,
    /// Mean absolute velocity error over the settle window, per axis.
    pub steady_state_error: [f64; 3],
    /// Heading-frame velocity averaged over the settle window.
    pub mean_velocity: [f64; 3],
    /// Roll-rate range `[min, max]` after the command step.
    pub roll_rate_envelope: [f64; 2],
}

impl TrackingSummary {
    pub fn roll_rate_width(&self) -> f64 {
        self.roll_rate_envelope[1] - self.roll_rate_envelope[0]
    }
}

pub fn tracking_profile(t: &TrackingConfig) -> CommandProfile {
    let c = |v: [f64; 3]| Command { vx: v[0], vy: v[1], yaw_rate: v[2] };
    CommandProfile { segments: vec![(0.0, c(t.initial)), (t.step_time, c(t.target))] }
}

/// Run the stepped command for one variant. Velocity errors are averaged
/// over whole steps of the settle window so the in-step sway cancels.
pub fn run_tracking(
    variant: Variant,
    config: &ControllerConfig,
    tracking: &TrackingConfig,
) -> Result<(TrackingSummary, Vec<TrackingSample>)> {
    let profile = tracking_profile(tracking);
    let sc = Scenario {
        variant,
        walls: Vec::new(),
        pushes: Vec::new(),
        commands: profile.clone(),
        duration: tracking.duration,
    };
    let mut samples = Vec::new();
    let result = run_scenario_with(&sc, config, |p, _| {
        let cmd = profile.at(p.time);
        let yaw = p.euler().z;
        let (s, c) = yaw.sin_cos();
        samples.push(TrackingSample {
            variant,
            time: p.time,
            command_vx: cmd.vx,
            command_vy: cmd.vy,
            command_yaw_rate: cmd.yaw_rate,
            vx: c * p.velocity.x + s * p.velocity.y,
            vy: -s * p.velocity.x + c * p.velocity.y,
            yaw_rate: p.omega.z,
            roll_rate: p.omega.x,
            pitch_rate: p.omega.y,
        });
    })?;
    if let Some(e) = &result.error {
        anyhow::bail!("tracking run failed: {e}");
    }
    let start = tracking.duration - tracking.settle_window;
    let window: Vec<_> = samples.iter().filter(|s| s.time >= start - 1e-9).collect();
    let n = window.len().max(1) as f64;
    let mean = |f: &dyn Fn(&TrackingSample) -> f64| window.iter().map(|s| f(s)).sum::<f64>() / n;
    let mean_velocity = [mean(&|s| s.vx), mean(&|s| s.vy), mean(&|s| s.yaw_rate)];
    let steady_state_error = [
        (mean_velocity[0] - tracking.target[0]).abs(),
        (mean_velocity[1] - tracking.target[1]).abs(),
        (mean_velocity[2] - tracking.target[2]).abs(),
    ];
    let after: Vec<f64> = samples.iter().filter(|s| s.time >= tracking.step_time).map(|s| s.roll_rate).collect();
    let lo = after.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = after.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((
        TrackingSummary {
            variant,
            failure_code: result.failure.as_str().to_string(),
            steady_state_error,
            mean_velocity,
            roll_rate_envelope: [lo, hi],
        },
        samples,
    ))
}

pub fn write_tracking_csv<W: Write>(samples: &[TrackingSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "variant", "time_s", "cmd_vx", "cmd_vy", "cmd_yaw_rate", "vx", "vy", "yaw_rate", "roll_rate", "pitch_rate",
    ])?;
    for s in samples {
        w.write_record([
            s.variant.as_str().to_string(),
            format!("{:.3}", s.time),
            format!("{:.4}", s.command_vx),
            format!("{:.4}", s.command_vy),
            format!("{:.4}", s.command_yaw_rate),
            format!("{:.6}", s.vx),
            format!("{:.6}", s.vy),
            format!("{:.6}", s.yaw_rate),
            format!("{:.6}", s.roll_rate),
            format!("{:.6}", s.pitch_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Convenience for the CLI: full sweep over the configured grid.
pub fn sweep_from_config(cfg: &HarnessConfig, variants: &[Variant], parallel: usize) -> Result<Vec<SweepRecord>> {
    run_push_sweep(&cfg.grid, &cfg.wall_set(), variants, &cfg.controller(), parallel)
}
