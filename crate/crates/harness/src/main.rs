use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use wallbrace::config::HarnessConfig;
use wallbrace::experiments::{
    all_direction_tolerance, compute_safeset_stats, parse_variant, read_sweep_csv, run_push_sweep, run_tracking,
    write_sweep_csv, write_tracking_csv, VARIANTS,
};
use wallbrace::io::{mode_transitions, run_traced, write_telemetry_jsonl, write_trace_csv, ScenarioSpec};
use wallbrace_core::controller::Variant;

#[derive(Parser)]
#[command(name = "wallbrace", about = "Walking and wall-bracing push recovery experiments on a rigid-body plant")]
struct Cli {
    /// JSON configuration; defaults are used for missing sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// HlipOnly, SrbMpcHlip or all.
    #[arg(long, global = true, default_value = "all")]
    variant: String,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stepped velocity command; writes tracking.csv and tracking_summary.json.
    Track,
    /// Push sweep over the grid; writes sweep.csv and summary.json.
    Sweep {
        /// Also measure the in-place all-direction push tolerance.
        #[arg(long)]
        all_directions: bool,
    },
    /// One scenario file with a full trace dump.
    Scenario {
        /// Scenario JSON (variant, walls, pushes, commands, duration).
        file: PathBuf,
    },
    /// Statistics from an existing sweep CSV.
    Stats {
        /// Results CSV; defaults to OUT/sweep.csv.
        csv: Option<PathBuf>,
    },
}

fn variants(s: &str) -> Result<Vec<Variant>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(VARIANTS.to_vec());
    }
    s.split(',')
        .map(|v| parse_variant(v.trim()).with_context(|| format!("unknown variant {v}")))
        .collect()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    let vs = variants(&cli.variant)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let controller = cfg.controller();

    match cli.command {
        Cmd::Track => {
            let mut summaries = Vec::new();
            let mut samples = Vec::new();
            for v in &vs {
                let (s, mut trace) = run_tracking(*v, &controller, &cfg.tracking)?;
                println!(
                    "{}: mean vx {:.3} (error {:.3}), roll-rate envelope [{:.3}, {:.3}] rad/s, failure {}",
                    v.as_str(),
                    s.mean_velocity[0],
                    s.steady_state_error[0],
                    s.roll_rate_envelope[0],
                    s.roll_rate_envelope[1],
                    s.failure_code
                );
                summaries.push(s);
                samples.append(&mut trace);
            }
            write_tracking_csv(&samples, BufWriter::new(File::create(cli.out.join("tracking.csv"))?))?;
            write_json(&cli.out.join("tracking_summary.json"), &summaries)?;
        }
        Cmd::Sweep { all_directions } => {
            let walls = cfg.wall_set();
            let records = run_push_sweep(&cfg.grid, &walls, &vs, &controller, cli.parallel)?;
            write_sweep_csv(&records, BufWriter::new(File::create(cli.out.join("sweep.csv"))?))?;
            let mut tolerances = Vec::new();
            if all_directions {
                for v in &vs {
                    let f = all_direction_tolerance(*v, &controller, &[], &cfg.all_direction, cli.parallel)?;
                    tolerances.push((*v, f));
                }
            }
            let stats = compute_safeset_stats(&records, &tolerances);
            for s in &stats.variants {
                println!("{}: {}/{} recovered ({:.1}%)", s.variant.as_str(), s.recovered, s.total, s.percentage);
                if let Some(f) = s.all_direction_tolerance {
                    println!("{}: tolerates {f:.0} N from every direction in place", s.variant.as_str());
                }
            }
            if let Some(r) = stats.ratio {
                println!("ratio {r:.2}");
            }
            write_json(&cli.out.join("summary.json"), &stats)?;
        }
        Cmd::Scenario { file } => {
            let mut spec = ScenarioSpec::load(&file)?;
            if cli.variant != "all" {
                let v = variants(&cli.variant)?;
                if v.len() != 1 {
                    bail!("scenario runs one variant");
                }
                spec.variant = v[0];
            }
            let (result, rows) = run_traced(&spec.to_scenario(), &controller)?;
            write_trace_csv(&rows, BufWriter::new(File::create(cli.out.join("trace.csv"))?))?;
            write_telemetry_jsonl(&rows, BufWriter::new(File::create(cli.out.join("telemetry.jsonl"))?))?;
            let transitions: Vec<(f64, String)> =
                mode_transitions(&rows).into_iter().map(|(t, m)| (t, format!("{m:?}"))).collect();
            let summary = serde_json::json!({
                "variant": spec.variant,
                "outcome": if result.recovered() { "Recovered" } else { "Failed" },
                "failure_code": result.failure.as_str(),
                "failure_time_s": result.failure_time,
                "final_mode": format!("{:?}", result.final_mode),
                "hand_contact": result.hand_contact_made,
                "recovery_s": result.recovery_time,
                "peak_vdev": result.peak_velocity_deviation,
                "peak_wdev": result.peak_angular_deviation,
                "mode_transitions": transitions,
                "error": result.error.as_ref().map(|e| e.to_string()),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            write_json(&cli.out.join("result.json"), &summary)?;
        }
        Cmd::Stats { csv } => {
            let path = csv.unwrap_or_else(|| cli.out.join("sweep.csv"));
            let records = read_sweep_csv(File::open(&path).with_context(|| format!("opening {}", path.display()))?)?;
            let stats = compute_safeset_stats(&records, &[]);
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
    }
    Ok(())
}
