//! JSON experiment configuration.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use wallbrace_core::controller::{BaselineGains, ControllerConfig};
use wallbrace_core::geometry::{Side, Wall};
use wallbrace_core::hlip::HlipConfig;
use wallbrace_core::mpc::MpcConfig;
use wallbrace_core::plant::PlantConfig;
use wallbrace_core::srb::RobotParams;
use wallbrace_core::supervisor::SupervisorConfig;

/// Inclusive range `start, start + step, ..., stop`.
fn range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub forces: Vec<f64>,
    pub heights: Vec<f64>,
    pub sides: Vec<Side>,
    pub speeds: Vec<f64>,
    pub push_times: Vec<f64>,
    pub push_duration: f64,
    /// Simulated time after the push starts.
    pub post_window: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            forces: range(30.0, 100.0, 10.0),
            heights: range(0.1, 0.5, 0.1),
            sides: vec![Side::Left, Side::Right],
            speeds: range(0.0, 0.5, 0.1),
            push_times: range(2.0, 3.0, 0.5),
            push_duration: 0.2,
            post_window: 5.0,
        }
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub force: f64,
    pub height: f64,
    pub side: Side,
    pub speed: f64,
    pub push_time: f64,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.forces.len() * self.heights.len() * self.sides.len() * self.speeds.len() * self.push_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in a fixed nesting order: force, height, side, speed, time.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::with_capacity(self.len());
        for &force in &self.forces {
            for &height in &self.heights {
                for &side in &self.sides {
                    for &speed in &self.speeds {
                        for &push_time in &self.push_times {
                            out.push(SweepCell { force, height, side, speed, push_time });
                        }
                    }
                }
            }
        }
        out
    }
}

/// A wall parallel to the walking direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    /// Lateral offset of the base line (m).
    pub y: f64,
    /// Inward lean of the top (deg).
    #[serde(default)]
    pub tilt_deg: f64,
}

impl WallSpec {
    pub fn to_wall(&self) -> Wall {
        Wall::lateral(self.y, self.tilt_deg.to_radians())
    }
}

pub fn default_walls() -> Vec<WallSpec> {
    vec![WallSpec { y: 0.8, tilt_deg: 0.0 }, WallSpec { y: -0.8, tilt_deg: 0.0 }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    /// Command before the step.
    pub initial: [f64; 3],
    /// Command after the step (vx, vy, yaw rate).
    pub target: [f64; 3],
    pub step_time: f64,
    pub duration: f64,
    /// Averaging window at the end of the run (s).
    pub settle_window: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self { initial: [0.0; 3], target: [0.5, 0.0, 0.0], step_time: 1.0, duration: 8.0, settle_window: 2.0 }
    }
}

/// In-place pushes at the CoM from evenly spaced directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllDirectionConfig {
    pub directions: usize,
    pub force_step: f64,
    pub max_force: f64,
    pub height: f64,
    pub push_time: f64,
    pub post_window: f64,
}

impl Default for AllDirectionConfig {
    fn default() -> Self {
        Self { directions: 8, force_step: 10.0, max_force: 300.0, height: 0.0, push_time: 2.0, post_window: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub robot: RobotParams,
    pub mpc: MpcConfig,
    pub hlip: HlipConfig,
    pub supervisor: SupervisorConfig,
    pub plant: PlantConfig,
    pub baseline: BaselineGains,
    pub hand_overshoot: f64,
    pub grid: SweepGrid,
    pub walls: Vec<WallSpec>,
    pub tracking: TrackingConfig,
    pub all_direction: AllDirectionConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        let c = ControllerConfig::default();
        Self {
            robot: c.robot,
            mpc: c.mpc,
            hlip: c.hlip,
            supervisor: c.supervisor,
            plant: c.plant,
            baseline: c.baseline,
            hand_overshoot: c.hand_overshoot,
            grid: SweepGrid::default(),
            walls: default_walls(),
            tracking: TrackingConfig::default(),
            all_direction: AllDirectionConfig::default(),
        }
    }
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.controller().validate().map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
        Ok(cfg)
    }

    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            robot: self.robot.clone(),
            mpc: self.mpc.clone(),
            hlip: self.hlip,
            supervisor: self.supervisor,
            plant: self.plant,
            baseline: self.baseline,
            hand_overshoot: self.hand_overshoot,
        }
    }

    pub fn wall_set(&self) -> Vec<Wall> {
        self.walls.iter().map(WallSpec::to_wall).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_1440_cells() {
        let g = SweepGrid::default();
        assert_eq!(g.forces.len(), 8);
        assert_eq!(g.heights.len(), 5);
        assert_eq!(g.speeds.len(), 6);
        assert_eq!(g.push_times.len(), 3);
        assert_eq!(g.cells().len(), 1440);
        assert!((g.heights[4] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg: HarnessConfig = serde_json::from_str(r#"{"robot": {"mass": 25.0}, "walls": []}"#).unwrap();
        assert_eq!(cfg.robot.mass, 25.0);
        assert_eq!(cfg.robot.mu, RobotParams::default().mu);
        assert!(cfg.walls.is_empty());
        assert_eq!(cfg.grid, SweepGrid::default());
    }

    #[test]
    fn round_trip() {
        let cfg = HarnessConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: HarnessConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
