//! Scenario file: one TOML table per subsystem, unknown keys rejected.

use std::path::Path;

use serde::Deserialize;

use crate::error::ConfigError;
use crate::haptics::FixtureParams;
use crate::human::HumanParams;
use crate::phantom::{PhantomConfig, PhantomScene};
use crate::robot::RobotConfig;
use crate::ultrasound::UltrasoundConfig;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub one_way_mean_us: f64,
    pub one_way_std_us: f64,
    /// Rate of pose commands from the expert side.
    pub command_rate_hz: f64,
    /// Rate of pose and force telemetry back to the expert.
    pub telemetry_rate_hz: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            one_way_mean_us: 2500.0,
            one_way_std_us: 2000.0,
            command_rate_hz: 50.0,
            telemetry_rate_hz: 50.0,
        }
    }
}

/// Scripted stand-in for the sonographer at the haptic device.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertParams {
    /// Time between lateral corrections, s.
    pub decision_interval_s: f64,
    /// Visual reaction delay on top of the channel, s.
    pub reaction_delay_s: f64,
    /// Lateral correction per pixel of perceived centroid error, m/px.
    pub lateral_gain_m_per_px: f64,
    /// Std of the expert's misjudgement of the image center, px.
    pub perception_noise_px: f64,
    /// Correlation length of that misjudgement along the sweep, mm.
    pub perception_length_mm: f64,
    /// Force the expert tries to feel, N.
    pub depth_setpoint_n: f64,
    /// Depth integrator gain, m/(N·s).
    pub depth_gain: f64,
    /// Vertical speed when out of contact, m/s.
    pub approach_speed: f64,
    pub scan_speed: f64,
    pub move_speed: f64,
    pub yaw_rate_deg: f64,
    /// Landing error per meter travelled on a repositioning move.
    pub overshoot_std: f64,
    /// Slow hand drift, mm and s.
    pub wander_std_mm: f64,
    pub wander_tau_s: f64,
    /// Placement error of the first search attempt; later attempts shrink.
    pub search_pos_std_mm: f64,
    pub search_yaw_std_deg: f64,
    pub search_shrink: f64,
    /// Time spent judging a view after arriving, s.
    pub look_time_s: f64,
    /// How long a good view may be lost before the expert gives up on it, s.
    pub loss_patience_s: f64,
    pub seed: u64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            decision_interval_s: 0.25,
            reaction_delay_s: 0.3,
            lateral_gain_m_per_px: 3.5e-5,
            perception_noise_px: 40.0,
            perception_length_mm: 6.0,
            depth_setpoint_n: 1.0,
            depth_gain: 0.0028,
            approach_speed: 0.005,
            scan_speed: 0.0007,
            move_speed: 0.015,
            yaw_rate_deg: 30.0,
            overshoot_std: 0.05,
            wander_std_mm: 0.5,
            wander_tau_s: 4.0,
            search_pos_std_mm: 3.0,
            search_yaw_std_deg: 6.0,
            search_shrink: 0.7,
            look_time_s: 1.0,
            loss_patience_s: 1.0,
            seed: 0,
        }
    }
}

impl ExpertParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let non_negative = [
            ("reaction_delay_s", self.reaction_delay_s),
            ("lateral_gain_m_per_px", self.lateral_gain_m_per_px),
            ("perception_noise_px", self.perception_noise_px),
            ("depth_setpoint_n", self.depth_setpoint_n),
            ("overshoot_std", self.overshoot_std),
            ("wander_std_mm", self.wander_std_mm),
            ("search_pos_std_mm", self.search_pos_std_mm),
            ("search_yaw_std_deg", self.search_yaw_std_deg),
            ("look_time_s", self.look_time_s),
            ("loss_patience_s", self.loss_patience_s),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid(format!("expert.{name} must be finite and >= 0, got {v}")));
            }
        }
        let positive = [
            ("decision_interval_s", self.decision_interval_s),
            ("perception_length_mm", self.perception_length_mm),
            ("depth_gain", self.depth_gain),
            ("approach_speed", self.approach_speed),
            ("scan_speed", self.scan_speed),
            ("move_speed", self.move_speed),
            ("yaw_rate_deg", self.yaw_rate_deg),
            ("wander_tau_s", self.wander_tau_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("expert.{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.search_shrink > 0.0 && self.search_shrink <= 1.0) {
            return Err(ConfigError::Invalid("expert.search_shrink must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Continuous time a view must be held, s.
    pub hold_time_s: f64,
    /// Fraction of sweep frames that must show the vessel.
    pub sweep_found_fraction: f64,
    pub timeout_s: f64,
    pub tick_us: u64,
    /// Allowed distance of the probe from the marker line, mm.
    pub marker_tolerance_mm: f64,
    /// Allowed distance of the probe from the bifurcation, mm.
    pub bifurcation_tolerance_mm: f64,
    /// Minimum lateral extent of a longitudinal band, as a fraction of the image width.
    pub band_fraction: f64,
    /// x where the sweep along the large vessel ends, mm.
    pub large_sweep_end_mm: f64,
    /// Arc distance from the bifurcation where the branch sweep starts, mm.
    pub branch_sweep_start_mm: f64,
    /// Hand noise of the direct method relative to the human follower.
    pub direct_noise_scale: f64,
    /// Initial hand position, mm.
    pub start_mm: [f64; 3],
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            hold_time_s: 5.0,
            sweep_found_fraction: 0.95,
            timeout_s: 600.0,
            tick_us: 1000,
            marker_tolerance_mm: 5.0,
            bifurcation_tolerance_mm: 4.0,
            band_fraction: 0.6,
            large_sweep_end_mm: 70.0,
            branch_sweep_start_mm: 12.0,
            direct_noise_scale: 0.3,
            start_mm: [25.0, 30.0, 75.0],
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tick_us == 0 {
            return Err(ConfigError::Invalid("task.tick_us must be > 0".into()));
        }
        let positive = [
            ("hold_time_s", self.hold_time_s),
            ("timeout_s", self.timeout_s),
            ("marker_tolerance_mm", self.marker_tolerance_mm),
            ("bifurcation_tolerance_mm", self.bifurcation_tolerance_mm),
            ("branch_sweep_start_mm", self.branch_sweep_start_mm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("task.{name} must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [("sweep_found_fraction", self.sweep_found_fraction), ("band_fraction", self.band_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("task.{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.direct_noise_scale >= 0.0) {
            return Err(ConfigError::Invalid("task.direct_noise_scale must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub phantom: PhantomConfig,
    /// Virtual fixture; defaults to the phantom's own contact law.
    pub fixture: Option<FixtureParams>,
    pub channel: ChannelConfig,
    pub robot: RobotConfig,
    pub human: HumanParams,
    pub ultrasound: UltrasoundConfig,
    pub expert: ExpertParams,
    pub task: TaskConfig,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn fixture_params(&self) -> FixtureParams {
        self.fixture.unwrap_or(FixtureParams {
            k: self.phantom.contact.stiffness,
            b: self.phantom.contact.damping,
        })
    }

    /// Checks every section and that the phantom and arm can be built.
    pub fn validate(&self) -> Result<PhantomScene, ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let scene = PhantomScene::build(&self.phantom).map_err(|e| invalid(&e))?;
        self.fixture_params().validate()?;
        let c = &self.channel;
        if !(c.command_rate_hz > 0.0 && c.telemetry_rate_hz > 0.0) {
            return Err(ConfigError::Invalid("channel rates must be > 0".into()));
        }
        crate::channel::LatencyModel {
            one_way_mean_us: c.one_way_mean_us,
            one_way_std_us: c.one_way_std_us,
            seed: 0,
        }
        .validate()?;
        self.robot.validate().map_err(|e| invalid(&e))?;
        self.human.validate()?;
        self.ultrasound.validate()?;
        self.expert.validate()?;
        self.task.validate()?;
        let tick_hz = 1e6 / self.task.tick_us as f64;
        for (name, hz) in [
            ("channel.command_rate_hz", c.command_rate_hz),
            ("channel.telemetry_rate_hz", c.telemetry_rate_hz),
            ("ultrasound.frame_rate_hz", self.ultrasound.frame_rate_hz),
        ] {
            if hz > tick_hz {
                return Err(ConfigError::Invalid(format!("{name} exceeds the control rate {tick_hz} Hz")));
            }
        }
        let start = self.task.start_mm;
        if start[2] * 1e-3 <= scene.top_z() {
            return Err(ConfigError::Invalid("task.start_mm must lie above the phantom".into()));
        }
        Ok(scene)
    }
}
