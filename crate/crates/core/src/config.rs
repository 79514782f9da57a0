//! Planner settings as a flat TOML table; every key has a default and may be overridden
//! with `key=value` strings.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometric::GeomPlannerConfig;
use crate::path::{ActionMode, PlannerParams};
use crate::physics::SimParams;
use crate::sequence::SequenceConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad settings: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("override '{0}' is not of the form key=value")]
    Override(String),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub sim_time_step: f64,
    pub velocity_damping: f64,

    pub path_time_step: f64,
    pub penetration_threshold: f64,
    pub action_magnitude: f64,
    pub delta_t: f64,
    pub delta_r: f64,
    pub rollout_cap: usize,

    pub tree_step: f64,
    pub max_penetration: f64,
    pub goal_probability: f64,

    /// Seconds per path attempt for two-part assemblies.
    pub t_max: f64,
    /// Seconds per path attempt when rotations are searched.
    pub t_max_rotation: f64,
    /// Seconds per path attempt inside a sequence.
    pub t_max_part: f64,
    /// Seconds per sequence.
    pub total_t_max: f64,
    pub path_seeds: u64,
    pub sequence_seeds: u64,
    pub group_size: usize,
    pub workers: usize,
    /// Seconds per free-space connection in assembly plans.
    pub t_connect: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let sim = SimParams::default();
        let path = PlannerParams::default();
        let geom = GeomPlannerConfig::default();
        Self {
            contact_stiffness: sim.contact_stiffness,
            contact_damping: sim.contact_damping,
            sim_time_step: sim.substep,
            velocity_damping: sim.velocity_damping,
            path_time_step: path.step_time,
            penetration_threshold: path.penetration,
            action_magnitude: path.magnitude,
            delta_t: path.delta_t,
            delta_r: path.delta_r,
            rollout_cap: path.rollout_cap,
            tree_step: geom.step,
            max_penetration: geom.max_penetration,
            goal_probability: geom.goal_probability,
            t_max: 300.0,
            t_max_rotation: 600.0,
            t_max_part: 120.0,
            total_t_max: 7200.0,
            path_seeds: 6,
            sequence_seeds: 3,
            group_size: 1,
            workers: 1,
            t_connect: 60.0,
        }
    }
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, &[])
    }

    /// Settings from TOML text with `key=value` overrides applied on top.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse()?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let (k, v) = (k.trim(), v.trim());
            // Bare words are taken as strings.
            let value = format!("x = {v}").parse::<toml::Table>().map(|mut t| t.remove("x").expect("parsed key")).unwrap_or_else(|_| toml::Value::String(v.to_string()));
            table.insert(k.to_string(), value);
        }
        let s: Settings = table.try_into()?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("contact_stiffness", self.contact_stiffness),
            ("sim_time_step", self.sim_time_step),
            ("path_time_step", self.path_time_step),
            ("action_magnitude", self.action_magnitude),
            ("tree_step", self.tree_step),
            ("t_max", self.t_max),
            ("t_max_rotation", self.t_max_rotation),
            ("t_max_part", self.t_max_part),
            ("total_t_max", self.total_t_max),
            ("t_connect", self.t_connect),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(ConfigError::Invalid(format!("{k} must be positive, got {v}")));
        }
        if !(0.0..=1.0).contains(&self.goal_probability) {
            return Err(ConfigError::Invalid(format!("goal_probability must lie in [0, 1], got {}", self.goal_probability)));
        }
        if self.group_size == 0 || self.workers == 0 || self.rollout_cap == 0 {
            return Err(ConfigError::Invalid("group_size, workers and rollout_cap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            contact_stiffness: self.contact_stiffness,
            contact_damping: self.contact_damping,
            substep: self.sim_time_step,
            velocity_damping: self.velocity_damping,
            ..SimParams::default()
        }
    }

    pub fn planner_params(&self) -> PlannerParams {
        PlannerParams {
            delta_t: self.delta_t,
            delta_r: self.delta_r,
            step_time: self.path_time_step,
            magnitude: self.action_magnitude,
            penetration: self.penetration_threshold,
            rollout_cap: self.rollout_cap,
            sim: self.sim_params(),
        }
    }

    pub fn geom_config(&self, seed: u64) -> GeomPlannerConfig {
        GeomPlannerConfig { step: self.tree_step, max_penetration: self.max_penetration, goal_probability: self.goal_probability, seed }
    }

    /// Per-attempt budget for a two-part path in the given mode.
    pub fn path_budget(&self, mode: ActionMode) -> Duration {
        Duration::from_secs_f64(match mode {
            ActionMode::Translation => self.t_max,
            ActionMode::TranslationRotation => self.t_max_rotation,
        })
    }

    pub fn sequence_config(&self, mode: ActionMode, progressive: bool) -> SequenceConfig {
        SequenceConfig {
            t_max: Duration::from_secs_f64(self.t_max_part),
            total: Duration::from_secs_f64(self.total_t_max),
            progressive,
            mode,
            group_size: self.group_size,
            params: self.planner_params(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_planner_defaults() {
        let s = Settings::default();
        assert_eq!(s.planner_params(), PlannerParams::default());
        assert_eq!(s.geom_config(0), GeomPlannerConfig::default());
        assert_eq!((s.contact_stiffness, s.contact_damping, s.sim_time_step), (1e6, 0.0, 1e-3));
        assert_eq!((s.path_time_step, s.penetration_threshold, s.action_magnitude, s.delta_t, s.delta_r), (0.1, 0.01, 100.0, 0.05, 0.5));
        assert_eq!((s.tree_step, s.max_penetration, s.goal_probability), (0.01, 0.01, 0.2));
        assert_eq!((s.t_max, s.t_max_rotation, s.t_max_part, s.total_t_max), (300.0, 600.0, 120.0, 7200.0));
        assert_eq!((s.path_seeds, s.sequence_seeds), (6, 3));
    }

    #[test]
    fn round_trips_through_toml() {
        let s = Settings { delta_t: 0.07, workers: 3, ..Default::default() };
        assert_eq!(Settings::parse(&s.to_toml(), &[]).unwrap(), s);
    }

    #[test]
    fn overrides_and_partial_files() {
        let s = Settings::parse("delta_r = 0.25\n", &["t_max = 12".into(), "group_size=2".into()]).unwrap();
        assert_eq!((s.delta_r, s.t_max, s.group_size), (0.25, 12.0, 2));
        assert_eq!(s.delta_t, 0.05);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(Settings::parse("speed = 3\n", &[]).is_err());
        assert!(Settings::parse("", &["t_max=0".into()]).is_err());
        assert!(Settings::parse("", &["goal_probability=2".into()]).is_err());
        assert!(Settings::parse("", &["t_max".into()]).is_err());
        assert!(Settings::parse("t_max = \"long\"\n", &[]).is_err());
    }
}
