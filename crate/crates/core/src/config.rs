//! Scenario files: everything needed to reproduce one mission run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::planner::{MissionMode, PlannerSettings};
use crate::world::TankSpec;

/// A complete, self-describing mission setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub tank: TankSpec,
    pub planner: PlannerSettings,
    pub mission: MissionMode,
    pub seed: u64,
    /// Compartments to finish before stopping; 0 means all of them.
    pub quota: usize,
    /// Start position; defaults to the center of the first compartment.
    pub start: Option<[f64; 3]>,
    pub start_yaw: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            tank: TankSpec::default(),
            planner: PlannerSettings::default(),
            mission: MissionMode::Baseline,
            seed: 0,
            quota: 0,
            start: None,
            start_yaw: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.tank.validate()?;
        self.planner.gain.validate()?;
        self.planner.detection.validate()?;
        self.planner.depth.validate()?;
        self.planner.camera.validate()?;
        Ok(())
    }

    /// Effective compartment quota.
    pub fn effective_quota(&self) -> usize {
        if self.quota == 0 {
            self.tank.compartments
        } else {
            self.quota.min(self.tank.compartments)
        }
    }

    /// Start position, defaulting to the first compartment's center.
    pub fn start_position(&self) -> nalgebra::Vector3<f64> {
        match self.start {
            Some(p) => nalgebra::Vector3::new(p[0], p[1], p[2]),
            None => self.tank.compartment_center(1),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        Ok(std::fs::write(path, text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = ScenarioConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn sparse_file_fills_defaults() {
        let text = r#"{"mission":"pp-ae","seed":5,"tank":{"compartments":4,"compartment_size":5.0}}"#;
        let cfg: ScenarioConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.mission, MissionMode::PpAe);
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.tank.compartments, 4);
        assert_eq!(cfg.effective_quota(), 4);
        assert_eq!(cfg.planner, PlannerSettings::default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"missionn":"baseline"}"#;
        assert!(serde_json::from_str::<ScenarioConfig>(text).is_err());
    }

    #[test]
    fn quota_caps_at_tank_size() {
        let cfg = ScenarioConfig { quota: 99, ..ScenarioConfig::default() };
        assert_eq!(cfg.effective_quota(), cfg.tank.compartments);
    }
}
