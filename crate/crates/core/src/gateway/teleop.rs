//! Operator velocity set-points with grip-style engagement.

use serde::{Deserialize, Serialize};

use crate::geom::Twist2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeleopMode {
    #[default]
    Minimap,
    SemiImmersive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeleopConfig {
    pub default_linear: f64,
    pub default_angular: f64,
    pub max_linear: f64,
    pub max_angular: f64,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            default_linear: 0.2,
            default_angular: 0.5,
            max_linear: 1.0,
            max_angular: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TeleopEvent {
    SpeedUpLinear,
    SpeedDownLinear,
    SpeedUpAngular,
    SpeedDownAngular,
    EngageLinear {
        engaged: bool,
        #[serde(default = "forward")]
        direction: i8,
    },
    EngageAngular {
        engaged: bool,
        #[serde(default = "forward")]
        direction: i8,
    },
    Reset,
}

fn forward() -> i8 {
    1
}

/// Set-points are held as whole 0.1 steps so repeated events never drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeleopState {
    linear_steps: i64,
    angular_steps: i64,
    default_linear_steps: i64,
    default_angular_steps: i64,
    max_linear_steps: i64,
    max_angular_steps: i64,
    pub linear_engaged: bool,
    pub angular_engaged: bool,
    /// +1 or -1: drive direction chosen by the engage event.
    pub linear_direction: i8,
    pub angular_direction: i8,
    pub mode: TeleopMode,
}

fn steps(v: f64) -> i64 {
    (v * 10.0).round() as i64
}

impl TeleopState {
    pub fn new(cfg: &TeleopConfig, mode: TeleopMode) -> Self {
        let (dl, da) = (steps(cfg.default_linear), steps(cfg.default_angular));
        Self {
            linear_steps: dl,
            angular_steps: da,
            default_linear_steps: dl,
            default_angular_steps: da,
            max_linear_steps: steps(cfg.max_linear),
            max_angular_steps: steps(cfg.max_angular),
            linear_engaged: false,
            angular_engaged: false,
            linear_direction: 1,
            angular_direction: 1,
            mode,
        }
    }

    pub fn linear_set(&self) -> f64 {
        self.linear_steps as f64 / 10.0
    }

    pub fn angular_set(&self) -> f64 {
        self.angular_steps as f64 / 10.0
    }

    pub fn apply(&mut self, event: TeleopEvent) {
        match event {
            TeleopEvent::SpeedUpLinear => self.linear_steps = (self.linear_steps + 1).min(self.max_linear_steps),
            TeleopEvent::SpeedDownLinear => self.linear_steps = (self.linear_steps - 1).max(0),
            TeleopEvent::SpeedUpAngular => self.angular_steps = (self.angular_steps + 1).min(self.max_angular_steps),
            TeleopEvent::SpeedDownAngular => self.angular_steps = (self.angular_steps - 1).max(0),
            TeleopEvent::EngageLinear { engaged, direction } => {
                self.linear_engaged = engaged;
                self.linear_direction = if direction < 0 { -1 } else { 1 };
            }
            TeleopEvent::EngageAngular { engaged, direction } => {
                self.angular_engaged = engaged;
                self.angular_direction = if direction < 0 { -1 } else { 1 };
            }
            TeleopEvent::Reset => {
                self.linear_steps = self.default_linear_steps;
                self.angular_steps = self.default_angular_steps;
                self.linear_engaged = false;
                self.angular_engaged = false;
                self.linear_direction = 1;
                self.angular_direction = 1;
            }
        }
    }

    pub fn twist(&self) -> Twist2D {
        Twist2D::new(
            if self.linear_engaged { f64::from(self.linear_direction) * self.linear_set() } else { 0.0 },
            if self.angular_engaged { f64::from(self.angular_direction) * self.angular_set() } else { 0.0 },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh() -> TeleopState {
        TeleopState::new(&TeleopConfig::default(), TeleopMode::Minimap)
    }

    #[test]
    fn two_increments_from_default() {
        let mut s = fresh();
        s.apply(TeleopEvent::SpeedUpLinear);
        s.apply(TeleopEvent::SpeedUpLinear);
        assert!((s.linear_set() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn engagement_sets_twist() {
        let mut s = fresh();
        s.apply(TeleopEvent::SpeedUpLinear);
        assert_eq!(s.twist(), Twist2D::ZERO);
        s.apply(TeleopEvent::EngageLinear { engaged: true, direction: 1 });
        assert_eq!(s.twist(), Twist2D::new(0.3, 0.0));
        s.apply(TeleopEvent::EngageAngular { engaged: true, direction: -1 });
        assert_eq!(s.twist(), Twist2D::new(0.3, -0.5));
    }

    #[test]
    fn reset_restores_defaults_and_disengages() {
        let mut s = fresh();
        for e in [
            TeleopEvent::SpeedUpAngular,
            TeleopEvent::SpeedDownLinear,
            TeleopEvent::EngageLinear { engaged: true, direction: 1 },
        ] {
            s.apply(e);
        }
        s.apply(TeleopEvent::Reset);
        assert_eq!(s, fresh());
        assert_eq!(s.twist(), Twist2D::ZERO);
    }

    #[test]
    fn floors_and_ceilings() {
        let mut s = fresh();
        for _ in 0..5 {
            s.apply(TeleopEvent::SpeedDownLinear);
        }
        assert_eq!(s.linear_set(), 0.0);
        for _ in 0..30 {
            s.apply(TeleopEvent::SpeedUpLinear);
            s.apply(TeleopEvent::SpeedUpAngular);
        }
        assert_eq!(s.linear_set(), 1.0);
        assert_eq!(s.angular_set(), 2.0);
    }

    #[test]
    fn event_json_shape() {
        let e: TeleopEvent = serde_json::from_str(r#"{"event":"engage_linear","engaged":true}"#).unwrap();
        assert_eq!(e, TeleopEvent::EngageLinear { engaged: true, direction: 1 });
        let e: TeleopEvent = serde_json::from_str(r#"{"event":"reset"}"#).unwrap();
        assert_eq!(e, TeleopEvent::Reset);
    }
}
