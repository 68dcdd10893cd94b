//! Pacing for replays: mission time mapped onto wall time at a speed factor.

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speed {
    /// Mission-time multiplier; 1.0 is real time.
    RealTime(f64),
    /// As fast as possible, no pacing.
    Afap,
}

impl Speed {
    pub fn validate(self) -> Result<Self, ConfigError> {
        match self {
            Speed::RealTime(s) if !(s.is_finite() && s > 0.0) => {
                Err(ConfigError::Invalid(format!("speed must be positive, got {s}")))
            }
            s => Ok(s),
        }
    }
}

impl Default for Speed {
    fn default() -> Self {
        Speed::RealTime(1.0)
    }
}

impl fmt::Display for Speed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speed::RealTime(s) => write!(f, "{s}x"),
            Speed::Afap => f.write_str("afap"),
        }
    }
}

impl FromStr for Speed {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("afap") || s.eq_ignore_ascii_case("max") {
            return Ok(Speed::Afap);
        }
        let num = s.strip_suffix('x').unwrap_or(s);
        let v: f64 = num
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("bad speed `{s}`")))?;
        Speed::RealTime(v).validate()
    }
}

/// Maps mission milliseconds onto the wall clock.
///
/// Changing speed re-anchors at the current mission time so already elapsed
/// ticks are not rescaled.
#[derive(Debug, Clone)]
pub struct ReplayClock {
    speed: Speed,
    /// Unset while unpaced, so offline runs never read the wall clock.
    wall_anchor: Option<Instant>,
    mission_anchor_ms: f64,
    last_mission_ms: f64,
}

/// Creates a clock anchored at mission time zero, now.
pub fn replay_clock(speed: Speed) -> Result<ReplayClock, ConfigError> {
    Ok(ReplayClock::new(speed.validate()?))
}

impl ReplayClock {
    pub fn new(speed: Speed) -> Self {
        Self {
            speed,
            wall_anchor: Self::anchor_for(speed),
            mission_anchor_ms: 0.0,
            last_mission_ms: 0.0,
        }
    }

    fn anchor_for(speed: Speed) -> Option<Instant> {
        matches!(speed, Speed::RealTime(_)).then(Instant::now)
    }

    pub fn speed(&self) -> Speed {
        self.speed
    }

    /// Wall-clock spacing of frame ticks, `None` when unpaced.
    pub fn tick_interval(&self, fps: f64) -> Option<Duration> {
        match self.speed {
            Speed::RealTime(s) => Some(Duration::from_secs_f64(1.0 / (fps * s))),
            Speed::Afap => None,
        }
    }

    pub fn set_speed(&mut self, speed: Speed) -> Result<(), ConfigError> {
        let speed = speed.validate()?;
        self.wall_anchor = Self::anchor_for(speed);
        self.mission_anchor_ms = self.last_mission_ms;
        self.speed = speed;
        Ok(())
    }

    /// Wall instant at which `mission_ms` is due, `None` when unpaced.
    pub fn deadline(&self, mission_ms: f64) -> Option<Instant> {
        match (self.speed, self.wall_anchor) {
            (Speed::RealTime(s), Some(anchor)) => {
                let ahead = ((mission_ms - self.mission_anchor_ms) / s).max(0.0);
                Some(anchor + Duration::from_secs_f64(ahead / 1000.0))
            }
            _ => None,
        }
    }

    /// Blocks until `mission_ms` is due.
    pub fn wait_until(&mut self, mission_ms: f64) {
        if let Some(due) = self.deadline(mission_ms) {
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        self.last_mission_ms = mission_ms;
    }

    /// Records progress without sleeping (for async drivers that sleep themselves).
    pub fn mark(&mut self, mission_ms: f64) {
        self.last_mission_ms = mission_ms;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_spacing() {
        let c = replay_clock(Speed::RealTime(1.0)).unwrap();
        let t = c.tick_interval(30.0).unwrap().as_secs_f64() * 1000.0;
        assert!((t - 33.333).abs() < 0.01);
        let c = replay_clock(Speed::RealTime(2.0)).unwrap();
        let t = c.tick_interval(30.0).unwrap().as_secs_f64() * 1000.0;
        assert!((t - 16.667).abs() < 0.01);
        assert!(replay_clock(Speed::Afap).unwrap().tick_interval(30.0).is_none());
    }

    #[test]
    fn afap_does_not_sleep() {
        let mut c = replay_clock(Speed::Afap).unwrap();
        let start = Instant::now();
        for i in 0..1000 {
            c.wait_until(i as f64 * 33.3);
        }
        assert!(start.elapsed() < Duration::from_millis(50));
    }

    #[test]
    fn paced_ticks_follow_speed() {
        let mut c = replay_clock(Speed::RealTime(4.0)).unwrap();
        let start = Instant::now();
        c.wait_until(400.0);
        let el = start.elapsed().as_secs_f64() * 1000.0;
        assert!((100.0..160.0).contains(&el), "{el}");
    }

    #[test]
    fn rejects_bad_speed() {
        assert!(replay_clock(Speed::RealTime(0.0)).is_err());
        assert!(replay_clock(Speed::RealTime(-1.0)).is_err());
        assert_eq!("2x".parse::<Speed>().unwrap(), Speed::RealTime(2.0));
        assert_eq!("AFAP".parse::<Speed>().unwrap(), Speed::Afap);
        assert!("0".parse::<Speed>().is_err());
    }
}
