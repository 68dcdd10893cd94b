use crate::alerting::{AlertError, AlertEvent, AlertLevel, AlertMachine};
use crate::error::ConfigError;
use crate::vigilance::{check_theta_s, compute_vigilance, FrameObservation, VigilanceConfig, VigilanceSample};

/// Scoring plus alerting for a single stream.
#[derive(Debug, Clone)]
pub struct VigilanceMonitor {
    config: VigilanceConfig,
    alerts: AlertMachine,
}

impl VigilanceMonitor {
    pub fn new(config: VigilanceConfig) -> Self {
        Self {
            config,
            alerts: AlertMachine::new(),
        }
    }

    pub fn config(&self) -> &VigilanceConfig {
        &self.config
    }

    pub fn level(&self) -> AlertLevel {
        self.alerts.level()
    }

    pub fn alerts(&self) -> &AlertMachine {
        &self.alerts
    }

    /// Takes effect from the next processed frame.
    pub fn set_theta(&mut self, theta_s: f64) -> Result<(), ConfigError> {
        check_theta_s(theta_s)?;
        self.config.theta_s = theta_s;
        Ok(())
    }

    pub fn process(
        &mut self,
        frame: &FrameObservation,
    ) -> Result<(VigilanceSample, Option<AlertEvent>), AlertError> {
        let sample = compute_vigilance(frame, &self.config);
        let event = self.alerts.step(&sample, &self.config)?;
        Ok((sample, event))
    }

    /// Feeds an already computed sample (e.g. a backend failure placeholder).
    pub fn observe(&mut self, sample: &VigilanceSample) -> Result<Option<AlertEvent>, AlertError> {
        self.alerts.step(sample, &self.config)
    }
}
