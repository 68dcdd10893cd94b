use thiserror::Error;

use crate::vigilance::BehaviorLabel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("vigilance threshold {0} outside the operator range [0.1, 0.9]")]
    ThresholdOutOfRange(f64),
    #[error("confidence threshold {0} must lie strictly between 0 and 1")]
    ConfidenceThreshold(f64),
    #[error("weight {weight} for {label} outside [0, 1]")]
    WeightOutOfRange { label: BehaviorLabel, weight: f64 },
    #[error("the unknown label always has weight 0")]
    UnknownWeight,
    #[error("unknown behavior label `{0}`")]
    UnknownLabel(String),
    #[error("debounce window must be at least one frame")]
    Debounce,
    #[error("yellow factor {0} outside [0, 1]")]
    YellowFactor(f64),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}
