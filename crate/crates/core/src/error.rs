use thiserror::Error;

/// Errors raised by the simulator and optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("inside-baseline: bistatic range {range_m} m does not exceed the baseline {baseline_m} m")]
    InsideBaseline { range_m: f64, baseline_m: f64 },

    #[error("degenerate colinear geometry: ellipsoid inversion denominator is not positive")]
    DegenerateColinear,

    #[error("unidentifiable: Fisher information matrix is singular")]
    Unidentifiable,

    #[error("infeasible common-rate allocation: sum {sum} exceeds min common rate {min_common}")]
    InfeasibleAllocation { sum: f64, min_common: f64 },

    #[error("CRB constraint needs target gain {required} but the power budget reaches at most {available}")]
    InfeasibleCrb { required: f64, available: f64 },

    #[error("delay {tau} outside 1..={tau_max}")]
    DelayOutOfRange { tau: usize, tau_max: usize },

    #[error("no admissible geometry in the delay search window")]
    NoAdmissibleGeometry,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
