use std::fmt;

use leo_isac::Error;

/// Reasons a command stops, each with its exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Infeasible(String),
    IterationCap(String),
    Io(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::IterationCap(_) => 4,
            Failure::Io(_) | Failure::Numerical(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Infeasible(m) => write!(f, "infeasible: {m}"),
            Failure::IterationCap(m) => write!(f, "iteration cap: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::DelayOutOfRange { .. } => Failure::Config(e.to_string()),
            Error::InfeasibleCrb { .. } | Error::InfeasibleAllocation { .. } => Failure::Infeasible(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        let cases = [
            (Error::Config("x".into()), 2),
            (Error::DelayOutOfRange { tau: 0, tau_max: 4 }, 2),
            (
                Error::InfeasibleCrb {
                    required: 2.0,
                    available: 1.0,
                },
                3,
            ),
            (
                Error::InfeasibleAllocation {
                    sum: 2.0,
                    min_common: 1.0,
                },
                3,
            ),
            (Error::Unidentifiable, 1),
            (Error::NoAdmissibleGeometry, 1),
        ];
        for (e, c) in cases {
            assert_eq!(Failure::from(e.clone()).exit_code(), c, "{e}");
        }
        assert_eq!(Failure::IterationCap(String::new()).exit_code(), 4);
        assert_eq!(Failure::Io(String::new()).exit_code(), 1);
    }
}
