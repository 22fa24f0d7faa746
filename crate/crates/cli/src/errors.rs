//! Error-to-exit-code mapping for the pipeline binary.
//!
//! Exit codes:
//!   0  success
//!   2  unreadable or invalid input (files, config values, flag semantics)
//!   3  infeasible request on valid data (too short, no windows, no scheme)
//!   4  training diverged
//!   5  numerical failure inside a solver
//!   64 command-line usage error

use std::fmt;

use volcast_core::benchmarks::BenchError;
use volcast_core::diagnostics::DiagError;
use volcast_core::infometrics::InfoError;
use volcast_core::lstm::LstmError;
use volcast_core::market_data::MarketDataError;
use volcast_core::scheme::SchemeError;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Infeasible(String),
    Diverged(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Numeric(_) => 5,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        CliError::Infeasible(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m)
            | CliError::Infeasible(m)
            | CliError::Diverged(m)
            | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<MarketDataError> for CliError {
    fn from(e: MarketDataError) -> Self {
        use MarketDataError::*;
        match e {
            Empty | TooShort { .. } | EmptyIntersection | DegenerateSplit { .. }
            | ZeroVariance => CliError::Infeasible(e.to_string()),
            SingularRegression => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SchemeError> for CliError {
    fn from(e: SchemeError) -> Self {
        use SchemeError::*;
        match e {
            TooShort { .. } | NoWindows { .. } | ZeroVarianceWindow { .. }
            | ZeroVarianceSeries | NonPositiveTarget { .. } => {
                CliError::Infeasible(e.to_string())
            }
            Io(inner) => CliError::Input(inner.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<InfoError> for CliError {
    fn from(e: InfoError) -> Self {
        use InfoError::*;
        match e {
            TooFewSamples { .. } | NoFeasibleScheme { .. } | Empty => {
                CliError::Infeasible(e.to_string())
            }
            Scheme(inner) => CliError::from(inner),
            Io(inner) => CliError::Input(inner.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<LstmError> for CliError {
    fn from(e: LstmError) -> Self {
        use LstmError::*;
        match e {
            Diverged { .. } => CliError::Diverged(e.to_string()),
            EmptyDataset | NonPositiveTarget { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        use BenchError::*;
        match e {
            Empty | TooShort { .. } | ZeroVariance | NonPositiveTarget { .. } => {
                CliError::Infeasible(e.to_string())
            }
            SingularSystem | NoConvergence(_) | NonFinite => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<DiagError> for CliError {
    fn from(e: DiagError) -> Self {
        use DiagError::*;
        match e {
            Empty | TooShort { .. } | NoModels | ZeroVariance => {
                CliError::Infeasible(e.to_string())
            }
            NonPositiveTarget { .. } => CliError::Infeasible(e.to_string()),
            LengthMismatch { .. } | NonFinite => CliError::Numeric(e.to_string()),
            BadLag | BadReps => CliError::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
