//! Uniform CLI failure type.
//!
//! Every error prints as one line, `error: <Code>: <message>`, so scripts
//! can grep the code while humans read the message. Codes are the variant
//! names of the underlying library errors.

use std::fmt;
use std::path::Path;

use stepsim_core::ac::AcError;
use stepsim_core::balance::BalanceError;
use stepsim_core::fault::FaultError;
use stepsim_core::runtime::RuntimeModelError;
use stepsim_core::sim::SimError;

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn file(path: &Path, err: &std::io::Error) -> Self {
        let code = if err.kind() == std::io::ErrorKind::NotFound {
            "FileNotFound"
        } else {
            "Io"
        };
        CliError::new(code, format!("{}: {err}", path.display()))
    }

    pub fn parse(path: &Path, err: impl fmt::Display) -> Self {
        CliError::new("ParseError", format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}: {}", self.code, self.message)
    }
}

impl From<RuntimeModelError> for CliError {
    fn from(e: RuntimeModelError) -> Self {
        let code = match &e {
            RuntimeModelError::EmptyMeasurements => "EmptyMeasurements",
            RuntimeModelError::NonPositiveValue { .. } => "NonPositiveValue",
            RuntimeModelError::InvalidFlopsCoeffs => "InvalidFlopsCoeffs",
            RuntimeModelError::Parse { .. } => "ParseError",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<BalanceError> for CliError {
    fn from(e: BalanceError) -> Self {
        let code = match &e {
            BalanceError::EmptyBatch => "EmptyBatch",
            BalanceError::MixedBatchIds(..) => "MixedBatchIds",
            BalanceError::ZeroRanks => "ZeroRanks",
            BalanceError::OriginRankOutOfRange { .. } => "OriginRankOutOfRange",
            BalanceError::ZeroTotalLoad => "ZeroTotalLoad",
            BalanceError::UnknownSample(..) => "UnknownSample",
            BalanceError::SampleNotOnFromRank { .. } => "SampleNotOnFromRank",
            BalanceError::RankOutOfRange(..) => "RankOutOfRange",
            BalanceError::BatchTooLargeForOracle { .. } => "BatchTooLargeForOracle",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<AcError> for CliError {
    fn from(e: AcError) -> Self {
        let code = match &e {
            AcError::ShapeMismatch(_) => "ShapeMismatch",
            AcError::TooManySlots { .. } => "TooManySlots",
            AcError::Infeasible => "Infeasible",
            AcError::InvalidGraph(_) => "InvalidGraph",
            AcError::InvalidTiers(_) => "InvalidTiers",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let message = e.to_string();
        let code = match e {
            SimError::EmptyTrace => "EmptyTrace",
            SimError::InvalidConfig(_) => "InvalidConfig",
            SimError::InvalidTrace(_) => "InvalidTrace",
            SimError::ZeroWallclock => "ZeroWallclock",
            SimError::Balance(inner) => return CliError::from(inner),
        };
        CliError::new(code, message)
    }
}

impl From<FaultError> for CliError {
    fn from(e: FaultError) -> Self {
        let message = e.to_string();
        let code = match e {
            FaultError::StoreUnwritable(_) => "StoreUnwritable",
            FaultError::SerializationFailure(_) => "SerializationFailure",
            FaultError::NoValidSnapshot => "NoValidSnapshot",
            FaultError::InsufficientHealthyNodes { .. } => "InsufficientHealthyNodes",
            FaultError::UnrecoverableCrash { .. } => "UnrecoverableCrash",
            FaultError::InvalidSchedule(_) => "InvalidSchedule",
            FaultError::Sim(inner) => return CliError::from(inner),
        };
        CliError::new(code, message)
    }
}
