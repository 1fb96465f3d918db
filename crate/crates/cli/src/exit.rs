//! Exit codes and the error type every command returns.

use std::fmt;
use std::process::ExitCode;

use idearefine_core::eval::EvalError;
use idearefine_core::{EngineError, StoreError};

/// Process exit status. The numeric values are part of the CLI contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Code {
    Ok = 0,
    Io = 1,
    Config = 2,
    Backend = 3,
    Loop = 4,
    MissingRun = 5,
}

impl From<Code> for ExitCode {
    fn from(code: Code) -> Self {
        ExitCode::from(code as u8)
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: Code,
    pub message: String,
}

impl CliError {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Code::Config, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(Code::Io, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn store_code(error: &StoreError) -> Code {
    match error {
        StoreError::MissingRun(_) => Code::MissingRun,
        _ => Code::Io,
    }
}

impl From<StoreError> for CliError {
    fn from(error: StoreError) -> Self {
        Self::new(store_code(&error), error.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(error: EngineError) -> Self {
        let code = match error.root() {
            EngineError::Lmm { .. } | EngineError::AllDraftsFailed(_) => Code::Backend,
            EngineError::Store(e) => store_code(e),
            EngineError::Unusable { .. }
            | EngineError::Template(_)
            | EngineError::Transition(_)
            | EngineError::Model(_)
            | EngineError::StepFailed { .. } => Code::Loop,
        };
        Self::new(code, error.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(error: EvalError) -> Self {
        let code = match error {
            EvalError::Io { .. } => Code::Io,
            _ => Code::Config,
        };
        Self::new(code, error.to_string())
    }
}
