//! Library surface of the CLI harness: stream I/O, output serialization,
//! accuracy metrics, and the subcommand implementations. The `probcer`
//! binary is a thin dispatcher over [`commands`].

pub mod commands;
pub mod io;
pub mod metrics;

/// Process exit codes: 0 ok, 2 config/parse, 3 stream, 4 capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Config = 2,
    Stream = 3,
    Capacity = 4,
}

/// A failure with a machine-readable code and the exit class it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit: ExitCode,
}

impl CliError {
    pub fn config(code: &str, message: impl Into<String>) -> Self {
        CliError {
            code: code.to_string(),
            message: message.into(),
            exit: ExitCode::Config,
        }
    }

    pub fn stream(code: &str, message: impl Into<String>) -> Self {
        CliError {
            code: code.to_string(),
            message: message.into(),
            exit: ExitCode::Stream,
        }
    }

    pub fn capacity(code: &str, message: impl Into<String>) -> Self {
        CliError {
            code: code.to_string(),
            message: message.into(),
            exit: ExitCode::Capacity,
        }
    }

    pub fn from_engine(err: probcer_core::engine::EngineError) -> Self {
        use probcer_core::engine::EngineError as E;
        let exit = match &err {
            E::RunCapExceeded { .. } => ExitCode::Capacity,
            _ => ExitCode::Stream,
        };
        CliError {
            code: err.code().to_string(),
            message: err.to_string(),
            exit,
        }
    }

    pub fn from_prob(err: probcer_core::prob::ProbError) -> Self {
        use probcer_core::prob::ProbError as P;
        let exit = match &err {
            P::SpaceTooLarge { .. } | P::LineageTooLarge { .. } => ExitCode::Capacity,
            P::NoSuchCe { .. } => ExitCode::Config,
            _ => ExitCode::Stream,
        };
        CliError {
            code: err.code().to_string(),
            message: err.to_string(),
            exit,
        }
    }

    /// Single-line machine-readable error JSON for the error stream.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.code, "message": self.message }).to_string()
    }
}

pub type CliResult<T> = Result<T, CliError>;
