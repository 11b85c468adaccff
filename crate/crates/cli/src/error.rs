use std::fmt;

use gctx_unet::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: msg.into() }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERIC, message: msg.into() }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self { code: EXIT_IO, message: format!("io error on {}: {e}", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::MissingFile { .. } | Error::Integrity(_) | Error::Version { .. } => EXIT_IO,
            Error::Diverged { .. } | Error::Numerics(gctx_numerics::Error::NonFinite { .. }) => EXIT_NUMERIC,
            _ => EXIT_VALIDATION,
        };
        let message = match &e {
            Error::Config(msgs) if msgs.len() > 1 => {
                let mut s = format!("configuration error ({} problems):", msgs.len());
                for m in msgs {
                    s.push_str("\n  - ");
                    s.push_str(m);
                }
                s
            }
            _ => e.to_string(),
        };
        Self { code, message }
    }
}

impl From<gctx_numerics::Error> for CliError {
    fn from(e: gctx_numerics::Error) -> Self {
        Error::from(e).into()
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
