//! Command implementations behind the `mixsr` binary.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod labels;

/// A problem with how the tool was invoked or configured.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use mixsr_core::Error;
    if err.is::<UsageError>() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NumericAbort { .. } | Error::NonFiniteGradient { .. }) => EXIT_NUMERIC,
        Some(Error::InvalidConfig { .. }) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}
