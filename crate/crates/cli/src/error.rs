use std::fmt;

/// An error plus the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const CONFIG: u8 = 2;
pub const DIVERGENCE: u8 = 3;
pub const IO: u8 = 4;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: CONFIG,
            message: message.into(),
        }
    }

    /// Failures while reading a dataset are configuration errors: the
    /// config points at something unusable.
    pub fn dataset(e: gvdn::Error) -> Self {
        CliError::config(format!("cannot load dataset: {e}"))
    }
}

impl From<gvdn::Error> for CliError {
    fn from(e: gvdn::Error) -> Self {
        let code = match &e {
            gvdn::Error::Divergence { .. } | gvdn::Error::NonFinite(_) => DIVERGENCE,
            gvdn::Error::Io { .. } => IO,
            _ => CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
