use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Numeric(String),

    #[error("{0} of {1} property families failed")]
    ChecksFailed(usize, usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) | CliError::ChecksFailed(..) => 3,
        }
    }
}

impl From<cmih_core::Error> for CliError {
    fn from(e: cmih_core::Error) -> Self {
        use cmih_core::Error as E;
        match e {
            E::Config(m) => CliError::Usage(m),
            e if e.is_numeric() => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
