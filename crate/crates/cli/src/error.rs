use gasnitrom::Error as CoreError;

/// CLI failure classes with their stable exit codes:
/// 0 success, 2 configuration, 3 numerical, 4 data.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Data(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::Data(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self {
            CliError::Config(_) => "config error",
            CliError::Numerical(_) => "numerical error",
            CliError::Data(_) => "data error",
        };
        write!(f, "{kind}: {}", self.message())
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::Config(_) | CoreError::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            CoreError::Schema { .. } | CoreError::Io { .. } => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
