use thiserror::Error;

/// Errors shared by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {details}")]
    DimensionMismatch { op: &'static str, details: String },

    #[error("singular or ill-conditioned matrix in {op} (estimated condition number {cond:.3e})")]
    Singular { op: &'static str, cond: f64 },

    #[error("SVD failed to converge")]
    SvdFailed,

    #[error("numerical rank {rank} is below the requested dimension {requested}")]
    RankDeficient { rank: usize, requested: usize },

    #[error("trajectory blew up at t = {time:.6e} (state norm {norm:.3e})")]
    BlowUp { time: f64, norm: f64 },

    #[error("matrix exponential overflowed (spectral abscissa {abscissa:.3e}, horizon {t_f:.3e})")]
    ExpOverflow { abscissa: f64, t_f: f64 },

    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(op: &'static str, details: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            details: details.into(),
        }
    }
}
