use crate::numerics::NumericsError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure in {context}{}", step_suffix(*.step))]
    Numeric { context: String, step: Option<usize> },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] NumericsError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn step_suffix(step: Option<usize>) -> String {
    step.map(|s| format!(" at step {s}")).unwrap_or_default()
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn numeric(context: impl Into<String>, step: Option<usize>) -> Self {
        Error::Numeric {
            context: context.into(),
            step,
        }
    }

    /// True for failures caused by the arithmetic itself (NaN, overflow,
    /// domain violations) rather than by bad input or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric { .. } | Error::Tensor(NumericsError::Domain { .. })
        )
    }
}
