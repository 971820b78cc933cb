use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("potential error: {0}")]
    Potential(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("range error: tau = {0} is outside the representable range")]
    Range(f64),
    #[error("homology error: {0}")]
    Homology(String),
    #[error("linking error: {0}")]
    Linking(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("verification error: {0}")]
    Verify(String),
    /// An error raised inside a pipeline stage, tagged with the stage name.
    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with stage tags removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) fn ensure_finite(q: &[f64], what: &str) -> Result<()> {
    if q.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} has non-finite components")))
    }
}
