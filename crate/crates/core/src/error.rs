use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {re} + {im}i lies on the branch cut [-2, 2]")]
    OnCut { re: f64, im: f64 },

    #[error("index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("coincident or misordered particles at indices {i} and {j}")]
    Coincident { i: usize, j: usize },

    #[error("step size underflow (dt = {dt:e}) at t = {t}; closest pair ({i}, {j}) in {system}")]
    StepUnderflow {
        dt: f64,
        t: f64,
        i: usize,
        j: usize,
        system: &'static str,
    },

    #[error("no checkpoint recorded at t = {0}")]
    MissingCheckpoint(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigensolver failed to converge after {0} iterations")]
    EigenConvergence(usize),

    #[error("variance profile normalization did not converge in {0} sweeps")]
    Normalization(usize),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("semigroup substep too coarse: {0}")]
    SubstepTooCoarse(String),

    #[error("argument outside the operation's domain: {0}")]
    Domain(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Attach a context string to an error result.
pub trait ResultExt<T> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<Error>> ResultExt<T> for std::result::Result<T, E> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| Error::Context {
            context: ctx(),
            source: Box::new(e.into()),
        })
    }
}
