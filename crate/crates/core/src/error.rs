use thiserror::Error;

use crate::physics::SimState;

/// Errors surfaced by the pipeline. The CLI maps each variant to an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("simulation diverged at t = {time:.4} s")]
    Diverged { time: f64, last_good: Box<SimState> },

    #[error("gradient blew up in parameter `{0}`")]
    GradientBlewUp(String),

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing prerequisite: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }
}
