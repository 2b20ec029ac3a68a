use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside its legal domain.
    #[error("parameter domain error: {0}")]
    Domain(String),

    /// The caller violated an API contract (shape mismatch, empty set, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A series is too short for the requested truncation length.
    #[error("data too short: experiment {experiment} has {len} samples, need more than {truncation}")]
    DataTooShort {
        experiment: usize,
        len: usize,
        truncation: usize,
    },

    /// A factorization failed even after the jitter retry.
    #[error("numerical failure in {context}{}", structure_suffix(.structure))]
    Numerical {
        context: String,
        structure: Option<Vec<bool>>,
    },

    /// A structure space too large to enumerate.
    #[error("structure space of 2^{bits} elements is too large to enumerate")]
    SpaceTooLarge { bits: usize },

    /// A sampler failed at a given iteration; the snapshot describes the state.
    #[error("chain failed at iteration {iteration}: {source}; state: {snapshot}")]
    Chain {
        iteration: usize,
        snapshot: String,
        #[source]
        source: Box<Error>,
    },

    /// Generation gave up after too many attempts.
    #[error("generation failed: {0}")]
    Generation(String),
}

fn structure_suffix(s: &Option<Vec<bool>>) -> String {
    match s {
        Some(p) => {
            let bits: String = p.iter().map(|&b| if b { '1' } else { '0' }).collect();
            format!(" (structure {bits})")
        }
        None => String::new(),
    }
}

impl Error {
    pub fn numerical(context: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            structure: None,
        }
    }

    /// Attach a structure to a numerical error that lacks one.
    pub fn with_structure(self, parents: &[bool]) -> Self {
        match self {
            Error::Numerical {
                context,
                structure: None,
            } => Error::Numerical {
                context,
                structure: Some(parents.to_vec()),
            },
            other => other,
        }
    }

    /// True when the error came from a failed factorization.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical { .. } => true,
            Error::Chain { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
