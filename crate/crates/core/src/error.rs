use std::fmt;

use thiserror::Error;

/// Where a validation problem was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Graph,
    Layer(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Graph => write!(f, "graph"),
            Location::Layer(i) => write!(f, "layer {i}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error("validation error at {location}: {message}")]
    Validation { location: Location, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("mapping error: {0}")]
    Mapping(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn layer(index: usize, message: impl Into<String>) -> Self {
        Error::Validation {
            location: Location::Layer(index),
            message: message.into(),
        }
    }

    pub(crate) fn graph(message: impl Into<String>) -> Self {
        Error::Validation {
            location: Location::Graph,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
