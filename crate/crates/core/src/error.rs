use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value was NaN or infinite, or a scalar parameter was out of its range.
    #[error("domain error: {0}")]
    Domain(String),

    /// A point lies on or outside the boundary of the set an inverse or
    /// mirror map is defined on.
    #[error("point {value} at index {index} is outside the open domain of {what}")]
    OutOfDomain {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("operation `{op}` is not supported for projection {projection}")]
    UnsupportedProjection { op: &'static str, projection: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn ensure_finite(what: &str, xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::Domain(format!(
            "{what}[{i}] = {} is not finite",
            xs[i]
        ))),
        None => Ok(()),
    }
}

pub(crate) fn ensure_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta >= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("beta must be finite and >= 1, got {beta}")))
    }
}

/// Deserialize JSON, reporting schema errors with the path of the offending key.
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })
}
