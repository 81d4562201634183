use pano_rating::ServiceError;
use thiserror::Error;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

/// Bad combinations of flags that clap cannot express on its own.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Walks the error chain: anything the user can fix by changing arguments,
/// configuration or input data is a validation failure, the rest is a
/// runtime failure.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<toml::de::Error>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<pano_core::Error>() {
            return if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME };
        }
        if let Some(e) = cause.downcast_ref::<ServiceError>() {
            return match e {
                ServiceError::Config(_) | ServiceError::Validation { .. } | ServiceError::BadRequest(_) => {
                    EXIT_VALIDATION
                }
                ServiceError::Core(inner) if inner.is_validation() => EXIT_VALIDATION,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}
