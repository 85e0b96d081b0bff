//! Command-line front end for the CTAN workspace: configuration, dataset
//! synthesis, training, evaluation, gradient checks, block ablations and
//! embedding export.

pub mod ablation;
pub mod commands;
pub mod config;

use std::fmt;

/// An invariant violation inside the tool rather than a problem with the
/// user's inputs.
#[derive(Debug)]
pub struct Internal(pub String);

impl fmt::Display for Internal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "internal error: {}", self.0)
    }
}

impl std::error::Error for Internal {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

/// Exit code for a failed command: 2 for invariant violations, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use ctan_core::Error as E;
    for cause in err.chain() {
        if cause.is::<Internal>() {
            return EXIT_INTERNAL;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Shape(_)
                | E::AxisOutOfRange { .. }
                | E::EmptyTensor
                | E::NonFinite { .. }
                | E::Graph(_)
                | E::MissingGradient(_) => EXIT_INTERNAL,
                _ => EXIT_USER,
            };
        }
    }
    EXIT_USER
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let user: anyhow::Error = ctan_core::Error::Config("x".into()).into();
        assert_eq!(exit_code(&user), EXIT_USER);
        let internal: anyhow::Error = ctan_core::Error::NonFinite { op: "loss" }.into();
        assert_eq!(exit_code(&internal.context("training")), EXIT_INTERNAL);
        assert_eq!(exit_code(&Internal("bad".into()).into()), EXIT_INTERNAL);
        assert_eq!(exit_code(&anyhow::anyhow!("missing file")), EXIT_USER);
    }
}
