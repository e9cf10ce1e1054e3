//! Command-line driver for `margfit-core`: dataset generation, training,
//! evaluation, gradient checks and marginal dumps, all reading and writing
//! CSV and JSON files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Display;
use std::path::{Path, PathBuf};

pub mod commands;
pub mod config;
pub mod exec;
pub mod io;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] margfit_core::Error),
}

impl CliError {
    pub fn io(path: &Path, err: impl Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    pub fn input(message: String) -> Self {
        CliError::Input(message)
    }

    /// 3 for numerical failures, 2 for bad input of any kind.
    pub fn exit_code(&self) -> u8 {
        use margfit_core::Error as E;
        match self {
            CliError::Core(
                E::NonFinite(_)
                | E::NonFiniteInitialRisk
                | E::MessageUnderflow { .. }
                | E::SingularSystem,
            ) => 3,
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use margfit_core::Error;

    #[test]
    fn exit_codes_separate_numerics_from_input() {
        assert_eq!(CliError::from(Error::SingularSystem).exit_code(), 3);
        assert_eq!(CliError::from(Error::NonFiniteInitialRisk).exit_code(), 3);
        assert_eq!(CliError::from(Error::NoObservedNodes).exit_code(), 2);
        assert_eq!(CliError::input("x".into()).exit_code(), 2);
        assert_eq!(CliError::io(Path::new("a"), "missing").exit_code(), 2);
    }
}
