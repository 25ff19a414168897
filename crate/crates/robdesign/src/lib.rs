//! Command-line driver for robust designs under missing responses: problem
//! configuration, file formats and the `solve`/`eval`/`round`/`simulate`/
//! `worstcase` commands built on `robdesign-core`.

pub mod commands;
pub mod config;
pub mod exec;
pub mod io;
pub mod svg;

use std::fmt;

use robdesign_core::Error as CoreError;

/// Marks failures caused by the user's input rather than the computation.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Re-tags any error as a configuration error, keeping its context chain.
pub fn config_error(e: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(ConfigError(format!("{e:#}")))
}

/// `.tag_config()` marks a failure as the user's input error (exit code 2).
pub trait ConfigContext<T> {
    fn tag_config(self) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> ConfigContext<T> for Result<T, E> {
    fn tag_config(self) -> anyhow::Result<T> {
        self.map_err(|e| config_error(e.into()))
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

fn core_infeasible(e: &CoreError) -> bool {
    e.is_infeasible()
        || matches!(
            e,
            CoreError::InfeasibleSwarm | CoreError::AllPatternsSingular | CoreError::TooManySingular { .. }
        )
}

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            if core_infeasible(e) {
                return EXIT_INFEASIBLE;
            }
        }
    }
    EXIT_FAILURE
}
