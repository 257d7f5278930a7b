use thiserror::Error;

/// Failures with a dedicated process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("missing {what}; run `ctf3d {command}` first")]
    MissingInput { what: String, command: &'static str },
    #[error("input file not found: {0}")]
    MissingFile(String),
    #[error("{0}")]
    Numerical(String),
    #[error("output directory {0} is in use by another run (remove the stale lock file if no run is active)")]
    Locked(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit code for an error chain: the first recognized cause decides.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => EXIT_CONFIG,
                CliError::MissingInput { .. } | CliError::MissingFile(_) => EXIT_MISSING_INPUT,
                CliError::Numerical(_) => EXIT_NUMERICAL,
                CliError::Locked(_) => EXIT_OTHER,
            };
        }
        if let Some(e) = cause.downcast_ref::<ctf3d::Error>() {
            return match e {
                ctf3d::Error::Numerical(_) | ctf3d::Error::InsufficientData(_) => EXIT_NUMERICAL,
                _ => EXIT_OTHER,
            };
        }
    }
    EXIT_OTHER
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_follow_the_chain() {
        let e = anyhow::Error::from(CliError::Config("x".into())).context("loading");
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        let e: anyhow::Error = Err::<(), _>(ctf3d::Error::Numerical("nan".into()))
            .context("fit")
            .unwrap_err();
        assert_eq!(exit_code(&e), EXIT_NUMERICAL);
        let e = anyhow::Error::from(CliError::MissingInput {
            what: "reference_dsm.tif".into(),
            command: "prepare",
        });
        assert_eq!(exit_code(&e), EXIT_MISSING_INPUT);
        assert!(e.to_string().contains("ctf3d prepare"));
        assert_eq!(exit_code(&anyhow::anyhow!("other")), EXIT_OTHER);
    }
}
