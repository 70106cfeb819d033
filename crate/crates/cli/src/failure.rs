use std::fmt;

/// A command failure carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const RUNTIME: u8 = 1;
pub const USAGE: u8 = 2;

pub type CmdResult<T = ()> = Result<T, Failure>;

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self {
            code: USAGE,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        Self {
            code: RUNTIME,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl From<venncal_core::Error> for Failure {
    fn from(e: venncal_core::Error) -> Self {
        Self {
            code: Failure::from_core_code(&e),
            error: e.into(),
        }
    }
}

impl From<venncal_scorer::Error> for Failure {
    fn from(e: venncal_scorer::Error) -> Self {
        use venncal_scorer::Error as E;
        let code = match &e {
            E::Config(_)
            | E::MissingCredential(_)
            | E::MissingPlaceholder(_)
            | E::Dataset { .. } => USAGE,
            E::Core(inner) => Failure::from_core_code(inner),
            _ => RUNTIME,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl Failure {
    fn from_core_code(e: &venncal_core::Error) -> u8 {
        match e {
            venncal_core::Error::Io { .. } => RUNTIME,
            venncal_core::Error::Csv(inner) if inner.is_io_error() => RUNTIME,
            _ => USAGE,
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        venncal_core::Error::Csv(e).into()
    }
}
