//! Error classification into exit codes and the stderr JSON shape.

use std::io;
use std::process;

use recwin::data::DataError;
use recwin::design::DesignError;
use recwin::jfm::JfmError;
use recwin::WinError;
use serde_json::json;

pub const USAGE: i32 = 2;
pub const DATA: i32 = 3;
pub const NUMERICAL: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub kind: String,
    pub message: String,
    pub code: i32,
}

impl Failure {
    pub fn usage(message: impl ToString) -> Self {
        Failure { kind: "InvalidInput".into(), message: message.to_string(), code: USAGE }
    }

    pub fn io(e: io::Error) -> Self {
        Failure { kind: "Io".into(), message: e.to_string(), code: USAGE }
    }

    pub fn exit(self) -> ! {
        let body = json!({ "error": self.kind, "message": self.message, "exit_code": self.code });
        eprintln!("{body}");
        process::exit(self.code)
    }
}

/// Variant name from a derived `Debug` rendering.
fn kind_of(e: &impl std::fmt::Debug) -> String {
    format!("{e:?}").chars().take_while(|c| c.is_alphanumeric()).collect()
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure { kind: kind_of(&e), message: e.to_string(), code: DATA }
    }
}

impl From<WinError> for Failure {
    fn from(e: WinError) -> Self {
        let code = match e {
            WinError::DegenerateWR { .. } => NUMERICAL,
            _ => DATA,
        };
        Failure { kind: kind_of(&e), message: e.to_string(), code }
    }
}

impl From<JfmError> for Failure {
    fn from(e: JfmError) -> Self {
        let code = match e {
            JfmError::NoEvents(_)
            | JfmError::MissingCovariate { .. }
            | JfmError::InvalidSpec(_)
            | JfmError::UnknownParameter(_)
            | JfmError::DimensionMismatch { .. } => DATA,
            _ => NUMERICAL,
        };
        Failure { kind: e.kind().to_string(), message: e.to_string(), code }
    }
}

impl From<DesignError> for Failure {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::Jfm(j) => j.into(),
            DesignError::Win(w) => w.into(),
            DesignError::NullHR | DesignError::NullEffect | DesignError::InvalidInput(_) => {
                Failure { kind: kind_of(&e), message: e.to_string(), code: USAGE }
            }
            DesignError::NoFeasibleN | DesignError::NonFiniteScore { .. } => {
                Failure { kind: kind_of(&e), message: e.to_string(), code: NUMERICAL }
            }
        }
    }
}
