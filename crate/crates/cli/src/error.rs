use std::fmt;

/// Failure category, mapped one-to-one onto the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Config,
    Runtime,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 1,
            Kind::Config => 2,
            Kind::Runtime => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Config => "config",
            Kind::Runtime => "runtime",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl fmt::Display) -> Self {
        Self {
            kind: Kind::Config,
            message: message.to_string(),
        }
    }

    pub fn runtime(message: impl fmt::Display) -> Self {
        Self {
            kind: Kind::Runtime,
            message: message.to_string(),
        }
    }

    pub fn usage(message: impl fmt::Display) -> Self {
        Self {
            kind: Kind::Usage,
            message: message.to_string(),
        }
    }

    /// One JSON object on a single line.
    pub fn to_line(&self) -> String {
        serde_json::json!({
            "error": self.kind.name(),
            "exit_code": self.kind.exit_code(),
            "message": self.message.replace('\n', " "),
        })
        .to_string()
    }
}

impl From<mappable::Error> for CliError {
    fn from(e: mappable::Error) -> Self {
        Self::runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
