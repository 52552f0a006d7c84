//! Error families and their exit codes.

use serde_json::json;
use thiserror::Error;

use safe_edit_core::client::ClientError;
use safe_edit_core::edit::EditError;
use safe_edit_core::eval::EvalError;
use safe_edit_core::io::IoError;
use safe_edit_core::mask::MaskError;
use safe_edit_core::protocol::ProtocolError;

pub const ERROR_SCHEMA_VERSION: u32 = 1;

/// Exit-code table shown in `--help`.
pub const EXIT_CODES: &str = "\
Exit codes:
  0   success (an empty detection set is a success)
  2   usage or configuration error
  3   file I/O or image decoding error
  4   detector output violates the protocol
  5   detector transport or service error
  6   replay fixture missing for a request
  7   mask construction or solver failure
  8   editing backend failure
  9   evaluation error
On failure a JSON error object is written to stderr.";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("replay fixture missing for digest {0}")]
    FixtureMissing(String),
    #[error("mask: {0}")]
    Mask(String),
    #[error("edit: {0}")]
    Edit(String),
    #[error("eval: {0}")]
    Eval(String),
    /// A failure tied to one input image and, optionally, one detection.
    #[error("{image}{}: {source}", instance.map(|i| format!(" (instance {i})")).unwrap_or_default())]
    Context {
        image: String,
        instance: Option<usize>,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn in_image(self, image: impl Into<String>, instance: Option<usize>) -> Self {
        CliError::Context {
            image: image.into(),
            instance,
            source: Box::new(self),
        }
    }

    fn root(&self) -> &CliError {
        match self {
            CliError::Context { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn family(&self) -> &'static str {
        match self.root() {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Protocol(_) => "protocol",
            CliError::Transport(_) => "transport",
            CliError::FixtureMissing(_) => "fixture_missing",
            CliError::Mask(_) => "mask",
            CliError::Edit(_) => "edit",
            CliError::Eval(_) => "eval",
            CliError::Context { .. } => unreachable!("root is never a context"),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.family() {
            "config" => 2,
            "io" => 3,
            "protocol" => 4,
            "transport" => 5,
            "fixture_missing" => 6,
            "mask" => 7,
            "edit" => 8,
            _ => 9,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let (image, instance) = match self {
            CliError::Context {
                image, instance, ..
            } => (Some(image.clone()), *instance),
            _ => (None, None),
        };
        json!({
            "schema_version": ERROR_SCHEMA_VERSION,
            "error": {
                "family": self.family(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
                "image": image,
                "instance": instance,
            }
        })
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Config(m) | ProtocolError::UnknownCategory(m) => CliError::Config(m),
            e => CliError::Protocol(e.to_string()),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Config(m) => CliError::Config(m),
            ClientError::FixtureMissing(d) => CliError::FixtureMissing(d),
            ClientError::Fixture(m) => CliError::Io(m),
            e => CliError::Transport(e.to_string()),
        }
    }
}

impl From<MaskError> for CliError {
    fn from(e: MaskError) -> Self {
        CliError::Mask(e.to_string())
    }
}

impl From<EditError> for CliError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::Mask(m) => CliError::Mask(m.to_string()),
            e => CliError::Edit(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Eval(e.to_string())
    }
}
