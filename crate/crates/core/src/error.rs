use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("provider connection failed: {0}")]
    Connection(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("protocol version mismatch: server speaks {server}, client expects {expected}")]
    ProtocolVersion { server: u64, expected: u64 },

    #[error("vocabulary size changed mid-run: expected {expected}, got {got}")]
    VocabMismatch { expected: usize, got: usize },

    #[error("provider failed at depth {depth}: {source}")]
    ProviderAtDepth {
        depth: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("enumeration refused: tree has ~{estimated_leaves:.3e} leaves, limit is {limit:.3e}")]
    GuardExceeded { estimated_leaves: f64, limit: f64 },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("mass identity violated: residual {residual:.3e} ({detail})")]
    MassIdentity { residual: f64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Whether the error originated from the token distribution provider.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            Error::Connection(_)
                | Error::Protocol(_)
                | Error::ProtocolVersion { .. }
                | Error::VocabMismatch { .. }
                | Error::ProviderAtDepth { .. }
        )
    }
}
