use thiserror::Error;

/// Errors raised while decoding an elementary stream.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("unexpected end of stream at bit {bit_pos} (wanted {wanted} bits)")]
    EndOfStream { bit_pos: u64, wanted: u32 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("malformed stream: {0}")]
    MalformedStream(String),

    #[error("unsupported stream: {0}")]
    UnsupportedStream(String),

    #[error("no variable-length code matches at bit {bit_pos}")]
    InvalidCode { bit_pos: u64 },

    #[error("escape-coded level {level} is forbidden")]
    EscapeLevelZero { level: i32 },

    #[error("coefficient run overflows block at position {position}")]
    CoefficientOverflow { position: usize },

    #[error("missing {0} reference picture")]
    MissingReference(&'static str),

    #[error("B picture without both references (broken or open GOP)")]
    BrokenGop,

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("stream contains no coded pictures")]
    EmptyStream,

    #[error("motion-vector selection needs at least one candidate")]
    NoCandidates,

    #[error("invalid fixture spec: {0}")]
    SpecError(String),
}

impl Error {
    /// Whether this error is confined to slice data, so that a tolerant
    /// decoder may conceal the slice and resynchronize.
    pub fn is_slice_local(&self) -> bool {
        matches!(
            self,
            Error::EndOfStream { .. }
                | Error::InvalidCode { .. }
                | Error::EscapeLevelZero { .. }
                | Error::CoefficientOverflow { .. }
                | Error::MissingReference(_)
                | Error::MalformedStream(_)
        )
    }

    pub(crate) fn header(msg: impl Into<String>) -> Self {
        Error::MalformedHeader(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::UnsupportedStream(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
