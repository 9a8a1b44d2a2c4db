//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by parsing, normalizing, signing and verifying.
#[derive(Debug, Error)]
pub enum Error {
    /// The input is not well-formed XML. The offset is a byte position in
    /// the (decoded) input stream.
    #[error("not well-formed at byte {offset}: {message}")]
    WellFormedness { offset: u64, message: String },

    /// The input bytes could not be decoded in the declared or detected
    /// encoding.
    #[error("encoding error: {0}")]
    Encoding(String),

    /// A record sequence is not properly nested.
    #[error("record nesting error: {0}")]
    Nesting(String),

    /// A subtree scope was requested but no element record follows.
    #[error("no element follows the signature instruction")]
    NoTargetElement,

    /// A normalized blob does not conform to the blob grammar.
    #[error("malformed blob, line {line}: {message}")]
    MalformedBlob { line: usize, message: String },

    /// A textual record line does not conform to the record grammar.
    #[error("malformed record, line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    /// The data of a `<?signature ...?>` processing instruction is invalid.
    #[error("malformed signature instruction: {0}")]
    MalformedPi(String),

    /// The named digest algorithm is not in the registry.
    #[error("unsupported digest algorithm `{0}`")]
    UnsupportedAlgorithm(String),

    /// An external signer invocation failed.
    #[error("signer failure: {0}")]
    Signer(String),

    /// A verification report was requested before the end of the document.
    #[error("report requested before end of document")]
    NotFinished,

    /// A mutation cannot be applied because the document lacks the needed
    /// feature.
    #[error("mutation not applicable: {0}")]
    NotApplicable(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
