//! Streaming XML normalizer and signer.
//!
//! An XML document is parsed into a small, SAX-shaped event stream; the
//! events map onto line-oriented records (an extended ESIS form); and the
//! records normalize into a unique byte blob that is stable across every
//! document in a broad equivalence class — quote styles, attribute order,
//! namespace prefixes, encodings, entity structure and whitespace runs all
//! disappear. That blob is what gets digested or signed, with the result
//! carried inside the document in a `<?signature ...?>` processing
//! instruction.
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `xmlnorm` binary for the batch command-line interface.

pub mod cli;
pub mod corpus;
pub mod denormalize;
pub mod digest;
pub mod error;
pub mod esis;
pub mod event;
pub mod normalize;
pub mod filter;
pub mod parse;
pub mod signature;
pub mod writer;

pub use corpus::{bench_identity, generate, mutate, BenchResult, CorpusSpec, Mutation};
pub use denormalize::denormalize;
pub use digest::{digest, DigestAlgorithm, DigestContext};
pub use error::{Error, Result};
pub use esis::{
    events_to_records, parse_unnormalized, records_for_event, render_unnormalized, EsisRecord,
};
pub use event::{Attribute, DocEvent, EventSink, QualifiedName};
pub use filter::{wrap, FilterSession};
pub use normalize::{
    collapse_whitespace, normalize, NormalizeOptions, NormalizeScope, NormalizedBlob, Normalizer,
};
pub use parse::{events_from_xml, EventReader};
pub use signature::{
    parse_signature_pi, sign_document, verify_document, GpgSigner, PiPlacement, SignatureCheck,
    SignaturePi, SignatureStatus, SignatureTarget, Signer, VerificationReport,
};
pub use writer::{write_events, OutputEncoding, QuoteStyle, WriterConfig, XmlWriter};

/// Parses a document and normalizes it into its blob.
pub fn normalize_xml(xml: &[u8]) -> Result<NormalizedBlob> {
    let events = events_from_xml(xml)?;
    normalize(&events_to_records(&events), &NormalizeOptions::default())
}

/// Parses a document and renders the unnormalized ESIS textual form.
pub fn unnormalized_esis(xml: &[u8]) -> Result<String> {
    let events = events_from_xml(xml)?;
    Ok(render_unnormalized(&events_to_records(&events)))
}
