//! Drop the filter into an event pipeline and query it afterwards.
//!
//! The filter forwards every event unchanged to its downstream consumer —
//! here an XML serializer, making the pipeline an identity transform —
//! while normalizing and digesting on the side. After the parse it
//! answers for the whole-document digest and for the verification status
//! of every signature PI it saw, without a second pass over the input.
//!
//! Run with: `cargo run --example stream_filter`

use xmlnorm::event::EventSink;
use xmlnorm::{filter, DigestAlgorithm, EventReader, XmlWriter};

fn main() -> xmlnorm::Result<()> {
    let signed = xmlnorm::sign_document(
        b"<doc><p class='foo'>Hello</p><p> there\nchum</p></doc>",
        "sha256",
        None,
        xmlnorm::PiPlacement::AtEnd,
        xmlnorm::SignatureTarget::WholeDocument,
    )?;

    // identity transform: parse, forward through the filter, serialize
    let mut session = filter::wrap(XmlWriter::new(Vec::new()), None);
    for event in EventReader::new(&signed[..])? {
        session.handle_event(&event?)?;
    }

    println!(
        "whole-document sha1:   {}",
        session.document_digest(DigestAlgorithm::Sha1)?
    );
    println!(
        "whole-document sha256: {}",
        session.document_digest(DigestAlgorithm::Sha256)?
    );
    for (i, entry) in session.report()?.entries.iter().enumerate() {
        println!(
            "signature #{}: algorithm={} status={}",
            i + 1,
            entry.algorithm.as_deref().unwrap_or("?"),
            entry.status
        );
    }

    let output = session.into_downstream().into_inner();
    println!("\nreserialized document:\n{}", String::from_utf8_lossy(&output));

    // the reserialized document is equivalent: same blob, same digests
    assert_eq!(
        xmlnorm::normalize_xml(&output)?,
        xmlnorm::normalize_xml(&signed)?
    );
    Ok(())
}
