//! Sign a document with an embedded digest and verify it back.
//!
//! The `<?signature ...?>` PI carries the digest of the normalized blob;
//! rule ten of the normalizer drops signature PIs from the blob, so the
//! document can carry its own signature. The demo also shows that
//! placement (start or end of the root) does not matter, and that a
//! one-character edit flips verification to `failed`.
//!
//! Run with: `cargo run --example sign_and_verify`
//!
//! With gpg available, PGP mode works the same way:
//! `xmlnorm sign --algorithm pgp --signer-command gpg file.xml`

use xmlnorm::{sign_document, verify_document, PiPlacement, SignatureTarget};

fn main() -> xmlnorm::Result<()> {
    let doc = b"<doc>\n<p class='foo'>Hello</p>\n  <p> there\nchum\n</p>\n</doc>";

    let signed = sign_document(
        doc,
        "sha1",
        None,
        PiPlacement::AtEnd,
        SignatureTarget::WholeDocument,
    )?;
    println!("signed document:\n{}\n", String::from_utf8_lossy(&signed));

    let report = verify_document(&signed, None)?;
    for (i, entry) in report.entries.iter().enumerate() {
        println!(
            "signature #{}: algorithm={} status={}",
            i + 1,
            entry.algorithm.as_deref().unwrap_or("?"),
            entry.status
        );
    }
    assert!(report.all_verified());

    // placement indifference: signing at the start verifies identically
    let at_start = sign_document(
        doc,
        "sha1",
        None,
        PiPlacement::AtStart,
        SignatureTarget::WholeDocument,
    )?;
    assert!(verify_document(&at_start, None)?.all_verified());
    println!("\nsigned at the start instead: still verifies");

    // tampering is caught
    let tampered = String::from_utf8_lossy(&signed).replace("Hello", "Hullo");
    let report = verify_document(tampered.as_bytes(), None)?;
    println!(
        "after changing one character: status={}",
        report.entries[0].status
    );
    assert!(!report.all_verified());
    Ok(())
}
