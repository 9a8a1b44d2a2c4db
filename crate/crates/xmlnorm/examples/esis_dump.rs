//! Dump the unnormalized ESIS textual form of a document.
//!
//! One line per parse event: `(`/`)` bracket elements, `[`/`]` their
//! namespaced variants, `A`/`B` attributes, `-` text, `?` processing
//! instructions, `M`/`m` prefix mappings. Line ends inside field values
//! are escaped, so the dump is always one record per line.
//!
//! Run with: `cargo run --example esis_dump [-- file.xml]`

fn main() -> xmlnorm::Result<()> {
    let xml = match std::env::args().nth(1) {
        Some(path) => std::fs::read(path)?,
        None => {
            b"<doc><pfx:p class='foo'\n  xmlns:pfx=\"urn:NS\"\n  pfx:att='bar'\n>Hello</pfx:p>\n\n<p>   &amp;&#xD;goodbye,\nchum</p>\n  </doc>".to_vec()
        }
    };
    print!("{}", xmlnorm::unnormalized_esis(&xml)?);
    Ok(())
}
