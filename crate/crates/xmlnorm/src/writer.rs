//! Event-to-XML serialization.
//!
//! [`XmlWriter`] turns an event stream back into markup. It is the
//! downstream half of the identity transform, the serializer behind
//! document signing, and — through its configuration — the instrument for
//! producing equivalent-but-different documents (quote style, character
//! references, output encoding).

use std::io::Write;

use crate::error::{Error, Result};
use crate::event::{DocEvent, EventSink, QualifiedName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuoteStyle {
    #[default]
    Double,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputEncoding {
    #[default]
    Utf8,
    Utf16Le,
    /// ISO-8859-1; fails on characters above U+00FF.
    Latin1,
}

impl OutputEncoding {
    fn label(&self) -> &'static str {
        match self {
            OutputEncoding::Utf8 => "UTF-8",
            OutputEncoding::Utf16Le => "UTF-16",
            OutputEncoding::Latin1 => "ISO-8859-1",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WriterConfig {
    pub quote: QuoteStyle,
    pub encoding: OutputEncoding,
    /// Emit an XML declaration. Forced on for non-UTF-8 encodings.
    pub declaration: bool,
    /// Write eligible content characters as hexadecimal character
    /// references instead of literally.
    pub aggressive_charrefs: bool,
}

/// Serializes events as XML markup.
pub struct XmlWriter<W: Write> {
    sink: W,
    config: WriterConfig,
    pending_ns: Vec<(String, String)>,
}

impl<W: Write> XmlWriter<W> {
    pub fn new(sink: W) -> Self {
        Self::with_config(sink, WriterConfig::default())
    }

    pub fn with_config(sink: W, config: WriterConfig) -> Self {
        XmlWriter {
            sink,
            config,
            pending_ns: Vec::new(),
        }
    }

    pub fn into_inner(self) -> W {
        self.sink
    }

    fn quote_char(&self) -> char {
        match self.config.quote {
            QuoteStyle::Double => '"',
            QuoteStyle::Single => '\'',
        }
    }

    fn emit(&mut self, s: &str) -> Result<()> {
        match self.config.encoding {
            OutputEncoding::Utf8 => self.sink.write_all(s.as_bytes())?,
            OutputEncoding::Utf16Le => {
                for unit in s.encode_utf16() {
                    self.sink.write_all(&unit.to_le_bytes())?;
                }
            }
            OutputEncoding::Latin1 => {
                for c in s.chars() {
                    let code = c as u32;
                    if code > 0xFF {
                        return Err(Error::NotApplicable(
                            "document contains characters outside Latin-1",
                        ));
                    }
                    self.sink.write_all(&[code as u8])?;
                }
            }
        }
        Ok(())
    }

    fn escape_text(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        for c in text.chars() {
            match c {
                '&' => out.push_str("&amp;"),
                '<' => out.push_str("&lt;"),
                '>' => out.push_str("&gt;"),
                // CR would be folded to LF by line-end normalization on
                // re-parse; NEL/LS only survive every XML version as refs
                '\r' => out.push_str("&#xD;"),
                '\u{0085}' => out.push_str("&#x85;"),
                '\u{2028}' => out.push_str("&#x2028;"),
                c if self.charref_eligible(c) => push_charref(&mut out, c),
                c => out.push(c),
            }
        }
        out
    }

    fn escape_attr(&self, value: &str) -> String {
        let quote = self.quote_char();
        let mut out = String::with_capacity(value.len());
        for c in value.chars() {
            match c {
                '&' => out.push_str("&amp;"),
                '<' => out.push_str("&lt;"),
                // whitespace written literally would be normalized to a
                // plain space on re-parse; references survive exactly
                '\t' => out.push_str("&#x9;"),
                '\n' => out.push_str("&#xA;"),
                '\r' => out.push_str("&#xD;"),
                '\u{0085}' => out.push_str("&#x85;"),
                '\u{2028}' => out.push_str("&#x2028;"),
                c if c == quote => {
                    out.push_str(if quote == '"' { "&quot;" } else { "&#39;" })
                }
                c if self.charref_eligible(c) => push_charref(&mut out, c),
                c => out.push(c),
            }
        }
        out
    }

    fn charref_eligible(&self, c: char) -> bool {
        self.config.aggressive_charrefs && (matches!(c, 'e' | 'o' | 't') || !c.is_ascii())
    }

    fn write_qname(&self, name: &QualifiedName, out: &mut String) {
        if let Some(prefix) = &name.prefix {
            out.push_str(prefix);
            out.push(':');
        }
        out.push_str(&name.local_name);
    }
}

fn push_charref(out: &mut String, c: char) {
    out.push_str(&format!("&#x{:X};", c as u32));
}

impl<W: Write> EventSink for XmlWriter<W> {
    fn handle_event(&mut self, event: &DocEvent) -> Result<()> {
        match event {
            DocEvent::StartDocument => {
                if self.config.encoding != OutputEncoding::Utf16Le
                    && self.config.encoding != OutputEncoding::Latin1
                    && !self.config.declaration
                {
                    return Ok(());
                }
                if self.config.encoding == OutputEncoding::Utf16Le {
                    self.sink.write_all(&[0xFF, 0xFE])?; // BOM
                }
                let q = self.quote_char();
                let decl = format!(
                    "<?xml version={q}1.0{q} encoding={q}{}{q}?>\n",
                    self.config.encoding.label()
                );
                self.emit(&decl)
            }
            DocEvent::EndDocument => {
                self.sink.flush()?;
                Ok(())
            }
            DocEvent::StartPrefixMapping { prefix, uri } => {
                self.pending_ns.push((prefix.clone(), uri.clone()));
                Ok(())
            }
            DocEvent::EndPrefixMapping { .. } => Ok(()),
            DocEvent::StartElement { name, attributes } => {
                let q = self.quote_char();
                let mut tag = String::new();
                tag.push('<');
                self.write_qname(name, &mut tag);
                for (prefix, uri) in std::mem::take(&mut self.pending_ns) {
                    tag.push(' ');
                    tag.push_str("xmlns");
                    if !prefix.is_empty() {
                        tag.push(':');
                        tag.push_str(&prefix);
                    }
                    tag.push('=');
                    tag.push(q);
                    tag.push_str(&self.escape_attr(&uri));
                    tag.push(q);
                }
                for attr in attributes {
                    tag.push(' ');
                    self.write_qname(&attr.name, &mut tag);
                    tag.push('=');
                    tag.push(q);
                    tag.push_str(&self.escape_attr(&attr.value));
                    tag.push(q);
                }
                tag.push('>');
                self.emit(&tag)
            }
            DocEvent::EndElement { name } => {
                let mut tag = String::from("</");
                self.write_qname(name, &mut tag);
                tag.push('>');
                self.emit(&tag)
            }
            DocEvent::Characters(text) => {
                let escaped = self.escape_text(text);
                self.emit(&escaped)
            }
            DocEvent::IgnorableWhitespace(text) => {
                let escaped = self.escape_text(text);
                self.emit(&escaped)
            }
            DocEvent::ProcessingInstruction { target, data } => {
                let pi = if data.is_empty() {
                    format!("<?{target}?>")
                } else {
                    format!("<?{target} {data}?>")
                };
                self.emit(&pi)
            }
            DocEvent::SkippedEntity(name) => {
                let reference = format!("&{name};");
                self.emit(&reference)
            }
        }
    }
}

/// Serializes a full event sequence to XML bytes.
pub fn write_events(events: &[DocEvent], config: WriterConfig) -> Result<Vec<u8>> {
    let mut writer = XmlWriter::with_config(Vec::new(), config);
    for event in events {
        writer.handle_event(event)?;
    }
    Ok(writer.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esis::events_to_records;
    use crate::normalize::{normalize, NormalizeOptions};
    use crate::parse::events_from_xml;

    fn blob(xml: &[u8]) -> Vec<u8> {
        let records = events_to_records(&events_from_xml(xml).unwrap());
        normalize(&records, &NormalizeOptions::default())
            .unwrap()
            .into_bytes()
    }

    fn roundtrip(xml: &[u8], config: WriterConfig) -> Vec<u8> {
        let events = events_from_xml(xml).unwrap();
        write_events(&events, config).unwrap()
    }

    const SAMPLE: &[u8] = b"<d><pfx:p class='foo' xmlns:pfx=\"urn:NS\" pfx:att='bar'>Hello</pfx:p>\n<p> there\nchum</p><?go x='1'?></d>";

    #[test]
    fn identity_preserves_the_blob() {
        for config in [
            WriterConfig::default(),
            WriterConfig {
                quote: QuoteStyle::Single,
                ..Default::default()
            },
            WriterConfig {
                aggressive_charrefs: true,
                ..Default::default()
            },
            WriterConfig {
                encoding: OutputEncoding::Utf16Le,
                ..Default::default()
            },
            WriterConfig {
                encoding: OutputEncoding::Latin1,
                ..Default::default()
            },
        ] {
            let rewritten = roundtrip(SAMPLE, config);
            assert_eq!(blob(&rewritten), blob(SAMPLE), "config {config:?}");
        }
    }

    #[test]
    fn quote_style_changes_bytes_not_blob() {
        let double = roundtrip(SAMPLE, WriterConfig::default());
        let single = roundtrip(
            SAMPLE,
            WriterConfig {
                quote: QuoteStyle::Single,
                ..Default::default()
            },
        );
        assert_ne!(double, single);
        assert_eq!(blob(&double), blob(&single));
    }

    #[test]
    fn attribute_whitespace_survives_reserialization() {
        // tab and newline arrive via references, must leave as references
        let xml = b"<e a='x&#x9;y&#xA;z&#xD;w'/>";
        let out = roundtrip(xml, WriterConfig::default());
        assert_eq!(blob(&out), blob(xml));
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("&#x9;") && text.contains("&#xA;") && text.contains("&#xD;"));
    }

    #[test]
    fn carriage_return_in_text_survives() {
        let xml = b"<e>a&#xD;b</e>";
        let out = roundtrip(xml, WriterConfig::default());
        assert_eq!(String::from_utf8(out).unwrap(), "<e>a&#xD;b</e>");
    }

    #[test]
    fn skipped_entities_reserialize_as_references() {
        let xml = b"<!DOCTYPE d SYSTEM \"dtd\"><d>a&ext;b</d>";
        let events = events_from_xml(xml).unwrap();
        let out = write_events(&events, WriterConfig::default()).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "<d>a&ext;b</d>");
    }

    #[test]
    fn latin1_rejects_wide_characters() {
        let events = events_from_xml("<d>\u{2603}</d>".as_bytes()).unwrap();
        let err = write_events(
            &events,
            WriterConfig {
                encoding: OutputEncoding::Latin1,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotApplicable(_)));
    }

    #[test]
    fn default_namespace_declaration_round_trips() {
        let xml = b"<d xmlns='urn:d'><e/></d>";
        let out = roundtrip(xml, WriterConfig::default());
        assert_eq!(blob(&out), blob(xml));
        assert!(String::from_utf8(out).unwrap().contains("xmlns=\"urn:d\""));
    }
}
