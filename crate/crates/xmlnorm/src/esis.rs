//! The extended ESIS record grammar and its textual (unnormalized) form.
//!
//! A record is one line of output keyed by its first character:
//!
//! ```text
//! M<prefix> <uri>                       start prefix mapping
//! m<prefix>                             end prefix mapping
//! A<attname> CDATA <attvalue>           attribute
//! B<namespace> <localname> CDATA <attvalue>  namespaced attribute
//! (<name>                               start element
//! [<namespace> <localname>              start namespaced element
//! )<name>                               end element
//! ]<namespace> <localname>              end namespaced element
//! -<text>                               character content
//! =<text>                               ignorable whitespace
//! ?<target> <data>                      processing instruction
//! X<name>                               skipped entity
//! ```
//!
//! Fields hold decoded characters; escaping exists only in the rendered
//! textual form, where line-end characters in attvalue/text/data become
//! `\n`, `\r`, ``, ` ` and a literal backslash becomes `\\`.

use crate::error::{Error, Result};
use crate::event::{Attribute, DocEvent, XMLNS_NS_URI, XML_NS_URI};

/// One extended-ESIS record, held as decoded text fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EsisRecord {
    /// `M` — start prefix mapping (prefix is empty for the default namespace).
    PrefixStart { prefix: String, uri: String },
    /// `m` — end prefix mapping.
    PrefixEnd { prefix: String },
    /// `A` — attribute without a namespace.
    Attr { name: String, value: String },
    /// `B` — namespaced attribute.
    NsAttr {
        namespace: String,
        local: String,
        value: String,
    },
    /// `(` — start element without a namespace.
    ElemStart { name: String },
    /// `[` — start namespaced element.
    NsElemStart { namespace: String, local: String },
    /// `)` — end element.
    ElemEnd { name: String },
    /// `]` — end namespaced element.
    NsElemEnd { namespace: String, local: String },
    /// `-` — character content.
    Text { text: String },
    /// `=` — ignorable whitespace.
    IgnorableWs { text: String },
    /// `?` — processing instruction.
    Pi { target: String, data: String },
    /// `X` — skipped entity.
    SkippedEntity { name: String },
}

impl EsisRecord {
    /// The record's start character in the textual form.
    pub fn start_char(&self) -> char {
        match self {
            EsisRecord::PrefixStart { .. } => 'M',
            EsisRecord::PrefixEnd { .. } => 'm',
            EsisRecord::Attr { .. } => 'A',
            EsisRecord::NsAttr { .. } => 'B',
            EsisRecord::ElemStart { .. } => '(',
            EsisRecord::NsElemStart { .. } => '[',
            EsisRecord::ElemEnd { .. } => ')',
            EsisRecord::NsElemEnd { .. } => ']',
            EsisRecord::Text { .. } => '-',
            EsisRecord::IgnorableWs { .. } => '=',
            EsisRecord::Pi { .. } => '?',
            EsisRecord::SkippedEntity { .. } => 'X',
        }
    }

    pub fn is_attr(&self) -> bool {
        matches!(self, EsisRecord::Attr { .. } | EsisRecord::NsAttr { .. })
    }

    pub fn is_elem_start(&self) -> bool {
        matches!(
            self,
            EsisRecord::ElemStart { .. } | EsisRecord::NsElemStart { .. }
        )
    }

    pub fn is_elem_end(&self) -> bool {
        matches!(
            self,
            EsisRecord::ElemEnd { .. } | EsisRecord::NsElemEnd { .. }
        )
    }
}

/// Appends the records for a single event to `out`.
///
/// Attribute records precede their element's start record; attributes in
/// the `xml:`/`xmlns:` namespaces never yield A/B records (namespace
/// declarations surface as M/m instead).
pub fn records_for_event(event: &DocEvent, out: &mut Vec<EsisRecord>) {
    match event {
        DocEvent::StartDocument | DocEvent::EndDocument => {}
        DocEvent::StartPrefixMapping { prefix, uri } => out.push(EsisRecord::PrefixStart {
            prefix: prefix.clone(),
            uri: uri.clone(),
        }),
        DocEvent::EndPrefixMapping { prefix } => out.push(EsisRecord::PrefixEnd {
            prefix: prefix.clone(),
        }),
        DocEvent::StartElement { name, attributes } => {
            for attr in attributes {
                if let Some(rec) = attribute_record(attr) {
                    out.push(rec);
                }
            }
            out.push(match &name.namespace_uri {
                Some(uri) => EsisRecord::NsElemStart {
                    namespace: uri.clone(),
                    local: name.local_name.clone(),
                },
                None => EsisRecord::ElemStart {
                    name: name.local_name.clone(),
                },
            });
        }
        DocEvent::EndElement { name } => out.push(match &name.namespace_uri {
            Some(uri) => EsisRecord::NsElemEnd {
                namespace: uri.clone(),
                local: name.local_name.clone(),
            },
            None => EsisRecord::ElemEnd {
                name: name.local_name.clone(),
            },
        }),
        DocEvent::Characters(text) => out.push(EsisRecord::Text { text: text.clone() }),
        DocEvent::IgnorableWhitespace(text) => {
            out.push(EsisRecord::IgnorableWs { text: text.clone() })
        }
        DocEvent::ProcessingInstruction { target, data } => out.push(EsisRecord::Pi {
            target: target.clone(),
            data: data.clone(),
        }),
        DocEvent::SkippedEntity(name) => out.push(EsisRecord::SkippedEntity { name: name.clone() }),
    }
}

fn attribute_record(attr: &Attribute) -> Option<EsisRecord> {
    match &attr.name.namespace_uri {
        Some(uri) if uri == XML_NS_URI || uri == XMLNS_NS_URI => None,
        Some(uri) => Some(EsisRecord::NsAttr {
            namespace: uri.clone(),
            local: attr.name.local_name.clone(),
            value: attr.value.clone(),
        }),
        None => Some(EsisRecord::Attr {
            name: attr.name.local_name.clone(),
            value: attr.value.clone(),
        }),
    }
}

/// Maps an event sequence onto the record sequence.
pub fn events_to_records(events: &[DocEvent]) -> Vec<EsisRecord> {
    let mut out = Vec::new();
    for event in events {
        records_for_event(event, &mut out);
    }
    out
}

/// Escapes a text-bearing field for the rendered form.
pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\u{0085}' => out.push_str("\\u0085"),
            '\u{2028}' => out.push_str("\\u2028"),
            other => out.push(other),
        }
    }
    out
}

/// Inverse of [`escape_field`]. Fails on any escape the renderer never emits.
pub fn unescape_field(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('u') => {
                let hex: String = chars.by_ref().take(4).collect();
                match hex.as_str() {
                    "0085" => out.push('\u{0085}'),
                    "2028" => out.push('\u{2028}'),
                    other => return Err(format!("unknown escape `\\u{other}`")),
                }
            }
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".to_string()),
        }
    }
    Ok(out)
}

fn render_line(record: &EsisRecord, out: &mut String) {
    match record {
        EsisRecord::PrefixStart { prefix, uri } => {
            out.push('M');
            out.push_str(prefix);
            out.push(' ');
            out.push_str(uri);
        }
        EsisRecord::PrefixEnd { prefix } => {
            out.push('m');
            out.push_str(prefix);
        }
        EsisRecord::Attr { name, value } => {
            out.push('A');
            out.push_str(name);
            out.push_str(" CDATA ");
            out.push_str(&escape_field(value));
        }
        EsisRecord::NsAttr {
            namespace,
            local,
            value,
        } => {
            out.push('B');
            out.push_str(namespace);
            out.push(' ');
            out.push_str(local);
            out.push_str(" CDATA ");
            out.push_str(&escape_field(value));
        }
        EsisRecord::ElemStart { name } => {
            out.push('(');
            out.push_str(name);
        }
        EsisRecord::NsElemStart { namespace, local } => {
            out.push('[');
            out.push_str(namespace);
            out.push(' ');
            out.push_str(local);
        }
        EsisRecord::ElemEnd { name } => {
            out.push(')');
            out.push_str(name);
        }
        EsisRecord::NsElemEnd { namespace, local } => {
            out.push(']');
            out.push_str(namespace);
            out.push(' ');
            out.push_str(local);
        }
        EsisRecord::Text { text } => {
            out.push('-');
            out.push_str(&escape_field(text));
        }
        EsisRecord::IgnorableWs { text } => {
            out.push('=');
            out.push_str(&escape_field(text));
        }
        EsisRecord::Pi { target, data } => {
            out.push('?');
            out.push_str(target);
            out.push(' ');
            out.push_str(&escape_field(data));
        }
        EsisRecord::SkippedEntity { name } => {
            out.push('X');
            out.push_str(name);
        }
    }
}

/// Renders the human-readable unnormalized textual form, one line per
/// record, `\n`-terminated. This form is diagnostic; the signed bytes come
/// from the normalizer instead.
pub fn render_unnormalized(records: &[EsisRecord]) -> String {
    let mut out = String::new();
    for record in records {
        render_line(record, &mut out);
        out.push('\n');
    }
    out
}

/// Parses the unnormalized textual form back into records, accepting `\n`
/// or `\r\n` line terminators.
pub fn parse_unnormalized(text: &str) -> Result<Vec<EsisRecord>> {
    let mut records = Vec::new();
    for (idx, raw_line) in text.split('\n').enumerate() {
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.is_empty() && idx > 0 {
            // trailing terminator or blank trailing line
            continue;
        }
        records.push(parse_record_line(line, idx + 1)?);
    }
    Ok(records)
}

fn malformed(line: usize, message: impl Into<String>) -> Error {
    Error::MalformedRecord {
        line,
        message: message.into(),
    }
}

fn parse_record_line(line: &str, n: usize) -> Result<EsisRecord> {
    let mut chars = line.chars();
    let start = chars
        .next()
        .ok_or_else(|| malformed(n, "empty record line"))?;
    let rest = chars.as_str();
    let unescape = |s: &str| unescape_field(s).map_err(|m| malformed(n, m));
    match start {
        'M' => {
            let (prefix, uri) = rest
                .split_once(' ')
                .ok_or_else(|| malformed(n, "M record needs prefix and uri"))?;
            Ok(EsisRecord::PrefixStart {
                prefix: prefix.to_string(),
                uri: uri.to_string(),
            })
        }
        'm' => Ok(EsisRecord::PrefixEnd {
            prefix: rest.to_string(),
        }),
        'A' => {
            let (name, value) = rest
                .split_once(" CDATA ")
                .ok_or_else(|| malformed(n, "A record needs `name CDATA value`"))?;
            Ok(EsisRecord::Attr {
                name: name.to_string(),
                value: unescape(value)?,
            })
        }
        'B' => {
            let (head, value) = rest
                .split_once(" CDATA ")
                .ok_or_else(|| malformed(n, "B record needs `ns local CDATA value`"))?;
            let (namespace, local) = head
                .rsplit_once(' ')
                .ok_or_else(|| malformed(n, "B record needs a namespace and a local name"))?;
            Ok(EsisRecord::NsAttr {
                namespace: namespace.to_string(),
                local: local.to_string(),
                value: unescape(value)?,
            })
        }
        '(' => Ok(EsisRecord::ElemStart {
            name: rest.to_string(),
        }),
        ')' => Ok(EsisRecord::ElemEnd {
            name: rest.to_string(),
        }),
        '[' | ']' => {
            let (namespace, local) = rest
                .rsplit_once(' ')
                .ok_or_else(|| malformed(n, "namespaced element record needs `ns local`"))?;
            let namespace = namespace.to_string();
            let local = local.to_string();
            Ok(if start == '[' {
                EsisRecord::NsElemStart { namespace, local }
            } else {
                EsisRecord::NsElemEnd { namespace, local }
            })
        }
        '-' => Ok(EsisRecord::Text {
            text: unescape(rest)?,
        }),
        '=' => Ok(EsisRecord::IgnorableWs {
            text: unescape(rest)?,
        }),
        '?' => {
            let (target, data) = rest
                .split_once(' ')
                .ok_or_else(|| malformed(n, "? record needs `target data`"))?;
            Ok(EsisRecord::Pi {
                target: target.to_string(),
                data: unescape(data)?,
            })
        }
        'X' => Ok(EsisRecord::SkippedEntity {
            name: rest.to_string(),
        }),
        other => Err(malformed(n, format!("unknown record type `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::QualifiedName;

    fn qn(local: &str) -> QualifiedName {
        QualifiedName::local(local)
    }

    #[test]
    fn minimal_start_yields_attr_records_before_start() {
        let ev = DocEvent::StartElement {
            name: qn("p"),
            attributes: vec![Attribute::new(qn("class"), "foo")],
        };
        let mut out = Vec::new();
        records_for_event(&ev, &mut out);
        assert_eq!(
            out,
            vec![
                EsisRecord::Attr {
                    name: "class".into(),
                    value: "foo".into()
                },
                EsisRecord::ElemStart { name: "p".into() },
            ]
        );
    }

    #[test]
    fn namespaced_attr_and_element() {
        let ev = DocEvent::StartElement {
            name: QualifiedName::namespaced("urn:NS", "p").with_prefix("pfx"),
            attributes: vec![Attribute::new(
                QualifiedName::namespaced("urn:NS", "att").with_prefix("pfx"),
                "bar",
            )],
        };
        let mut out = Vec::new();
        records_for_event(&ev, &mut out);
        assert_eq!(
            out,
            vec![
                EsisRecord::NsAttr {
                    namespace: "urn:NS".into(),
                    local: "att".into(),
                    value: "bar".into()
                },
                EsisRecord::NsElemStart {
                    namespace: "urn:NS".into(),
                    local: "p".into()
                },
            ]
        );
    }

    #[test]
    fn xml_and_xmlns_attributes_are_never_rendered() {
        let ev = DocEvent::StartElement {
            name: qn("e"),
            attributes: vec![
                Attribute::new(
                    QualifiedName::namespaced(XML_NS_URI, "lang").with_prefix("xml"),
                    "en",
                ),
                Attribute::new(QualifiedName::namespaced(XMLNS_NS_URI, "pfx"), "urn:x"),
                Attribute::new(qn("kept"), "1"),
            ],
        };
        let mut out = Vec::new();
        records_for_event(&ev, &mut out);
        assert_eq!(
            out,
            vec![
                EsisRecord::Attr {
                    name: "kept".into(),
                    value: "1".into()
                },
                EsisRecord::ElemStart { name: "e".into() },
            ]
        );
    }

    #[test]
    fn ignorable_whitespace_maps_directly() {
        let mut out = Vec::new();
        records_for_event(&DocEvent::IgnorableWhitespace("\n  ".into()), &mut out);
        assert_eq!(
            out,
            vec![EsisRecord::IgnorableWs { text: "\n  ".into() }]
        );
    }

    #[test]
    fn render_escapes_line_ends_and_backslash() {
        let recs = vec![
            EsisRecord::Text {
                text: "\n\n".into(),
            },
            EsisRecord::PrefixStart {
                prefix: "pfx".into(),
                uri: "urn:NS".into(),
            },
            EsisRecord::Text {
                text: "a\\b".into(),
            },
            EsisRecord::Text {
                text: "x\u{0085}y\u{2028}z\r".into(),
            },
        ];
        let rendered = render_unnormalized(&recs);
        assert_eq!(
            rendered,
            "-\\n\\n\nMpfx urn:NS\n-a\\\\b\n-x\\u0085y\\u2028z\\r\n"
        );
    }

    #[test]
    fn rendered_lines_contain_no_raw_line_ends() {
        let recs = vec![
            EsisRecord::Pi {
                target: "t".into(),
                data: "a\nb\rc".into(),
            },
            EsisRecord::Attr {
                name: "a".into(),
                value: "x\u{2028}y".into(),
            },
        ];
        let rendered = render_unnormalized(&recs);
        for line in rendered.lines() {
            assert!(!line.contains(['\r', '\u{0085}', '\u{2028}']));
        }
    }

    #[test]
    fn parse_round_trips_fig_style_records() {
        let recs = vec![
            EsisRecord::ElemStart { name: "doc".into() },
            EsisRecord::PrefixStart {
                prefix: "pfx".into(),
                uri: "urn:NS".into(),
            },
            EsisRecord::Attr {
                name: "class".into(),
                value: "foo".into(),
            },
            EsisRecord::NsAttr {
                namespace: "urn:NS".into(),
                local: "att".into(),
                value: "bar".into(),
            },
            EsisRecord::NsElemStart {
                namespace: "urn:NS".into(),
                local: "p".into(),
            },
            EsisRecord::Text {
                text: "Hello".into(),
            },
            EsisRecord::NsElemEnd {
                namespace: "urn:NS".into(),
                local: "p".into(),
            },
            EsisRecord::PrefixEnd {
                prefix: "pfx".into(),
            },
            EsisRecord::Text {
                text: "\n\n".into(),
            },
            EsisRecord::Pi {
                target: "go".into(),
                data: "a='1'".into(),
            },
            EsisRecord::SkippedEntity { name: "chap".into() },
            EsisRecord::ElemEnd { name: "doc".into() },
        ];
        let parsed = parse_unnormalized(&render_unnormalized(&recs)).unwrap();
        assert_eq!(parsed, recs);
    }

    #[test]
    fn parse_default_prefix_mapping() {
        let recs = parse_unnormalized("M urn:x\nm\n").unwrap();
        assert_eq!(
            recs,
            vec![
                EsisRecord::PrefixStart {
                    prefix: String::new(),
                    uri: "urn:x".into()
                },
                EsisRecord::PrefixEnd {
                    prefix: String::new()
                },
            ]
        );
    }

    #[test]
    fn parse_rejects_unknown_start_char_and_bad_escape() {
        assert!(parse_unnormalized("Zx\n").is_err());
        assert!(parse_unnormalized("-a\\qb\n").is_err());
        assert!(parse_unnormalized("Aname foo\n").is_err());
    }
}
