//! Normalization of a record stream into the unique signed byte blob.
//!
//! The transformation, applied per record in this order:
//!
//! 1. prefix mappings, ignorable whitespace and skipped entities are
//!    dropped;
//! 2. attributes in the `xml`/`xmlns` namespaces are dropped;
//! 3. processing instructions whose target is exactly `signature` are
//!    dropped;
//! 4. runs of consecutive text records are merged;
//! 5. attribute values, text and PI data have every run of whitespace
//!    characters collapsed to a single space;
//! 6. text records that are empty or whitespace-only after collapsing are
//!    dropped;
//! 7. surviving records render one per line, fields space-joined, with the
//!    literal token `CDATA` in attribute records;
//! 8. output is UTF-8, each line terminated CR LF, and each element's
//!    attribute lines sorted bytewise ascending.
//!
//! The result is identical for every document in the equivalence class:
//! quote styles, attribute order, prefixes, encodings, entity structure
//! and whitespace runs all wash out.

use std::io::Write;

use crate::error::{Error, Result};
use crate::esis::EsisRecord;

/// Whether a whole record sequence or only the next element's subtree is
/// normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizeScope {
    #[default]
    WholeDocument,
    /// Only records from the next element's attribute block through its
    /// matching end record.
    SubtreeOfNextElement,
}

/// Options for [`normalize`].
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizeOptions {
    pub scope: NormalizeScope,
}

/// The unique byte sequence produced by normalization; the thing that gets
/// signed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedBlob {
    bytes: Vec<u8>,
}

impl NormalizedBlob {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        NormalizedBlob { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// Checks every structural invariant of the blob grammar. Returns a
    /// description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let text = std::str::from_utf8(&self.bytes).map_err(|e| format!("not UTF-8: {e}"))?;
        let mut rest = text;
        let mut attr_run: Vec<&str> = Vec::new();
        let mut stack: Vec<&str> = Vec::new();
        while !rest.is_empty() {
            let nl = rest
                .find('\n')
                .ok_or("final line lacks a CRLF terminator")?;
            let with_cr = &rest[..nl];
            rest = &rest[nl + 1..];
            let line = with_cr
                .strip_suffix('\r')
                .ok_or("line terminated by LF without CR")?;
            if line.bytes().any(|b| b == 0x0D || b == 0x0A) {
                return Err("stray CR or LF inside a line".into());
            }
            if line.bytes().any(|b| b < 0x20) {
                return Err(format!("control byte inside line `{line}`"));
            }
            let (start, fields) = match line.chars().next() {
                Some(c) => (c, &line[c.len_utf8()..]),
                None => return Err("empty line".into()),
            };
            if matches!(start, 'M' | 'm' | '=' | 'X') {
                return Err(format!("record type `{start}` not permitted in a blob"));
            }
            if start == '?' {
                let target = fields.split(' ').next().unwrap_or("");
                if target == "signature" {
                    return Err("signature PI present in blob".into());
                }
            }
            match start {
                'A' | 'B' => attr_run.push(line),
                '(' | '[' => {
                    if !attr_run.windows(2).all(|w| w[0] <= w[1]) {
                        return Err("attribute block not sorted".into());
                    }
                    attr_run.clear();
                    stack.push(fields);
                }
                ')' | ']' => {
                    if !attr_run.is_empty() {
                        return Err("attribute records not followed by an element start".into());
                    }
                    match stack.pop() {
                        Some(open) if open == fields => {}
                        Some(open) => {
                            return Err(format!("end `{fields}` does not match start `{open}`"))
                        }
                        None => return Err("unbalanced end record".into()),
                    }
                }
                _ => {
                    if !attr_run.is_empty() {
                        return Err("attribute records not followed by an element start".into());
                    }
                }
            }
        }
        if !attr_run.is_empty() {
            return Err("dangling attribute records".into());
        }
        if !stack.is_empty() {
            return Err("unbalanced start record".into());
        }
        Ok(())
    }
}

impl AsRef<[u8]> for NormalizedBlob {
    fn as_ref(&self) -> &[u8] {
        &self.bytes
    }
}

/// The collapsible whitespace set: every character up to and including
/// U+0020, plus NEL and the line separator. Other Unicode spaces (category
/// Zs, e.g. NBSP) pass through.
pub fn is_collapsible_whitespace(c: char) -> bool {
    c <= '\u{0020}' || c == '\u{0085}' || c == '\u{2028}'
}

/// Collapses every run of whitespace characters to a single space, without
/// trimming: a leading or trailing run becomes a leading or trailing space.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_run = false;
    for c in text.chars() {
        if is_collapsible_whitespace(c) {
            in_run = true;
        } else {
            if in_run {
                out.push(' ');
                in_run = false;
            }
            out.push(c);
        }
    }
    if in_run {
        out.push(' ');
    }
    out
}

const CRLF: &[u8] = b"\r\n";

/// Streaming normalizer: feed records with [`push`](Normalizer::push),
/// bytes fall out of the sink incrementally. Buffering is bounded by one
/// element's attribute block; merged text is collapsed and emitted on the
/// fly.
pub struct Normalizer<W: Write> {
    sink: W,
    attr_block: Vec<String>,
    text_started: bool,
    text_pending_space: bool,
    stack: Vec<String>,
}

impl<W: Write> Normalizer<W> {
    pub fn new(sink: W) -> Self {
        Normalizer {
            sink,
            attr_block: Vec::new(),
            text_started: false,
            text_pending_space: false,
            stack: Vec::new(),
        }
    }

    /// Open-element depth seen so far; reaches zero again when the record
    /// stream is balanced.
    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn push(&mut self, record: &EsisRecord) -> Result<()> {
        match record {
            EsisRecord::PrefixStart { .. }
            | EsisRecord::PrefixEnd { .. }
            | EsisRecord::IgnorableWs { .. }
            | EsisRecord::SkippedEntity { .. } => Ok(()),
            EsisRecord::Pi { target, .. } if target == "signature" => Ok(()),
            EsisRecord::Attr { name, value } => {
                // Defensive re-check of the xml/xmlns rule for hand-built
                // record streams; parsed streams never carry these here.
                if name == "xmlns" || name.starts_with("xmlns:") || name.starts_with("xml:") {
                    return Ok(());
                }
                self.flush_text()?;
                self.attr_block
                    .push(format!("A{name} CDATA {}", collapse_whitespace(value)));
                Ok(())
            }
            EsisRecord::NsAttr {
                namespace,
                local,
                value,
            } => {
                if namespace == crate::event::XML_NS_URI || namespace == crate::event::XMLNS_NS_URI
                {
                    return Ok(());
                }
                self.flush_text()?;
                self.attr_block.push(format!(
                    "B{namespace} {local} CDATA {}",
                    collapse_whitespace(value)
                ));
                Ok(())
            }
            EsisRecord::ElemStart { name } => self.open_element(format!("({name}")),
            EsisRecord::NsElemStart { namespace, local } => {
                self.open_element(format!("[{namespace} {local}"))
            }
            EsisRecord::ElemEnd { name } => self.close_element(format!("){name}")),
            EsisRecord::NsElemEnd { namespace, local } => {
                self.close_element(format!("]{namespace} {local}"))
            }
            EsisRecord::Pi { target, data } => {
                self.flush_text()?;
                self.reject_pending_attrs("processing instruction")?;
                self.sink.write_all(b"?")?;
                self.sink.write_all(target.as_bytes())?;
                self.sink.write_all(b" ")?;
                self.sink
                    .write_all(collapse_whitespace(data).as_bytes())?;
                self.sink.write_all(CRLF)?;
                Ok(())
            }
            EsisRecord::Text { text } => {
                self.reject_pending_attrs("text")?;
                self.push_text(text)
            }
        }
    }

    /// Merges and collapses text incrementally: whitespace runs become a
    /// single pending space that is emitted only when a non-whitespace
    /// character (or the line terminator for a trailing run) follows.
    fn push_text(&mut self, text: &str) -> Result<()> {
        let mut rest = text;
        while !rest.is_empty() {
            match rest.find(|c| !is_collapsible_whitespace(c)) {
                None => {
                    self.text_pending_space = true;
                    break;
                }
                Some(start) => {
                    if start > 0 {
                        self.text_pending_space = true;
                    }
                    rest = &rest[start..];
                    let end = rest
                        .find(is_collapsible_whitespace)
                        .unwrap_or(rest.len());
                    if !self.text_started {
                        self.sink.write_all(b"-")?;
                        self.text_started = true;
                    }
                    if self.text_pending_space {
                        self.sink.write_all(b" ")?;
                        self.text_pending_space = false;
                    }
                    self.sink.write_all(rest[..end].as_bytes())?;
                    rest = &rest[end..];
                }
            }
        }
        Ok(())
    }

    fn flush_text(&mut self) -> Result<()> {
        if self.text_started {
            if self.text_pending_space {
                self.sink.write_all(b" ")?;
            }
            self.sink.write_all(CRLF)?;
            self.text_started = false;
        }
        // a whitespace-only run never opened a line: discard it
        self.text_pending_space = false;
        Ok(())
    }

    fn reject_pending_attrs(&self, what: &str) -> Result<()> {
        if self.attr_block.is_empty() {
            Ok(())
        } else {
            Err(Error::Nesting(format!(
                "attribute records must immediately precede an element start, found {what}"
            )))
        }
    }

    fn open_element(&mut self, line: String) -> Result<()> {
        self.flush_text()?;
        self.attr_block.sort_unstable();
        for attr_line in self.attr_block.drain(..) {
            self.sink.write_all(attr_line.as_bytes())?;
            self.sink.write_all(CRLF)?;
        }
        self.sink.write_all(line.as_bytes())?;
        self.sink.write_all(CRLF)?;
        self.stack.push(line);
        Ok(())
    }

    fn close_element(&mut self, line: String) -> Result<()> {
        self.flush_text()?;
        self.reject_pending_attrs("element end")?;
        match self.stack.pop() {
            Some(open) if open[1..] == line[1..] && bracket_matches(&open, &line) => {}
            Some(open) => {
                return Err(Error::Nesting(format!(
                    "end record `{line}` does not match start `{open}`"
                )))
            }
            None => {
                return Err(Error::Nesting(format!(
                    "end record `{line}` with no open element"
                )))
            }
        }
        self.sink.write_all(line.as_bytes())?;
        self.sink.write_all(CRLF)?;
        Ok(())
    }

    /// Flushes pending state and returns the sink. Fails if elements are
    /// still open or attribute records dangle.
    pub fn finish(mut self) -> Result<W> {
        self.flush_text()?;
        self.reject_pending_attrs("end of input")?;
        if !self.stack.is_empty() {
            return Err(Error::Nesting(format!(
                "{} element(s) still open at end of input",
                self.stack.len()
            )));
        }
        Ok(self.sink)
    }
}

fn bracket_matches(open: &str, close: &str) -> bool {
    matches!(
        (open.as_bytes()[0], close.as_bytes()[0]),
        (b'(', b')') | (b'[', b']')
    )
}

/// Returns the slice covering the next element's attribute block through
/// its matching end record.
pub(crate) fn subtree_slice(records: &[EsisRecord]) -> Result<&[EsisRecord]> {
    let start = records
        .iter()
        .position(|r| r.is_elem_start())
        .ok_or(Error::NoTargetElement)?;
    let mut block_start = start;
    while block_start > 0 && records[block_start - 1].is_attr() {
        block_start -= 1;
    }
    let mut depth = 0usize;
    for (i, record) in records.iter().enumerate().skip(start) {
        if record.is_elem_start() {
            depth += 1;
        } else if record.is_elem_end() {
            depth -= 1;
            if depth == 0 {
                return Ok(&records[block_start..=i]);
            }
        }
    }
    Err(Error::Nesting(
        "subtree has no matching end record".to_string(),
    ))
}

/// Normalizes a record sequence into a blob.
pub fn normalize(records: &[EsisRecord], options: &NormalizeOptions) -> Result<NormalizedBlob> {
    let slice = match options.scope {
        NormalizeScope::WholeDocument => records,
        NormalizeScope::SubtreeOfNextElement => subtree_slice(records)?,
    };
    let mut normalizer = Normalizer::new(Vec::new());
    for record in slice {
        normalizer.push(record)?;
    }
    Ok(NormalizedBlob::from_bytes(normalizer.finish()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esis::events_to_records;
    use crate::event::{Attribute, DocEvent, QualifiedName};

    #[test]
    fn collapse_matches_stated_examples() {
        assert_eq!(
            collapse_whitespace("   &\rgoodbye,\nchum"),
            " & goodbye, chum"
        );
        assert_eq!(collapse_whitespace("abc"), "abc");
        assert_eq!(collapse_whitespace("a\u{00A0}b"), "a\u{00A0}b");
    }

    #[test]
    fn collapse_handles_edges_and_exotics() {
        assert_eq!(collapse_whitespace(""), "");
        assert_eq!(collapse_whitespace(" \t\r\n"), " ");
        assert_eq!(collapse_whitespace("a\u{0085}b\u{2028}c"), "a b c");
        assert_eq!(collapse_whitespace("  x  "), " x ");
        // U+2029 (paragraph separator) is not in the set
        assert_eq!(collapse_whitespace("a\u{2029}b"), "a\u{2029}b");
    }

    fn blob_of(events: &[DocEvent]) -> NormalizedBlob {
        normalize(&events_to_records(events), &NormalizeOptions::default()).unwrap()
    }

    #[test]
    fn minimal_element() {
        let blob = blob_of(&[
            DocEvent::StartDocument,
            DocEvent::StartElement {
                name: QualifiedName::local("a"),
                attributes: vec![],
            },
            DocEvent::EndElement {
                name: QualifiedName::local("a"),
            },
            DocEvent::EndDocument,
        ]);
        assert_eq!(blob.as_bytes(), b"(a\r\n)a\r\n");
        blob.check_invariants().unwrap();
    }

    #[test]
    fn attribute_lines_sort_bytewise() {
        let blob = blob_of(&[
            DocEvent::StartElement {
                name: QualifiedName::local("e"),
                attributes: vec![
                    Attribute::new(QualifiedName::local("b"), "2"),
                    Attribute::new(QualifiedName::local("a"), "1"),
                ],
            },
            DocEvent::EndElement {
                name: QualifiedName::local("e"),
            },
        ]);
        assert_eq!(blob.as_bytes(), b"Aa CDATA 1\r\nAb CDATA 2\r\n(e\r\n)e\r\n");
    }

    #[test]
    fn text_runs_merge_before_collapse() {
        // "a" + "   " + "b" in three records must not become "a b" vs "a  b"
        let records = vec![
            EsisRecord::ElemStart { name: "r".into() },
            EsisRecord::Text { text: "a".into() },
            EsisRecord::Text { text: "  ".into() },
            EsisRecord::Text { text: " b".into() },
            EsisRecord::ElemEnd { name: "r".into() },
        ];
        let blob = normalize(&records, &NormalizeOptions::default()).unwrap();
        assert_eq!(blob.as_bytes(), b"(r\r\n-a b\r\n)r\r\n");
    }

    #[test]
    fn whitespace_only_text_dropped_even_when_split() {
        let records = vec![
            EsisRecord::ElemStart { name: "r".into() },
            EsisRecord::Text { text: "\n".into() },
            EsisRecord::Text { text: "  \t".into() },
            EsisRecord::ElemEnd { name: "r".into() },
        ];
        let blob = normalize(&records, &NormalizeOptions::default()).unwrap();
        assert_eq!(blob.as_bytes(), b"(r\r\n)r\r\n");
    }

    #[test]
    fn trailing_whitespace_run_keeps_one_space() {
        let records = vec![
            EsisRecord::ElemStart { name: "p".into() },
            EsisRecord::Text {
                text: " there\nchum\n".into(),
            },
            EsisRecord::ElemEnd { name: "p".into() },
        ];
        let blob = normalize(&records, &NormalizeOptions::default()).unwrap();
        assert_eq!(blob.as_bytes(), b"(p\r\n- there chum \r\n)p\r\n");
    }

    #[test]
    fn signature_pis_dropped_other_pis_kept() {
        let records = vec![
            EsisRecord::ElemStart { name: "r".into() },
            EsisRecord::Pi {
                target: "signature".into(),
                data: "algorithm='sha1' content='x'".into(),
            },
            EsisRecord::Pi {
                target: "signatureX".into(),
                data: "kept".into(),
            },
            EsisRecord::Pi {
                target: "style".into(),
                data: "a\t b".into(),
            },
            EsisRecord::ElemEnd { name: "r".into() },
        ];
        let blob = normalize(&records, &NormalizeOptions::default()).unwrap();
        assert_eq!(
            blob.as_bytes(),
            b"(r\r\n?signatureX kept\r\n?style a b\r\n)r\r\n"
        );
    }

    #[test]
    fn dropped_record_types() {
        let records = vec![
            EsisRecord::PrefixStart {
                prefix: "p".into(),
                uri: "urn:x".into(),
            },
            EsisRecord::ElemStart { name: "r".into() },
            EsisRecord::IgnorableWs { text: "\n".into() },
            EsisRecord::SkippedEntity { name: "e".into() },
            EsisRecord::ElemEnd { name: "r".into() },
            EsisRecord::PrefixEnd { prefix: "p".into() },
        ];
        let blob = normalize(&records, &NormalizeOptions::default()).unwrap();
        assert_eq!(blob.as_bytes(), b"(r\r\n)r\r\n");
    }

    #[test]
    fn unbalanced_records_error() {
        let records = vec![EsisRecord::ElemStart { name: "r".into() }];
        assert!(matches!(
            normalize(&records, &NormalizeOptions::default()),
            Err(Error::Nesting(_))
        ));
        let records = vec![
            EsisRecord::ElemStart { name: "r".into() },
            EsisRecord::ElemEnd { name: "s".into() },
        ];
        assert!(matches!(
            normalize(&records, &NormalizeOptions::default()),
            Err(Error::Nesting(_))
        ));
        // bracket kinds must correspond even when names match
        let records = vec![
            EsisRecord::NsElemStart {
                namespace: "u".into(),
                local: "r".into(),
            },
            EsisRecord::ElemEnd { name: "u r".into() },
        ];
        assert!(normalize(&records, &NormalizeOptions::default()).is_err());
    }

    #[test]
    fn subtree_scope_selects_next_element_with_its_attrs() {
        let records = vec![
            EsisRecord::Text {
                text: "outside".into(),
            },
            EsisRecord::Attr {
                name: "k".into(),
                value: "v".into(),
            },
            EsisRecord::ElemStart { name: "e".into() },
            EsisRecord::Text { text: "in".into() },
            EsisRecord::ElemEnd { name: "e".into() },
            EsisRecord::Text {
                text: "after".into(),
            },
        ];
        let blob = normalize(
            &records,
            &NormalizeOptions {
                scope: NormalizeScope::SubtreeOfNextElement,
            },
        )
        .unwrap();
        assert_eq!(blob.as_bytes(), b"Ak CDATA v\r\n(e\r\n-in\r\n)e\r\n");
    }

    #[test]
    fn subtree_scope_without_element_errors() {
        let records = vec![EsisRecord::Text { text: "x".into() }];
        assert!(matches!(
            normalize(
                &records,
                &NormalizeOptions {
                    scope: NormalizeScope::SubtreeOfNextElement,
                },
            ),
            Err(Error::NoTargetElement)
        ));
    }

    #[test]
    fn invariant_checker_flags_violations() {
        let ok = NormalizedBlob::from_bytes(b"(a\r\n)a\r\n".to_vec());
        ok.check_invariants().unwrap();
        for bad in [
            &b"(a\n)a\n"[..],                          // LF-only terminators
            &b"Mpfx urn:x\r\n"[..],                    // forbidden record type
            &b"?signature a='1'\r\n"[..],              // signature PI
            &b"Ab CDATA 2\r\nAa CDATA 1\r\n(e\r\n)e\r\n"[..], // unsorted attrs
            &b"(a\r\n"[..],                            // unbalanced
            &b"Aa CDATA 1\r\n-x\r\n"[..],              // attrs not before start
            &b"(a\r\n-x\ty\r\n)a\r\n"[..],             // control byte in line
        ] {
            assert!(
                NormalizedBlob::from_bytes(bad.to_vec())
                    .check_invariants()
                    .is_err(),
                "expected violation for {:?}",
                String::from_utf8_lossy(bad)
            );
        }
    }
}
