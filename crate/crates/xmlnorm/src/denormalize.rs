//! Reconstruction of XML from a normalized blob.
//!
//! The inverse direction is partial by design: entity structure, CDATA
//! boundaries, prefixes and whitespace runs are gone, so the output is an
//! equivalent document rather than the original one. What does hold, and
//! what the fixed-point tests pin down, is that normalizing the
//! reconstructed document reproduces the input blob byte for byte.
//!
//! Namespaced records receive generated prefixes `ns1`, `ns2`, … assigned
//! in first-use order while scanning the blob; each prefix is declared on
//! the first element that needs it within the current scope.

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug)]
enum BlobLine<'a> {
    Attr { name: &'a str, value: &'a str },
    NsAttr { namespace: &'a str, local: &'a str, value: &'a str },
    ElemStart { name: &'a str },
    NsElemStart { namespace: &'a str, local: &'a str },
    ElemEnd { name: &'a str },
    NsElemEnd { namespace: &'a str, local: &'a str },
    Text { text: &'a str },
    Pi { target: &'a str, data: &'a str },
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::MalformedBlob {
        line,
        message: message.into(),
    }
}

fn name_ok(name: &str) -> bool {
    !name.is_empty()
        && !name.contains(|c: char| {
            c.is_whitespace() || matches!(c, '<' | '>' | '&' | '"' | '\'' | '/' | '=' | ':')
        })
}

fn parse_blob_line(line: &str, n: usize) -> Result<BlobLine<'_>> {
    let mut chars = line.chars();
    let start = chars.next().ok_or_else(|| bad(n, "empty line"))?;
    let rest = chars.as_str();
    match start {
        'M' | 'm' | '=' | 'X' => Err(bad(
            n,
            format!("record type `{start}` is not permitted in a normalized blob"),
        )),
        'A' => {
            let (name, value) = rest
                .split_once(" CDATA ")
                .ok_or_else(|| bad(n, "A record needs `name CDATA value`"))?;
            if !name_ok(name) {
                return Err(bad(n, format!("invalid attribute name `{name}`")));
            }
            Ok(BlobLine::Attr { name, value })
        }
        'B' => {
            let (head, value) = rest
                .split_once(" CDATA ")
                .ok_or_else(|| bad(n, "B record needs `ns local CDATA value`"))?;
            let (namespace, local) = head
                .rsplit_once(' ')
                .ok_or_else(|| bad(n, "B record needs a namespace and a local name"))?;
            if !name_ok(local) {
                return Err(bad(n, format!("invalid attribute name `{local}`")));
            }
            Ok(BlobLine::NsAttr {
                namespace,
                local,
                value,
            })
        }
        '(' | ')' => {
            if !name_ok(rest) {
                return Err(bad(n, format!("invalid element name `{rest}`")));
            }
            Ok(if start == '(' {
                BlobLine::ElemStart { name: rest }
            } else {
                BlobLine::ElemEnd { name: rest }
            })
        }
        '[' | ']' => {
            let (namespace, local) = rest
                .rsplit_once(' ')
                .ok_or_else(|| bad(n, "namespaced element record needs `ns local`"))?;
            if !name_ok(local) {
                return Err(bad(n, format!("invalid element name `{local}`")));
            }
            Ok(if start == '[' {
                BlobLine::NsElemStart { namespace, local }
            } else {
                BlobLine::NsElemEnd { namespace, local }
            })
        }
        '-' => Ok(BlobLine::Text { text: rest }),
        '?' => {
            let (target, data) = rest
                .split_once(' ')
                .ok_or_else(|| bad(n, "? record needs `target data`"))?;
            if target == "signature" {
                return Err(bad(n, "signature PI is not permitted in a normalized blob"));
            }
            if !name_ok(target) {
                return Err(bad(n, format!("invalid PI target `{target}`")));
            }
            if data.contains("?>") {
                return Err(bad(n, "PI data contains `?>`"));
            }
            Ok(BlobLine::Pi { target, data })
        }
        other => Err(bad(n, format!("unknown record type `{other}`"))),
    }
}

fn escape_text(text: &str, out: &mut String) {
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
}

fn escape_attr(value: &str, out: &mut String) {
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
}

struct PrefixTable {
    by_uri: HashMap<String, String>,
    next: usize,
}

impl PrefixTable {
    fn new() -> Self {
        PrefixTable {
            by_uri: HashMap::new(),
            next: 1,
        }
    }

    fn prefix_for(&mut self, uri: &str) -> String {
        if let Some(p) = self.by_uri.get(uri) {
            return p.clone();
        }
        let p = format!("ns{}", self.next);
        self.next += 1;
        self.by_uri.insert(uri.to_string(), p.clone());
        p
    }
}

/// Rebuilds an equivalent XML document from a normalized blob.
pub fn denormalize(blob: &[u8]) -> Result<String> {
    let text = std::str::from_utf8(blob)
        .map_err(|e| bad(0, format!("blob is not valid UTF-8: {e}")))?;

    let mut out = String::with_capacity(blob.len());
    let mut prefixes = PrefixTable::new();
    // URIs currently in scope, and per-element lists for scope exit
    let mut in_scope: HashMap<String, usize> = HashMap::new();
    let mut stack: Vec<(String, Vec<String>, String)> = Vec::new(); // (end qname, declared uris, end key)
    // buffered attribute lines waiting for their element start
    let mut attrs: Vec<(Option<(String, String)>, String, String)> = Vec::new(); // (ns+prefix, name, value)
    let mut roots = 0usize;

    let mut rest = text;
    let mut n = 0usize;
    while !rest.is_empty() {
        n += 1;
        let nl = rest
            .find('\n')
            .ok_or_else(|| bad(n, "final line lacks a CRLF terminator"))?;
        let with_cr = &rest[..nl];
        rest = &rest[nl + 1..];
        let line = with_cr
            .strip_suffix('\r')
            .ok_or_else(|| bad(n, "line terminated by LF without CR"))?;
        if line.contains(['\r', '\n']) {
            return Err(bad(n, "stray CR inside a line"));
        }
        let parsed = parse_blob_line(line, n)?;

        match parsed {
            BlobLine::Attr { name, value } => {
                attrs.push((None, name.to_string(), value.to_string()));
            }
            BlobLine::NsAttr {
                namespace,
                local,
                value,
            } => {
                let prefix = prefixes.prefix_for(namespace);
                attrs.push((
                    Some((namespace.to_string(), prefix)),
                    local.to_string(),
                    value.to_string(),
                ));
            }
            BlobLine::ElemStart { .. } | BlobLine::NsElemStart { .. } => {
                let (qname, elem_ns, end_key) = match &parsed {
                    BlobLine::ElemStart { name } => (name.to_string(), None, format!("){name}")),
                    BlobLine::NsElemStart { namespace, local } => {
                        let prefix = prefixes.prefix_for(namespace);
                        (
                            format!("{prefix}:{local}"),
                            Some((namespace.to_string(), prefix)),
                            format!("]{namespace} {local}"),
                        )
                    }
                    _ => unreachable!(),
                };
                if stack.is_empty() {
                    roots += 1;
                    if roots > 1 {
                        return Err(bad(n, "more than one root element"));
                    }
                }
                // declare any URI not already in scope, element's first
                let mut declared: Vec<String> = Vec::new();
                let mut decls: Vec<(String, String)> = Vec::new();
                {
                    let mut need = |uri: &str, prefix: &str| {
                        if !in_scope.contains_key(uri) && !declared.iter().any(|u| u == uri) {
                            declared.push(uri.to_string());
                            decls.push((prefix.to_string(), uri.to_string()));
                        }
                    };
                    if let Some((uri, prefix)) = &elem_ns {
                        need(uri, prefix);
                    }
                    for (ns, _, _) in &attrs {
                        if let Some((uri, prefix)) = ns {
                            need(uri, prefix);
                        }
                    }
                }
                out.push('<');
                out.push_str(&qname);
                for (prefix, uri) in &decls {
                    out.push_str(" xmlns:");
                    out.push_str(prefix);
                    out.push_str("=\"");
                    escape_attr(uri, &mut out);
                    out.push('"');
                }
                for (ns, name, value) in attrs.drain(..) {
                    out.push(' ');
                    if let Some((_, prefix)) = &ns {
                        out.push_str(prefix);
                        out.push(':');
                    }
                    out.push_str(&name);
                    out.push_str("=\"");
                    escape_attr(&value, &mut out);
                    out.push('"');
                }
                out.push('>');
                for uri in &declared {
                    *in_scope.entry(uri.clone()).or_insert(0) += 1;
                }
                stack.push((qname, declared, end_key));
            }
            BlobLine::ElemEnd { .. } | BlobLine::NsElemEnd { .. } => {
                if !attrs.is_empty() {
                    return Err(bad(n, "attribute records not followed by an element start"));
                }
                let end_key = match &parsed {
                    BlobLine::ElemEnd { name } => format!("){name}"),
                    BlobLine::NsElemEnd { namespace, local } => format!("]{namespace} {local}"),
                    _ => unreachable!(),
                };
                let (qname, declared, open_key) = stack
                    .pop()
                    .ok_or_else(|| bad(n, "end record with no open element"))?;
                if open_key != end_key {
                    return Err(bad(
                        n,
                        format!("end record does not match open element `{qname}`"),
                    ));
                }
                out.push_str("</");
                out.push_str(&qname);
                out.push('>');
                for uri in declared {
                    match in_scope.get_mut(&uri) {
                        Some(1) => {
                            in_scope.remove(&uri);
                        }
                        Some(k) => *k -= 1,
                        None => {}
                    }
                }
            }
            BlobLine::Text { text } => {
                if !attrs.is_empty() {
                    return Err(bad(n, "attribute records not followed by an element start"));
                }
                if stack.is_empty() {
                    return Err(bad(n, "character content outside the root element"));
                }
                escape_text(text, &mut out);
            }
            BlobLine::Pi { target, data } => {
                if !attrs.is_empty() {
                    return Err(bad(n, "attribute records not followed by an element start"));
                }
                out.push_str("<?");
                out.push_str(target);
                if !data.is_empty() {
                    out.push(' ');
                    out.push_str(data);
                }
                out.push_str("?>");
            }
        }
    }
    if !attrs.is_empty() {
        return Err(bad(n, "dangling attribute records at end of blob"));
    }
    if let Some((qname, _, _)) = stack.last() {
        return Err(bad(n, format!("element `{qname}` is never closed")));
    }
    if roots == 0 {
        return Err(bad(n, "blob contains no root element"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize_xml;

    fn fixed_point(blob: &[u8]) {
        let xml = denormalize(blob).unwrap();
        let again = normalize_xml(xml.as_bytes()).unwrap();
        assert_eq!(
            again.as_bytes(),
            blob,
            "not a fixed point; reconstructed XML was: {xml}"
        );
    }

    #[test]
    fn minimal_inverse() {
        assert_eq!(denormalize(b"(a\r\n)a\r\n").unwrap(), "<a></a>");
    }

    #[test]
    fn namespaced_records_get_generated_prefixes() {
        let xml = denormalize(b"[urn:NS p\r\n]urn:NS p\r\n").unwrap();
        assert_eq!(xml, "<ns1:p xmlns:ns1=\"urn:NS\"></ns1:p>");
    }

    #[test]
    fn figure_blob_round_trips() {
        let blob: &[u8] = b"(doc\r\nAclass CDATA foo\r\nBurn:NS att CDATA bar\r\n[urn:NS p\r\n-Hello\r\n]urn:NS p\r\n(p\r\n- & goodbye, chum\r\n)p\r\n)doc\r\n";
        fixed_point(blob);
        let xml = denormalize(blob).unwrap();
        // the B record's URI is first use, so it takes ns1
        assert!(xml.contains("xmlns:ns1=\"urn:NS\""), "{xml}");
        assert!(xml.contains("ns1:att=\"bar\""), "{xml}");
        assert!(xml.contains("<ns1:p "), "{xml}");
    }

    #[test]
    fn scope_reopens_for_sibling_subtrees() {
        let blob: &[u8] = b"(d\r\n[urn:x e\r\n]urn:x e\r\n[urn:x f\r\n]urn:x f\r\n)d\r\n";
        fixed_point(blob);
        let xml = denormalize(blob).unwrap();
        // same prefix, declared once per sibling
        assert_eq!(xml.matches("xmlns:ns1=\"urn:x\"").count(), 2, "{xml}");
    }

    #[test]
    fn text_with_markup_characters_is_escaped() {
        let blob: &[u8] = b"(a\r\n-x < y & z > \"w\"\r\n)a\r\n";
        fixed_point(blob);
    }

    #[test]
    fn pis_outside_the_root_are_preserved() {
        let blob: &[u8] = b"?style a='1'\r\n(a\r\n?inner b\r\n)a\r\n?post c\r\n";
        fixed_point(blob);
    }

    #[test]
    fn malformed_blobs_are_rejected() {
        for bad in [
            &b"(a\n)a\n"[..],               // LF-only terminator
            &b"(a\r\n"[..],                 // unbalanced
            &b")a\r\n"[..],                 // end without start
            &b"(a\r\n)b\r\n"[..],           // mismatched names
            &b"Zx\r\n"[..],                 // unknown type
            &b"Mpfx u\r\n"[..],             // forbidden type
            &b"(a\r\n?signature x\r\n)a\r\n"[..], // signature PI inside blob
            &b"-text\r\n"[..],              // text outside root
            &b"Aa CDATA v\r\n-x\r\n"[..],   // attrs not before start
            &b"(a\r\n)a\r\n(b\r\n)b\r\n"[..], // two roots
            &b"?pi x\r\n"[..],              // no root at all
            &b"(a\r\n)a"[..],               // missing final terminator
            &b"(a b\r\n)a b\r\n"[..],       // space in unqualified name
        ] {
            assert!(
                denormalize(bad).is_err(),
                "expected malformed: {:?}",
                String::from_utf8_lossy(bad)
            );
        }
    }

    #[test]
    fn uri_with_spaces_parses_via_rest_of_line_rule() {
        // invalid as a URI but parseable; the local name is the last field
        let blob: &[u8] = b"[urn:with space e\r\n]urn:with space e\r\n";
        let xml = denormalize(blob).unwrap();
        assert!(xml.contains("xmlns:ns1=\"urn:with space\""), "{xml}");
    }
}
