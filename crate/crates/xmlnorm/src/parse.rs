//! Adapter from raw XML bytes to the decoded event stream.
//!
//! Tokenizing is delegated to quick-xml; this layer adds what the event
//! contract requires on top of it: encoding detection including UTF-16
//! (which quick-xml does not decode), line-end normalization for XML 1.0
//! and 1.1, attribute-value normalization, character and entity reference
//! expansion (with internal-subset entity declarations), namespace
//! resolution with prefix-mapping events in declaration order, and the
//! well-formedness checks a conformant event parser performs.
//!
//! Comments and DOCTYPE internals never reach the event stream.

use std::collections::HashMap;
use std::io::{BufRead, Cursor, Read};

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use crate::error::{Error, Result};
use crate::event::{Attribute, DocEvent, QualifiedName, XMLNS_NS_URI, XML_NS_URI};

/// Parses a complete document into its event sequence.
pub fn events_from_xml(xml: &[u8]) -> Result<Vec<DocEvent>> {
    EventReader::new(xml)?.collect()
}

enum Source<R> {
    Direct(R),
    Memory(Cursor<Vec<u8>>),
}

impl<R: BufRead> Read for Source<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        match self {
            Source::Direct(r) => r.read(buf),
            Source::Memory(c) => c.read(buf),
        }
    }
}

impl<R: BufRead> BufRead for Source<R> {
    fn fill_buf(&mut self) -> std::io::Result<&[u8]> {
        match self {
            Source::Direct(r) => r.fill_buf(),
            Source::Memory(c) => c.fill_buf(),
        }
    }
    fn consume(&mut self, amt: usize) {
        match self {
            Source::Direct(r) => r.consume(amt),
            Source::Memory(c) => c.consume(amt),
        }
    }
}

#[derive(Debug, Clone)]
enum Entity {
    /// Replacement text with character references already expanded;
    /// general-entity references inside are expanded at point of use.
    Internal(String),
    /// Declared SYSTEM/PUBLIC; never read, reported as skipped.
    External,
    /// Internal but containing markup; rejected at point of use.
    Markup,
}

struct OpenElement {
    name: QualifiedName,
    /// Prefixes declared on this element, in declaration order.
    declared: Vec<String>,
}

/// Streaming pull reader producing [`DocEvent`]s.
///
/// The source is read exactly once. UTF-16 input (detected by BOM or by
/// the `<?` pattern) is transcoded up front; ASCII-compatible encodings
/// (UTF-8, Latin-1, windows-125x) stream through.
pub struct EventReader<R: BufRead> {
    reader: Reader<Source<R>>,
    /// Set for transcoded UTF-16 input: the stream is known UTF-8 and the
    /// stale `encoding=` label in the declaration must not re-interpret it.
    force_utf8: bool,
    buf: Vec<u8>,
    queue: std::collections::VecDeque<DocEvent>,
    /// (prefix, binding); a `None` binding means the prefix is unbound.
    ns_stack: Vec<(String, Option<String>)>,
    frame_sizes: Vec<usize>,
    open: Vec<OpenElement>,
    entities: HashMap<String, Entity>,
    /// True when an external subset or parameter entities make the set of
    /// declared entities unknowable; undeclared references in content are
    /// then reported as skipped rather than rejected.
    may_skip: bool,
    xml11: bool,
    root_seen: bool,
    doctype_seen: bool,
    done: bool,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(mut source: R) -> Result<Self> {
        let head = source.fill_buf()?;
        let (inner, force_utf8) = match detect_utf16(head) {
            Some(big_endian) => (
                Source::Memory(Cursor::new(transcode_utf16(source, big_endian)?)),
                true,
            ),
            None => (Source::Direct(source), false),
        };
        let mut reader = Reader::from_reader(inner);
        let config = reader.config_mut();
        config.expand_empty_elements = true;
        config.check_comments = true;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(DocEvent::StartDocument);
        Ok(EventReader {
            reader,
            force_utf8,
            buf: Vec::new(),
            queue,
            ns_stack: Vec::new(),
            frame_sizes: Vec::new(),
            open: Vec::new(),
            entities: HashMap::new(),
            may_skip: false,
            xml11: false,
            root_seen: false,
            doctype_seen: false,
            done: false,
        })
    }

    /// Byte position in the decoded input; used to annotate errors.
    pub fn position(&self) -> u64 {
        self.reader.buffer_position()
    }

    fn err_here(&self, message: impl Into<String>) -> Error {
        Error::WellFormedness {
            offset: self.reader.buffer_position(),
            message: message.into(),
        }
    }

    /// Returns the next decoded event, or `None` after `EndDocument`.
    pub fn next_event(&mut self) -> Result<Option<DocEvent>> {
        loop {
            if let Some(ev) = self.queue.pop_front() {
                return Ok(Some(ev));
            }
            if self.done {
                return Ok(None);
            }
            let mut buf = std::mem::take(&mut self.buf);
            buf.clear();
            let outcome = match self.reader.read_event_into(&mut buf) {
                Ok(ev) => self.process(ev),
                Err(e) => Err(self.map_error(e)),
            };
            self.buf = buf;
            outcome?;
        }
    }

    fn process(&mut self, event: Event<'_>) -> Result<()> {
        {
            match event {
                Event::Decl(decl) => {
                    if let Ok(v) = decl.version() {
                        if v.as_ref() == b"1.1" {
                            self.xml11 = true;
                        }
                    }
                }
                Event::DocType(text) => {
                    if self.doctype_seen {
                        return Err(self.err_here("more than one DOCTYPE declaration"));
                    }
                    if self.root_seen {
                        return Err(self.err_here("DOCTYPE after the root element"));
                    }
                    self.doctype_seen = true;
                    let decoded = self.decode(&text)?;
                    self.parse_doctype(&decoded)?;
                }
                Event::Comment(_) => {}
                Event::Start(start) => self.handle_start(&start)?,
                Event::End(_) => self.handle_end()?,
                Event::Text(text) => {
                    let decoded = self.decode(&text)?;
                    self.handle_text(&decoded)?;
                }
                Event::CData(cdata) => {
                    if self.open.is_empty() {
                        return Err(self.err_here("CDATA section outside the root element"));
                    }
                    let decoded = self.decode(&cdata)?;
                    let normalized = normalize_line_ends(&decoded, self.xml11);
                    self.check_literal_chars(&normalized)?;
                    self.queue.push_back(DocEvent::Characters(normalized));
                }
                Event::PI(pi) => {
                    let target = self.decode(pi.target())?.into_owned();
                    self.validate_pi_target(&target)?;
                    let content = self.decode(pi.content())?;
                    let data = normalize_line_ends(&content, self.xml11)
                        .trim_matches(['\t', '\n', ' '])
                        .to_string();
                    self.queue.push_back(DocEvent::ProcessingInstruction { target, data });
                }
                Event::Empty(_) => unreachable!("empty elements are expanded"),
                Event::Eof => {
                    if let Some(open) = self.open.last() {
                        return Err(self.err_here(format!(
                            "document ended with <{}> still open",
                            open.name.as_qname()
                        )));
                    }
                    if !self.root_seen {
                        return Err(self.err_here("no root element"));
                    }
                    self.done = true;
                    self.queue.push_back(DocEvent::EndDocument);
                }
            }
        }
        Ok(())
    }

    fn map_error(&self, e: quick_xml::Error) -> Error {
        match e {
            quick_xml::Error::Io(io) => Error::Encoding(io.to_string()),
            quick_xml::Error::NonDecodable(_) => Error::Encoding(e.to_string()),
            other => Error::WellFormedness {
                offset: self.reader.error_position(),
                message: other.to_string(),
            },
        }
    }

    fn decode<'b>(&self, bytes: &'b [u8]) -> Result<std::borrow::Cow<'b, str>> {
        if self.force_utf8 {
            return std::str::from_utf8(bytes)
                .map(std::borrow::Cow::Borrowed)
                .map_err(|e| Error::Encoding(e.to_string()));
        }
        self.reader
            .decoder()
            .decode(bytes)
            .map_err(|e| Error::Encoding(e.to_string()))
    }

    fn handle_text(&mut self, raw: &str) -> Result<()> {
        if self.open.is_empty() {
            // Only whitespace may appear outside the root element; even a
            // character reference would be content here, so the raw text
            // is what must be blank.
            if raw.chars().all(|c| matches!(c, ' ' | '\t' | '\r' | '\n')) {
                return Ok(());
            }
            return Err(self.err_here("character content outside the root element"));
        }
        let normalized = normalize_line_ends(raw, self.xml11);
        let pieces = self.expand_content(&normalized)?;
        for piece in pieces {
            self.queue.push_back(piece);
        }
        Ok(())
    }

    fn handle_start(&mut self, start: &BytesStart) -> Result<()> {
        if self.open.is_empty() && self.root_seen {
            return Err(self.err_here("more than one root element"));
        }
        let qname = self.decode(start.name().0)?.into_owned();
        let (prefix, local) = self.split_qname(&qname)?;
        if prefix.as_deref() == Some("xmlns") {
            return Err(self.err_here("`xmlns` cannot be used as an element prefix"));
        }

        // First pass over the attributes: collect declarations (in document
        // order) and plain attributes, normalizing every value.
        let mut declarations: Vec<(String, String)> = Vec::new();
        let mut plain: Vec<(Option<String>, String, String)> = Vec::new();
        for attr in start.attributes() {
            let attr = attr.map_err(|e| self.err_here(e.to_string()))?;
            let key = self.decode(attr.key.0)?.into_owned();
            let raw_value = self.decode(&attr.value)?.into_owned();
            let value = self.normalize_attr_value(&raw_value)?;
            if key == "xmlns" {
                self.validate_ns_declaration("", &value)?;
                declarations.push((String::new(), value));
            } else if let Some(decl_prefix) = key.strip_prefix("xmlns:") {
                if decl_prefix.is_empty() {
                    return Err(self.err_here("empty prefix in namespace declaration"));
                }
                if decl_prefix == "xml" {
                    if value != XML_NS_URI {
                        return Err(
                            self.err_here("the `xml` prefix cannot be bound to another URI")
                        );
                    }
                    continue; // implicit binding, not scoped or reported
                }
                if decl_prefix == "xmlns" {
                    return Err(self.err_here("the `xmlns` prefix cannot be declared"));
                }
                self.validate_ns_declaration(decl_prefix, &value)?;
                declarations.push((decl_prefix.to_string(), value));
            } else {
                let (attr_prefix, attr_local) = self.split_qname(&key)?;
                plain.push((attr_prefix, attr_local, value));
            }
        }

        // Scope the declarations before resolving anything on this element.
        self.frame_sizes.push(declarations.len());
        for (decl_prefix, uri) in &declarations {
            let binding = if uri.is_empty() {
                None
            } else {
                Some(uri.clone())
            };
            self.ns_stack.push((decl_prefix.clone(), binding));
            self.queue.push_back(DocEvent::StartPrefixMapping {
                prefix: decl_prefix.clone(),
                uri: uri.clone(),
            });
        }

        let namespace_uri = match &prefix {
            Some(p) => Some(self.resolve_prefix(p)?),
            None => self.default_namespace(),
        };
        let name = QualifiedName {
            namespace_uri,
            local_name: local,
            prefix,
        };

        let mut attributes = Vec::with_capacity(plain.len());
        for (attr_prefix, attr_local, value) in plain {
            let namespace_uri = match &attr_prefix {
                Some(p) if p == "xml" => Some(XML_NS_URI.to_string()),
                Some(p) => Some(self.resolve_prefix(p)?),
                None => None, // unprefixed attributes never take the default namespace
            };
            attributes.push(Attribute {
                name: QualifiedName {
                    namespace_uri,
                    local_name: attr_local,
                    prefix: attr_prefix,
                },
                value,
            });
        }
        for (i, a) in attributes.iter().enumerate() {
            for b in &attributes[..i] {
                if a.name.local_name == b.name.local_name
                    && a.name.namespace_uri == b.name.namespace_uri
                {
                    return Err(self.err_here(format!(
                        "duplicate attribute `{}` after namespace resolution",
                        a.name.local_name
                    )));
                }
            }
        }

        self.root_seen = true;
        self.open.push(OpenElement {
            name: name.clone(),
            declared: declarations.into_iter().map(|(p, _)| p).collect(),
        });
        self.queue
            .push_back(DocEvent::StartElement { name, attributes });
        Ok(())
    }

    fn handle_end(&mut self) -> Result<()> {
        // Name agreement with the start tag is enforced by the tokenizer.
        let entry = self
            .open
            .pop()
            .ok_or_else(|| self.err_here("end tag with no open element"))?;
        self.queue.push_back(DocEvent::EndElement { name: entry.name });
        for prefix in entry.declared.into_iter().rev() {
            self.queue.push_back(DocEvent::EndPrefixMapping { prefix });
        }
        let frame = self.frame_sizes.pop().unwrap_or(0);
        let new_len = self.ns_stack.len() - frame;
        self.ns_stack.truncate(new_len);
        Ok(())
    }

    fn validate_ns_declaration(&self, prefix: &str, uri: &str) -> Result<()> {
        if uri == XML_NS_URI || uri == XMLNS_NS_URI {
            return Err(self.err_here(format!("reserved namespace URI `{uri}`")));
        }
        if uri.is_empty() && !prefix.is_empty() && !self.xml11 {
            // Undeclaring a prefix is an XML-Namespaces-1.1 feature; accept
            // it there, reject it for 1.0 documents.
            return Err(self.err_here(format!("prefix `{prefix}` cannot be undeclared in XML 1.0")));
        }
        Ok(())
    }

    fn split_qname(&self, qname: &str) -> Result<(Option<String>, String)> {
        let (prefix, local) = match qname.split_once(':') {
            Some((p, l)) => (Some(p), l),
            None => (None, qname),
        };
        if local.contains(':') || local.is_empty() || prefix.is_some_and(str::is_empty) {
            return Err(self.err_here(format!("invalid qualified name `{qname}`")));
        }
        for part in prefix.iter().copied().chain(std::iter::once(local)) {
            if !valid_name(part) {
                return Err(self.err_here(format!("invalid name `{qname}`")));
            }
        }
        Ok((prefix.map(str::to_string), local.to_string()))
    }

    fn resolve_prefix(&self, prefix: &str) -> Result<String> {
        if prefix == "xml" {
            return Ok(XML_NS_URI.to_string());
        }
        for (p, binding) in self.ns_stack.iter().rev() {
            if p == prefix {
                return match binding {
                    Some(uri) => Ok(uri.clone()),
                    None => Err(self.err_here(format!("prefix `{prefix}` has been undeclared"))),
                };
            }
        }
        Err(self.err_here(format!("undeclared namespace prefix `{prefix}`")))
    }

    fn default_namespace(&self) -> Option<String> {
        for (p, binding) in self.ns_stack.iter().rev() {
            if p.is_empty() {
                return binding.clone();
            }
        }
        None
    }

    fn validate_pi_target(&self, target: &str) -> Result<()> {
        if target.eq_ignore_ascii_case("xml") {
            return Err(self.err_here("processing instruction target `xml` is reserved"));
        }
        if target.contains(':') || !valid_name(target) {
            return Err(self.err_here(format!("invalid PI target `{target}`")));
        }
        Ok(())
    }

    fn check_literal_chars(&self, s: &str) -> Result<()> {
        for c in s.chars() {
            if !literal_char_ok(c) {
                return Err(self.err_here(format!("illegal character U+{:04X}", c as u32)));
            }
        }
        Ok(())
    }

    /// Expands references in element content. Skipped entities split the
    /// text into separate `Characters` pieces.
    fn expand_content(&self, text: &str) -> Result<Vec<DocEvent>> {
        let mut events = Vec::new();
        let mut current = String::new();
        let mut rest = text;
        while let Some(amp) = rest.find('&') {
            let head = &rest[..amp];
            self.check_literal_chars(head)?;
            current.push_str(head);
            let (reference, after) = self.take_reference(&rest[amp..])?;
            match self.classify_reference(reference)? {
                Expansion::Char(c) => current.push(c),
                Expansion::Entity(name) => {
                    self.expand_entity_into(&name, &mut current, 0, false)?
                }
                Expansion::Skipped(name) => {
                    if !current.is_empty() {
                        events.push(DocEvent::Characters(std::mem::take(&mut current)));
                    }
                    events.push(DocEvent::SkippedEntity(name));
                }
            }
            rest = after;
        }
        self.check_literal_chars(rest)?;
        current.push_str(rest);
        if !current.is_empty() {
            events.push(DocEvent::Characters(current));
        }
        Ok(events)
    }

    /// Attribute-value normalization: literal whitespace becomes a space,
    /// referenced whitespace survives, entity replacement text is processed
    /// recursively, and `<` (literal or via entity) is rejected.
    fn normalize_attr_value(&self, raw: &str) -> Result<String> {
        if raw.contains('<') {
            return Err(self.err_here("`<` in attribute value"));
        }
        let normalized = normalize_line_ends(raw, self.xml11);
        let mut out = String::with_capacity(normalized.len());
        let mut rest = normalized.as_str();
        while let Some(amp) = rest.find('&') {
            for c in rest[..amp].chars() {
                self.push_attr_char(c, &mut out)?;
            }
            let (reference, after) = self.take_reference(&rest[amp..])?;
            match self.classify_reference(reference)? {
                Expansion::Char(c) => out.push(c),
                Expansion::Entity(name) => self.expand_entity_into(&name, &mut out, 0, true)?,
                Expansion::Skipped(name) => {
                    return Err(self.err_here(format!(
                        "reference to unexpandable entity `{name}` in attribute value"
                    )));
                }
            }
            rest = after;
        }
        for c in rest.chars() {
            self.push_attr_char(c, &mut out)?;
        }
        Ok(out)
    }

    fn push_attr_char(&self, c: char, out: &mut String) -> Result<()> {
        if !literal_char_ok(c) {
            return Err(self.err_here(format!("illegal character U+{:04X}", c as u32)));
        }
        out.push(if c == '\t' || c == '\n' { ' ' } else { c });
        Ok(())
    }

    /// Splits `&...;` off the front of `rest` (which starts with `&`).
    fn take_reference<'b>(&self, rest: &'b str) -> Result<(&'b str, &'b str)> {
        match rest.find(';') {
            Some(end) => Ok((&rest[1..end], &rest[end + 1..])),
            None => Err(self.err_here("unterminated reference")),
        }
    }

    fn classify_reference(&self, reference: &str) -> Result<Expansion> {
        if let Some(code) = reference.strip_prefix('#') {
            let value = if let Some(hex) = code.strip_prefix('x') {
                u32::from_str_radix(hex, 16)
            } else {
                code.parse::<u32>()
            }
            .map_err(|_| self.err_here(format!("bad character reference `&{reference};`")))?;
            let c = char::from_u32(value)
                .filter(|c| charref_ok(*c, self.xml11))
                .ok_or_else(|| {
                    self.err_here(format!("character reference to illegal character &#{code};"))
                })?;
            return Ok(Expansion::Char(c));
        }
        match reference {
            "amp" => Ok(Expansion::Char('&')),
            "lt" => Ok(Expansion::Char('<')),
            "gt" => Ok(Expansion::Char('>')),
            "quot" => Ok(Expansion::Char('"')),
            "apos" => Ok(Expansion::Char('\'')),
            name => {
                if !valid_name(name) || name.contains(':') {
                    return Err(self.err_here(format!("invalid entity name `{name}`")));
                }
                match self.entities.get(name) {
                    Some(Entity::Internal(_)) => Ok(Expansion::Entity(name.to_string())),
                    Some(Entity::External) => Ok(Expansion::Skipped(name.to_string())),
                    Some(Entity::Markup) => Err(self.err_here(format!(
                        "entity `{name}` has markup in its replacement text, which this \
                         parser does not expand"
                    ))),
                    None if self.may_skip => Ok(Expansion::Skipped(name.to_string())),
                    None => Err(self.err_here(format!("undeclared entity `{name}`"))),
                }
            }
        }
    }

    fn expand_entity_into(
        &self,
        name: &str,
        out: &mut String,
        depth: usize,
        attr_rules: bool,
    ) -> Result<()> {
        if depth > 32 {
            return Err(self.err_here(format!("entity `{name}` expands recursively")));
        }
        let replacement = match self.entities.get(name) {
            Some(Entity::Internal(text)) => text.clone(),
            _ => return Err(self.err_here(format!("entity `{name}` cannot be expanded here"))),
        };
        let mut rest = replacement.as_str();
        while let Some(amp) = rest.find('&') {
            for c in rest[..amp].chars() {
                if attr_rules {
                    self.push_attr_char(c, out)?;
                } else {
                    out.push(c);
                }
            }
            let (reference, after) = self.take_reference(&rest[amp..])?;
            match self.classify_reference(reference)? {
                Expansion::Char(c) => out.push(c),
                Expansion::Entity(inner) => {
                    self.expand_entity_into(&inner, out, depth + 1, attr_rules)?
                }
                Expansion::Skipped(inner) => {
                    return Err(self.err_here(format!(
                        "entity `{name}` references unexpandable entity `{inner}`"
                    )));
                }
            }
            rest = after;
        }
        for c in rest.chars() {
            if attr_rules {
                self.push_attr_char(c, out)?;
            } else {
                out.push(c);
            }
        }
        Ok(())
    }

    /// Extracts general-entity declarations from the DOCTYPE's internal
    /// subset; everything else in the DTD is skipped.
    fn parse_doctype(&mut self, text: &str) -> Result<()> {
        let mut rest = text.trim_start();
        rest = rest.trim_start_matches(|c: char| !c.is_whitespace() && c != '[');
        let rest = rest.trim_start();
        if let Some(tail) = rest.strip_prefix("SYSTEM").or(rest.strip_prefix("PUBLIC")) {
            self.may_skip = true;
            // skip the quoted literal(s) to reach a possible internal subset
            let mut tail = tail;
            while let Some(q) = tail.find(['"', '\'']) {
                let quote = tail.as_bytes()[q] as char;
                match tail[q + 1..].find(quote) {
                    Some(e) => tail = &tail[q + 1 + e + 1..],
                    None => return Err(self.err_here("unterminated literal in DOCTYPE")),
                }
                if tail.trim_start().starts_with('[') {
                    break;
                }
            }
            if let Some(open) = tail.find('[') {
                self.parse_internal_subset(&tail[open + 1..])?;
            }
            return Ok(());
        }
        if let Some(open) = rest.find('[') {
            self.parse_internal_subset(&rest[open + 1..])?;
        }
        Ok(())
    }

    fn parse_internal_subset(&mut self, subset: &str) -> Result<()> {
        let mut rest = subset;
        loop {
            rest = rest.trim_start();
            if rest.is_empty() || rest.starts_with(']') {
                return Ok(());
            }
            if let Some(after) = rest.strip_prefix('%') {
                // parameter-entity reference in the subset
                self.may_skip = true;
                rest = after
                    .split_once(';')
                    .ok_or_else(|| self.err_here("unterminated parameter entity reference"))?
                    .1;
                continue;
            }
            if let Some(after) = rest.strip_prefix("<!--") {
                rest = match after.find("-->") {
                    Some(i) => &after[i + 3..],
                    None => return Err(self.err_here("unterminated comment in DOCTYPE")),
                };
                continue;
            }
            if let Some(after) = rest.strip_prefix("<?") {
                rest = match after.find("?>") {
                    Some(i) => &after[i + 2..],
                    None => return Err(self.err_here("unterminated PI in DOCTYPE")),
                };
                continue;
            }
            if let Some(after) = rest.strip_prefix("<!ENTITY") {
                rest = self.parse_entity_decl(after)?;
                continue;
            }
            if rest.starts_with("<!") {
                rest = skip_markup_decl(rest)
                    .ok_or_else(|| self.err_here("unterminated declaration in DOCTYPE"))?;
                continue;
            }
            return Err(self.err_here("unrecognized content in DOCTYPE internal subset"));
        }
    }

    /// Parses one `<!ENTITY ...>` declaration, returning the remainder.
    fn parse_entity_decl<'b>(&mut self, after_keyword: &'b str) -> Result<&'b str> {
        let rest = after_keyword.trim_start();
        if rest.starts_with('%') {
            self.may_skip = true;
            return skip_markup_decl_from_body(rest)
                .ok_or_else(|| self.err_here("unterminated parameter entity declaration"));
        }
        let name_end = rest
            .find(|c: char| c.is_whitespace())
            .ok_or_else(|| self.err_here("malformed entity declaration"))?;
        let name = &rest[..name_end];
        let body = rest[name_end..].trim_start();
        let entity = if body.starts_with('"') || body.starts_with('\'') {
            let quote = body.as_bytes()[0] as char;
            let end = body[1..]
                .find(quote)
                .ok_or_else(|| self.err_here("unterminated entity value"))?;
            let raw_value = &body[1..1 + end];
            if raw_value.contains('<') {
                Entity::Markup
            } else {
                Entity::Internal(self.expand_entity_value(raw_value)?)
            }
        } else if body.starts_with("SYSTEM") || body.starts_with("PUBLIC") {
            Entity::External
        } else {
            return Err(self.err_here(format!("malformed declaration of entity `{name}`")));
        };
        // first declaration binds
        self.entities.entry(name.to_string()).or_insert(entity);
        skip_markup_decl_from_body(rest)
            .ok_or_else(|| self.err_here("unterminated entity declaration"))
    }

    /// Character references in an entity value are expanded at declaration
    /// time; general-entity references are kept for expansion at use.
    fn expand_entity_value(&self, raw: &str) -> Result<String> {
        let normalized = normalize_line_ends(raw, self.xml11);
        let mut out = String::with_capacity(normalized.len());
        let mut rest = normalized.as_str();
        while let Some(amp) = rest.find('&') {
            out.push_str(&rest[..amp]);
            let (reference, after) = self.take_reference(&rest[amp..])?;
            if reference.starts_with('#') {
                match self.classify_reference(reference)? {
                    Expansion::Char(c) => out.push(c),
                    _ => unreachable!(),
                }
            } else {
                out.push('&');
                out.push_str(reference);
                out.push(';');
            }
            rest = after;
        }
        out.push_str(rest);
        Ok(out)
    }
}

enum Expansion {
    Char(char),
    Entity(String),
    Skipped(String),
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<DocEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_event().transpose()
    }
}

/// Skips `<!SOMETHING ... >` respecting quoted literals. Returns the text
/// after the closing `>`.
fn skip_markup_decl(decl: &str) -> Option<&str> {
    skip_markup_decl_from_body(decl.strip_prefix("<!")?)
}

fn skip_markup_decl_from_body(body: &str) -> Option<&str> {
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'>' => return Some(&body[i + 1..]),
            q @ (b'"' | b'\'') => {
                i += 1;
                while i < bytes.len() && bytes[i] != q {
                    i += 1;
                }
                if i == bytes.len() {
                    return None;
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

/// Translates the version-appropriate line-end forms to a single LF.
pub fn normalize_line_ends(s: &str, xml11: bool) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\r' => {
                if chars.peek() == Some(&'\n') || (xml11 && chars.peek() == Some(&'\u{0085}')) {
                    chars.next();
                }
                out.push('\n');
            }
            '\u{0085}' | '\u{2028}' if xml11 => out.push('\n'),
            other => out.push(other),
        }
    }
    out
}

/// Characters allowed to appear literally (both XML versions require the
/// C0 controls other than tab/LF/CR to be written as references, if at all).
fn literal_char_ok(c: char) -> bool {
    match c {
        '\t' | '\n' | '\r' => true,
        c if (c as u32) < 0x20 => false,
        '\u{FFFE}' | '\u{FFFF}' => false,
        _ => true,
    }
}

/// Characters reachable via a character reference.
fn charref_ok(c: char, xml11: bool) -> bool {
    if xml11 {
        c != '\0' && c != '\u{FFFE}' && c != '\u{FFFF}'
    } else {
        literal_char_ok(c)
    }
}

/// Permissive name check: rejects only what would corrupt the record
/// format or is unambiguously illegal.
fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        None => return false,
        Some(first) => {
            if first.is_ascii_digit() || matches!(first, '-' | '.') {
                return false;
            }
        }
    }
    !name.chars().any(|c| {
        is_xml_whitespace_or_control(c) || matches!(c, '<' | '>' | '&' | '"' | '\'' | '/' | '=')
    })
}

fn is_xml_whitespace_or_control(c: char) -> bool {
    (c as u32) <= 0x20 || c == '\u{0085}' || c == '\u{2028}'
}

fn detect_utf16(head: &[u8]) -> Option<bool> {
    if head.starts_with(&[0xFE, 0xFF]) || head.starts_with(&[0x00, b'<']) {
        Some(true)
    } else if head.starts_with(&[0xFF, 0xFE]) || head.starts_with(&[b'<', 0x00]) {
        Some(false)
    } else {
        None
    }
}

/// Reads the whole source and transcodes UTF-16 to UTF-8, prepending a
/// UTF-8 BOM so a declared `encoding="UTF-16"` cannot re-interpret the
/// transcoded bytes.
fn transcode_utf16(mut source: impl BufRead, big_endian: bool) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() % 2 != 0 {
        return Err(Error::Encoding(
            "UTF-16 input has an odd number of bytes".to_string(),
        ));
    }
    let units = bytes.chunks_exact(2).map(|pair| {
        let pair = [pair[0], pair[1]];
        if big_endian {
            u16::from_be_bytes(pair)
        } else {
            u16::from_le_bytes(pair)
        }
    });
    let mut text = String::with_capacity(bytes.len() / 2);
    for decoded in char::decode_utf16(units) {
        text.push(decoded.map_err(|e| Error::Encoding(format!("invalid UTF-16: {e}")))?);
    }
    let text = text.strip_prefix('\u{FEFF}').unwrap_or(&text);
    let mut out = Vec::with_capacity(text.len() + 3);
    out.extend_from_slice(&[0xEF, 0xBB, 0xBF]);
    out.extend_from_slice(text.as_bytes());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qn(local: &str) -> QualifiedName {
        QualifiedName::local(local)
    }

    #[test]
    fn minimal_document() {
        let events = events_from_xml(b"<a/>").unwrap();
        assert_eq!(
            events,
            vec![
                DocEvent::StartDocument,
                DocEvent::StartElement {
                    name: qn("a"),
                    attributes: vec![],
                },
                DocEvent::EndElement { name: qn("a") },
                DocEvent::EndDocument,
            ]
        );
    }

    #[test]
    fn attribute_and_text() {
        let events = events_from_xml(b"<p class='foo'>Hello</p>").unwrap();
        assert_eq!(
            events[1],
            DocEvent::StartElement {
                name: qn("p"),
                attributes: vec![Attribute::new(qn("class"), "foo")],
            }
        );
        assert_eq!(events[2], DocEvent::Characters("Hello".into()));
    }

    #[test]
    fn carriage_return_survives_only_as_reference() {
        let events = events_from_xml(b"<p>&amp;&#xD;x</p>").unwrap();
        assert_eq!(events[2], DocEvent::Characters("&\rx".into()));
        let events = events_from_xml(b"<p>a\r\nb\rc</p>").unwrap();
        assert_eq!(events[2], DocEvent::Characters("a\nb\nc".into()));
    }

    #[test]
    fn attribute_values_normalize_whitespace_but_not_references() {
        let events = events_from_xml(b"<e a='x\ty&#x9;z' b='p\nq&#xA;r' c='s&#xD;t'/>").unwrap();
        let DocEvent::StartElement { attributes, .. } = &events[1] else {
            panic!("expected StartElement");
        };
        assert_eq!(attributes[0].value, "x y\tz");
        assert_eq!(attributes[1].value, "p q\nr");
        assert_eq!(attributes[2].value, "s\rt");
    }

    #[test]
    fn crlf_in_attribute_becomes_one_space() {
        let events = events_from_xml(b"<e a='p\r\nq'/>").unwrap();
        let DocEvent::StartElement { attributes, .. } = &events[1] else {
            panic!();
        };
        assert_eq!(attributes[0].value, "p q");
    }

    #[test]
    fn prefix_mappings_bracket_their_element() {
        let events =
            events_from_xml(b"<d><pfx:p xmlns:pfx='urn:NS' pfx:att='bar'>x</pfx:p></d>").unwrap();
        assert_eq!(
            events[2],
            DocEvent::StartPrefixMapping {
                prefix: "pfx".into(),
                uri: "urn:NS".into(),
            }
        );
        assert_eq!(
            events[3],
            DocEvent::StartElement {
                name: QualifiedName::namespaced("urn:NS", "p").with_prefix("pfx"),
                attributes: vec![Attribute::new(
                    QualifiedName::namespaced("urn:NS", "att").with_prefix("pfx"),
                    "bar",
                )],
            }
        );
        assert_eq!(
            events[6],
            DocEvent::EndPrefixMapping { prefix: "pfx".into() }
        );
    }

    #[test]
    fn default_namespace_applies_to_elements_not_attributes() {
        let events = events_from_xml(b"<d xmlns='urn:d' a='1'/>").unwrap();
        let DocEvent::StartElement { name, attributes } = &events[2] else {
            panic!();
        };
        assert_eq!(name.namespace_uri.as_deref(), Some("urn:d"));
        assert_eq!(attributes[0].name.namespace_uri, None);
    }

    #[test]
    fn xml_prefixed_attributes_resolve_without_declaration() {
        let events = events_from_xml(b"<d xml:lang='en'/>").unwrap();
        let DocEvent::StartElement { attributes, .. } = &events[1] else {
            panic!();
        };
        assert_eq!(attributes[0].name.namespace_uri.as_deref(), Some(XML_NS_URI));
    }

    #[test]
    fn cdata_is_plain_characters() {
        let events = events_from_xml(b"<d><![CDATA[a<&b]]></d>").unwrap();
        assert_eq!(events[2], DocEvent::Characters("a<&b".into()));
    }

    #[test]
    fn comments_and_doctype_vanish() {
        let events =
            events_from_xml(b"<!DOCTYPE d [<!ELEMENT d (#PCDATA)>]><!--x--><d>t</d><!--y-->")
                .unwrap();
        assert_eq!(events.len(), 5); // start-doc, (d, text, )d, end-doc
    }

    #[test]
    fn internal_entities_expand_in_text_and_attributes() {
        let xml = b"<!DOCTYPE d [<!ENTITY who \"ch&#x75;m\"><!ENTITY greet \"hi &who;\">]>\
                    <d a='&greet;!'>&greet;</d>";
        let events = events_from_xml(xml).unwrap();
        let DocEvent::StartElement { attributes, .. } = &events[1] else {
            panic!();
        };
        assert_eq!(attributes[0].value, "hi chum!");
        assert_eq!(events[2], DocEvent::Characters("hi chum".into()));
    }

    #[test]
    fn external_entity_reference_is_skipped() {
        let xml = b"<!DOCTYPE d [<!ENTITY ext SYSTEM \"other.xml\">]><d>a&ext;b</d>";
        let events = events_from_xml(xml).unwrap();
        assert_eq!(
            &events[2..5],
            &[
                DocEvent::Characters("a".into()),
                DocEvent::SkippedEntity("ext".into()),
                DocEvent::Characters("b".into()),
            ]
        );
    }

    #[test]
    fn undeclared_entity_is_an_error_without_external_subset() {
        assert!(matches!(
            events_from_xml(b"<d>&nope;</d>"),
            Err(Error::WellFormedness { .. })
        ));
        // ... but skipped when an external subset could declare it
        let xml = b"<!DOCTYPE d SYSTEM \"dtd\"><d>&maybe;</d>";
        let events = events_from_xml(xml).unwrap();
        assert!(events.contains(&DocEvent::SkippedEntity("maybe".into())));
    }

    #[test]
    fn markup_bearing_entity_is_rejected_at_use() {
        let xml = b"<!DOCTYPE d [<!ENTITY m \"<b>x</b>\">]><d>&m;</d>";
        let err = events_from_xml(xml).unwrap_err();
        assert!(err.to_string().contains("markup"));
        // unused markup entity is harmless
        let xml = b"<!DOCTYPE d [<!ENTITY m \"<b>x</b>\">]><d>t</d>";
        assert!(events_from_xml(xml).is_ok());
    }

    #[test]
    fn well_formedness_failures() {
        for bad in [
            &b"<a><b></a></b>"[..],
            &b"<a>"[..],
            &b"text only"[..],
            &b"<a/><b/>"[..],
            &b"<a b='1' b='2'/>"[..],
            &b"<a x:y='1'/>"[..],
            &b"<x:a/>"[..],
            &b"<a>&#x0;</a>"[..],
            &b"<a>x</a>trailing"[..],
            &b"<a b='<'/>"[..],
            &b"<a>&unfinished</a>"[..],
            &b"<1bad/>"[..],
        ] {
            assert!(
                events_from_xml(bad).is_err(),
                "expected error for {:?}",
                String::from_utf8_lossy(bad)
            );
        }
    }

    #[test]
    fn duplicate_attribute_after_resolution() {
        let xml = b"<d xmlns:a='urn:x' xmlns:b='urn:x'><e a:k='1' b:k='2'/></d>";
        assert!(events_from_xml(xml).is_err());
    }

    #[test]
    fn pi_data_trimmed_and_reserved_target_rejected() {
        let events = events_from_xml(b"<d><?go  a='1'  ?></d>").unwrap();
        assert_eq!(
            events[2],
            DocEvent::ProcessingInstruction {
                target: "go".into(),
                data: "a='1'".into(),
            }
        );
        // whitespace inside quotes is data, not separators
        let events = events_from_xml(b"<d><?go?></d>").unwrap();
        assert_eq!(
            events[2],
            DocEvent::ProcessingInstruction {
                target: "go".into(),
                data: String::new(),
            }
        );
        assert!(events_from_xml(b"<d><?xMl x?></d>").is_err());
    }

    #[test]
    fn latin1_and_utf16_decode_to_the_same_events() {
        let reference = events_from_xml("<a>caf\u{e9}\u{a0}</a>".as_bytes()).unwrap();

        let mut latin1 = b"<?xml version=\"1.0\" encoding=\"ISO-8859-1\"?>".to_vec();
        latin1.extend_from_slice(b"<a>caf\xE9\xA0</a>");
        assert_eq!(events_from_xml(&latin1).unwrap(), reference);

        let text = "<?xml version=\"1.0\" encoding=\"UTF-16\"?><a>caf\u{e9}\u{a0}</a>";
        for big_endian in [false, true] {
            let mut enc: Vec<u8> = if big_endian {
                vec![0xFE, 0xFF]
            } else {
                vec![0xFF, 0xFE]
            };
            for unit in text.encode_utf16() {
                enc.extend_from_slice(&if big_endian {
                    unit.to_be_bytes()
                } else {
                    unit.to_le_bytes()
                });
            }
            assert_eq!(events_from_xml(&enc).unwrap(), reference, "be={big_endian}");
        }
    }

    #[test]
    fn undecodable_bytes_are_encoding_errors() {
        // bare 0xE9 is not valid UTF-8
        let err = events_from_xml(b"<a>caf\xE9</a>").unwrap_err();
        assert!(matches!(err, Error::Encoding(_)), "{err}");
        let err = events_from_xml(&[0xFF, 0xFE, 0x41]).unwrap_err();
        assert!(matches!(err, Error::Encoding(_)), "{err}");
    }

    #[test]
    fn xml11_line_ends_and_control_refs() {
        let events =
            events_from_xml("<?xml version=\"1.1\"?><a>x\u{85}y\u{2028}z&#x1;</a>".as_bytes())
                .unwrap();
        assert_eq!(events[2], DocEvent::Characters("x\ny\nz\u{1}".into()));
        // the same control reference is illegal in 1.0
        assert!(events_from_xml(b"<a>&#x1;</a>").is_err());
    }

    #[test]
    fn whitespace_outside_root_is_dropped_silently() {
        let events = events_from_xml(b"  \n<a>x</a>\n\t").unwrap();
        assert_eq!(events.len(), 5);
    }

    #[test]
    fn position_reported_on_error() {
        let Err(Error::WellFormedness { offset, .. }) = events_from_xml(b"<a><b></c></a>")
        else {
            panic!("expected well-formedness error");
        };
        assert!(offset > 0);
    }
}
