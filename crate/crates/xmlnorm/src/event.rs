//! The decoded document-event stream.
//!
//! Events are the application's view of a document: all entities and
//! character references are expanded, attribute values and line ends are
//! normalized by the parser, and comments and DOCTYPE internals are gone.
//! Everything downstream (records, normalization, signing) consumes this
//! stream and nothing else.

/// Namespace URI bound to the `xml:` prefix.
pub const XML_NS_URI: &str = "http://www.w3.org/XML/1998/namespace";
/// Namespace URI bound to the `xmlns:` prefix.
pub const XMLNS_NS_URI: &str = "http://www.w3.org/2000/xmlns/";

/// A namespace-qualified name.
///
/// Namespace URIs are compared by exact character equality, never
/// URI-normalized. The prefix is informational only: two names are the
/// same name whenever URI and local part match.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QualifiedName {
    pub namespace_uri: Option<String>,
    pub local_name: String,
    /// The prefix as written in the source, if any. Carried for faithful
    /// re-serialization; ignored by normalization.
    pub prefix: Option<String>,
}

impl QualifiedName {
    /// A name with no namespace.
    pub fn local(local_name: impl Into<String>) -> Self {
        QualifiedName {
            namespace_uri: None,
            local_name: local_name.into(),
            prefix: None,
        }
    }

    /// A namespaced name without a recorded prefix.
    pub fn namespaced(uri: impl Into<String>, local_name: impl Into<String>) -> Self {
        QualifiedName {
            namespace_uri: Some(uri.into()),
            local_name: local_name.into(),
            prefix: None,
        }
    }

    /// Same name, with the source prefix recorded.
    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefix = Some(prefix.into());
        self
    }

    /// `prefix:local` as written in the source.
    pub fn as_qname(&self) -> String {
        match &self.prefix {
            Some(p) => format!("{p}:{}", self.local_name),
            None => self.local_name.clone(),
        }
    }
}

/// One attribute, with its value already normalized by the parser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: QualifiedName,
    pub value: String,
}

impl Attribute {
    pub fn new(name: QualifiedName, value: impl Into<String>) -> Self {
        Attribute {
            name,
            value: value.into(),
        }
    }
}

/// A decoded parse event.
#[derive(Debug, Clone, PartialEq)]
pub enum DocEvent {
    StartDocument,
    EndDocument,
    /// Attributes are in document order and never include namespace
    /// declarations (those arrive as `StartPrefixMapping`).
    StartElement {
        name: QualifiedName,
        attributes: Vec<Attribute>,
    },
    EndElement {
        name: QualifiedName,
    },
    /// Character content with all references expanded. CDATA sections
    /// arrive as ordinary `Characters` and are indistinguishable here.
    Characters(String),
    /// Whitespace a validating parser would report as ignorable. The
    /// default non-validating pipeline never produces this.
    IgnorableWhitespace(String),
    /// Data has the whitespace after the target and before `?>` removed.
    ProcessingInstruction {
        target: String,
        data: String,
    },
    /// Declared prefix (empty string for the default namespace) mapped to
    /// a URI, scoped to the declaring element.
    StartPrefixMapping {
        prefix: String,
        uri: String,
    },
    EndPrefixMapping {
        prefix: String,
    },
    /// An entity the parser did not expand (external, or undeclarable
    /// without reading an external subset).
    SkippedEntity(String),
}

/// A consumer of document events: serializers, filters, collectors.
pub trait EventSink {
    fn handle_event(&mut self, event: &DocEvent) -> crate::Result<()>;
}

/// Collects events into a vector; handy as a filter downstream in tests.
#[derive(Debug, Default)]
pub struct EventCollector {
    pub events: Vec<DocEvent>,
}

impl EventSink for EventCollector {
    fn handle_event(&mut self, event: &DocEvent) -> crate::Result<()> {
        self.events.push(event.clone());
        Ok(())
    }
}
