//! Random test documents, equivalence-preserving and -breaking mutations,
//! and the identity-transform benchmark.
//!
//! The generator produces non-pathological XML with a roughly even mix of
//! markup and text, nesting depths up to a bound (default 10), and a
//! deterministic layout for a fixed seed. Every generated document carries
//! at least one multi-attribute element, one prefixed element with a
//! namespaced attribute, some non-ASCII (Latin-1 range) text and a
//! non-signature PI — so every mutation kind is applicable to every
//! generated document.

use std::io::Write as _;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{DocEvent, EventSink};
use crate::filter;
use crate::parse::{events_from_xml, EventReader};
use crate::writer::{write_events, OutputEncoding, QuoteStyle, WriterConfig, XmlWriter};

/// Parameters for [`generate`].
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    /// Requested output size in bytes; actual size lands within a few
    /// percent above it.
    pub target_size: usize,
    pub max_depth: usize,
    /// Fraction of bytes that should be markup rather than text.
    pub markup_ratio: f64,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(target_size: usize, seed: u64) -> Self {
        CorpusSpec {
            target_size,
            max_depth: 10,
            markup_ratio: 0.5,
            seed,
        }
    }
}

const ELEMENT_NAMES: &[&str] = &[
    "item", "entry", "record", "section", "para", "note", "field", "row", "cell", "group",
    "meta", "link", "title", "body", "detail",
];
const ATTR_NAMES: &[&str] = &[
    "id", "class", "rank", "kind", "ref", "state", "lang", "score", "tag", "mode",
];
const WORDS: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india",
    "juliet", "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo",
    "sierra", "tango", "uniform", "victor", "whiskey", "xray", "yankee", "zulu",
];

struct Generator {
    rng: ChaCha8Rng,
    out: Vec<u8>,
    open: Vec<&'static str>,
    closing_cost: usize,
    markup_bytes: usize,
    text_bytes: usize,
    max_depth: usize,
    markup_ratio: f64,
}

impl Generator {
    fn push_markup(&mut self, s: &str) {
        self.out.extend_from_slice(s.as_bytes());
        self.markup_bytes += s.len();
    }

    fn push_text(&mut self, s: &str) {
        self.out.extend_from_slice(s.as_bytes());
        self.text_bytes += s.len();
    }

    fn open_element(&mut self, name: &'static str, attrs: usize) {
        let mut tag = String::from("<");
        tag.push_str(name);
        let mut chosen: Vec<&str> = Vec::new();
        for _ in 0..attrs {
            let attr = ATTR_NAMES[self.rng.gen_range(0..ATTR_NAMES.len())];
            if chosen.contains(&attr) {
                continue;
            }
            chosen.push(attr);
            let quote = if self.rng.gen_bool(0.5) { '\'' } else { '"' };
            let value = WORDS[self.rng.gen_range(0..WORDS.len())];
            tag.push(' ');
            tag.push_str(attr);
            tag.push('=');
            tag.push(quote);
            tag.push_str(value);
            if self.rng.gen_bool(0.2) {
                tag.push_str(&format!("-{}", self.rng.gen_range(0..100)));
            }
            tag.push(quote);
        }
        tag.push('>');
        self.push_markup(&tag);
        self.open.push(name);
        self.closing_cost += name.len() + 3;
    }

    fn close_element(&mut self) {
        if let Some(name) = self.open.pop() {
            self.closing_cost -= name.len() + 3;
            let tag = format!("</{name}>");
            self.push_markup(&tag);
        }
    }

    fn text_chunk(&mut self) {
        let words = self.rng.gen_range(2..8);
        let mut chunk = String::new();
        for i in 0..words {
            if i > 0 {
                chunk.push(' ');
            }
            match self.rng.gen_range(0..24) {
                0 => chunk.push_str("&amp;"),
                1 => chunk.push_str("&#x41;"),
                2 => chunk.push_str("caf\u{e9}"),
                3 => chunk.push_str("a\u{a0}b"),
                _ => chunk.push_str(WORDS[self.rng.gen_range(0..WORDS.len())]),
            }
        }
        if self.rng.gen_bool(0.3) {
            chunk.push('\n');
        }
        self.push_text(&chunk);
    }
}

/// Generates a well-formed random document, byte-identical for a fixed
/// spec.
pub fn generate(spec: &CorpusSpec) -> Vec<u8> {
    let mut g = Generator {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        out: Vec::with_capacity(spec.target_size + 256),
        open: Vec::new(),
        closing_cost: 0,
        markup_bytes: 0,
        text_bytes: 0,
        max_depth: spec.max_depth.max(2),
        markup_ratio: spec.markup_ratio.clamp(0.1, 0.9),
    };

    g.open_element("doc", 0);
    // guaranteed features, so every mutation kind has something to bite on
    g.push_markup("<meta id=\"m1\" class='alpha' rank=\"2\">");
    g.push_text("seed");
    g.push_markup("</meta>\n  ");
    g.push_markup("<k:item xmlns:k=\"urn:corpus:k\" k:ref='r1'>");
    g.push_text("caf\u{e9}\u{a0}corner");
    g.push_markup("</k:item>");
    g.push_markup("<?track state='on'?>");

    while g.out.len() + g.closing_cost < spec.target_size {
        let depth = g.open.len();
        let markup_share = g.markup_bytes as f64 / (g.markup_bytes + g.text_bytes).max(1) as f64;
        let want_markup = markup_share < g.markup_ratio;
        match g.rng.gen_range(0..10) {
            0..=3 if want_markup && depth < g.max_depth => {
                let name = ELEMENT_NAMES[g.rng.gen_range(0..ELEMENT_NAMES.len())];
                let attrs = g.rng.gen_range(0..4);
                g.open_element(name, attrs);
            }
            0..=3 if want_markup && depth > 1 => {
                g.close_element();
                if g.rng.gen_bool(0.4) {
                    g.push_text("\n");
                }
            }
            4..=7 if !want_markup => g.text_chunk(),
            8 if want_markup && depth > 1 => {
                g.close_element();
            }
            9 if want_markup => {
                let target = WORDS[g.rng.gen_range(0..WORDS.len())];
                let pi = format!("<?{target} v='{}'?>", g.rng.gen_range(0..100));
                g.push_markup(&pi);
            }
            _ => {
                if want_markup && depth < g.max_depth {
                    let name = ELEMENT_NAMES[g.rng.gen_range(0..ELEMENT_NAMES.len())];
                    g.open_element(name, 1);
                } else {
                    g.text_chunk();
                }
            }
        }
    }
    while !g.open.is_empty() {
        g.close_element();
    }
    g.out.push(b'\n');
    g.out
}

/// One document rewrite. The first seven kinds leave the normalized blob
/// byte-identical; the last four change it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    QuoteSwap,
    AttrPermute,
    ReEncode,
    CharRefSubstitute,
    InterElementWhitespace,
    SignaturePiChurn,
    PrefixRename,
    TextEdit,
    AttvalueEdit,
    NameEdit,
    NsUriEdit,
}

impl Mutation {
    pub const EQUIVALENCE_PRESERVING: [Mutation; 7] = [
        Mutation::QuoteSwap,
        Mutation::AttrPermute,
        Mutation::ReEncode,
        Mutation::CharRefSubstitute,
        Mutation::InterElementWhitespace,
        Mutation::SignaturePiChurn,
        Mutation::PrefixRename,
    ];
    pub const EQUIVALENCE_BREAKING: [Mutation; 4] = [
        Mutation::TextEdit,
        Mutation::AttvalueEdit,
        Mutation::NameEdit,
        Mutation::NsUriEdit,
    ];

    pub fn preserves_equivalence(&self) -> bool {
        !Self::EQUIVALENCE_BREAKING.contains(self)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mutation::QuoteSwap => "quote-swap",
            Mutation::AttrPermute => "attr-permute",
            Mutation::ReEncode => "re-encode",
            Mutation::CharRefSubstitute => "char-ref-substitute",
            Mutation::InterElementWhitespace => "interelement-whitespace",
            Mutation::SignaturePiChurn => "signature-pi-churn",
            Mutation::PrefixRename => "prefix-rename",
            Mutation::TextEdit => "text-edit",
            Mutation::AttvalueEdit => "attvalue-edit",
            Mutation::NameEdit => "name-edit",
            Mutation::NsUriEdit => "nsuri-edit",
        }
    }
}

fn has_attributes(events: &[DocEvent]) -> bool {
    events.iter().any(|e| {
        matches!(e, DocEvent::StartElement { attributes, .. } if !attributes.is_empty())
            || matches!(e, DocEvent::StartPrefixMapping { .. })
    })
}

/// Applies one mutation, returning well-formed XML bytes.
pub fn mutate(xml: &[u8], mutation: Mutation) -> Result<Vec<u8>> {
    let mut events = events_from_xml(xml)?;
    let default = WriterConfig::default();
    match mutation {
        Mutation::QuoteSwap => {
            if !has_attributes(&events) {
                return Err(Error::NotApplicable("document has no attributes"));
            }
            write_events(
                &events,
                WriterConfig {
                    quote: QuoteStyle::Single,
                    ..default
                },
            )
        }
        Mutation::AttrPermute => {
            let mut any = false;
            for event in &mut events {
                if let DocEvent::StartElement { attributes, .. } = event {
                    if attributes.len() >= 2 {
                        attributes.reverse();
                        any = true;
                    }
                }
            }
            if !any {
                return Err(Error::NotApplicable(
                    "no element carries two or more attributes",
                ));
            }
            write_events(&events, default)
        }
        Mutation::ReEncode => write_events(
            &events,
            WriterConfig {
                encoding: OutputEncoding::Utf16Le,
                ..default
            },
        ),
        Mutation::CharRefSubstitute => {
            let eligible = |c: char| matches!(c, 'e' | 'o' | 't') || !c.is_ascii();
            let any = events.iter().any(|e| match e {
                DocEvent::Characters(t) => t.chars().any(eligible),
                DocEvent::StartElement { attributes, .. } => attributes
                    .iter()
                    .any(|a| a.value.chars().any(eligible)),
                _ => false,
            });
            if !any {
                return Err(Error::NotApplicable(
                    "no content character is eligible for a reference",
                ));
            }
            write_events(
                &events,
                WriterConfig {
                    aggressive_charrefs: true,
                    ..default
                },
            )
        }
        Mutation::InterElementWhitespace => {
            let mut rewritten: Vec<DocEvent> = Vec::with_capacity(events.len() * 2);
            let mut prev_concrete_no_text = false; // last markup event with no text since
            for event in events {
                match &event {
                    DocEvent::StartElement { .. }
                    | DocEvent::EndElement { .. }
                    | DocEvent::ProcessingInstruction { .. } => {
                        if prev_concrete_no_text {
                            rewritten.push(DocEvent::Characters("\n ".into()));
                        }
                        prev_concrete_no_text = true;
                    }
                    DocEvent::Characters(t) if t.chars().all(char::is_whitespace) => {
                        // churn existing whitespace-only nodes too
                        rewritten.push(DocEvent::Characters(format!("\t{t} ")));
                        prev_concrete_no_text = false;
                        continue;
                    }
                    DocEvent::Characters(_) | DocEvent::SkippedEntity(_) => {
                        prev_concrete_no_text = false;
                    }
                    _ => {}
                }
                rewritten.push(event);
            }
            write_events(&rewritten, default)
        }
        Mutation::SignaturePiChurn => {
            events.retain(|e| {
                !matches!(e, DocEvent::ProcessingInstruction { target, .. } if target == "signature")
            });
            let root = events
                .iter()
                .position(|e| matches!(e, DocEvent::StartElement { .. }))
                .ok_or(Error::NotApplicable("document has no root element"))?;
            events.insert(
                root + 1,
                DocEvent::ProcessingInstruction {
                    target: "signature".into(),
                    data: "algorithm='sha1' content='c0ffee'".into(),
                },
            );
            write_events(&events, default)
        }
        Mutation::PrefixRename => {
            let mut prefixes: Vec<String> = Vec::new();
            for event in &events {
                if let DocEvent::StartPrefixMapping { prefix, .. } = event {
                    if !prefix.is_empty() && !prefixes.contains(prefix) {
                        prefixes.push(prefix.clone());
                    }
                }
            }
            if prefixes.is_empty() {
                return Err(Error::NotApplicable("document declares no prefixes"));
            }
            let renamed = |p: &str| {
                let mut candidate = format!("{p}x");
                while prefixes.iter().any(|q| *q == candidate) {
                    candidate.push('x');
                }
                candidate
            };
            let rename_q = |name: &mut crate::QualifiedName| {
                if let Some(p) = &name.prefix {
                    if prefixes.iter().any(|q| q == p) {
                        name.prefix = Some(renamed(p));
                    }
                }
            };
            for event in &mut events {
                match event {
                    DocEvent::StartPrefixMapping { prefix, .. }
                    | DocEvent::EndPrefixMapping { prefix } => {
                        if prefixes.iter().any(|q| q == prefix) {
                            *prefix = renamed(prefix);
                        }
                    }
                    DocEvent::StartElement { name, attributes } => {
                        rename_q(name);
                        for attr in attributes {
                            rename_q(&mut attr.name);
                        }
                    }
                    DocEvent::EndElement { name } => rename_q(name),
                    _ => {}
                }
            }
            write_events(&events, default)
        }
        Mutation::TextEdit => {
            let mut done = false;
            for event in &mut events {
                if let DocEvent::Characters(text) = event {
                    if let Some(pos) = text.find(|c: char| c.is_ascii_alphabetic()) {
                        let old = text.as_bytes()[pos] as char;
                        let new = match old {
                            'z' => 'a',
                            'Z' => 'A',
                            c => (c as u8 + 1) as char,
                        };
                        text.replace_range(pos..pos + 1, &new.to_string());
                        done = true;
                        break;
                    }
                }
            }
            if !done {
                return Err(Error::NotApplicable("document has no letter content"));
            }
            write_events(&events, default)
        }
        Mutation::AttvalueEdit => {
            let mut done = false;
            for event in &mut events {
                if let DocEvent::StartElement { attributes, .. } = event {
                    if let Some(attr) = attributes.first_mut() {
                        attr.value.push('x');
                        done = true;
                        break;
                    }
                }
            }
            if !done {
                return Err(Error::NotApplicable("document has no attributes"));
            }
            write_events(&events, default)
        }
        Mutation::NameEdit => {
            let Some(start) = events
                .iter()
                .position(|e| matches!(e, DocEvent::StartElement { .. }))
            else {
                return Err(Error::NotApplicable("document has no elements"));
            };
            let mut depth = 0usize;
            let mut end = start;
            for (i, event) in events.iter().enumerate().skip(start) {
                match event {
                    DocEvent::StartElement { .. } => depth += 1,
                    DocEvent::EndElement { .. } => {
                        depth -= 1;
                        if depth == 0 {
                            end = i;
                            break;
                        }
                    }
                    _ => {}
                }
            }
            for i in [start, end] {
                match &mut events[i] {
                    DocEvent::StartElement { name, .. } | DocEvent::EndElement { name } => {
                        name.local_name.push('x');
                    }
                    _ => unreachable!(),
                }
            }
            write_events(&events, default)
        }
        Mutation::NsUriEdit => {
            // find a declaration whose URI some element or attribute uses;
            // the writer serializes prefixes, so editing the declaration's
            // URI re-resolves every name under it
            let used = |uri: &str, events: &[DocEvent]| {
                events.iter().any(|e| match e {
                    DocEvent::StartElement { name, attributes } => {
                        name.namespace_uri.as_deref() == Some(uri)
                            || attributes
                                .iter()
                                .any(|a| a.name.namespace_uri.as_deref() == Some(uri))
                    }
                    _ => false,
                })
            };
            let target = events.iter().position(|e| {
                matches!(e, DocEvent::StartPrefixMapping { uri, .. }
                    if !uri.is_empty() && used(uri, &events))
            });
            let Some(index) = target else {
                return Err(Error::NotApplicable(
                    "document uses no declared namespace",
                ));
            };
            if let DocEvent::StartPrefixMapping { uri, .. } = &mut events[index] {
                uri.push('x');
            }
            write_events(&events, default)
        }
    }
}

/// Wall-clock measurements for one input size.
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub input_size: usize,
    pub plain_seconds: f64,
    pub filtered_seconds: f64,
    pub repetitions: usize,
}

impl BenchResult {
    /// Filtered time over plain time.
    pub fn ratio(&self) -> f64 {
        self.filtered_seconds / self.plain_seconds
    }
}

fn identity_plain(doc: &[u8]) -> Result<()> {
    let mut writer = XmlWriter::new(std::io::sink());
    for event in EventReader::new(doc)? {
        writer.handle_event(&event?)?;
    }
    Ok(())
}

fn identity_filtered(doc: &[u8]) -> Result<()> {
    let mut session = filter::wrap(XmlWriter::new(std::io::sink()), None);
    for event in EventReader::new(doc)? {
        session.handle_event(&event?)?;
    }
    // query the digest the way a real caller would
    session.document_digest(crate::DigestAlgorithm::Sha1)?;
    Ok(())
}

/// Times the identity transform (parse, then immediately serialize) with
/// the bare pipeline and with the normalizing, digesting filter wrapped
/// around it. Times are averaged over at least three runs after a warmup.
pub fn bench_identity(sizes: &[usize], repetitions: usize, seed: u64) -> Result<Vec<BenchResult>> {
    let repetitions = repetitions.max(3);
    let mut results = Vec::with_capacity(sizes.len());
    for (i, &size) in sizes.iter().enumerate() {
        let doc = generate(&CorpusSpec::new(size, seed.wrapping_add(i as u64)));
        identity_plain(&doc)?;
        identity_filtered(&doc)?;
        let mut plain = 0.0;
        let mut filtered = 0.0;
        for _ in 0..repetitions {
            let t = Instant::now();
            identity_plain(&doc)?;
            plain += t.elapsed().as_secs_f64();
            let t = Instant::now();
            identity_filtered(&doc)?;
            filtered += t.elapsed().as_secs_f64();
        }
        results.push(BenchResult {
            input_size: doc.len(),
            plain_seconds: plain / repetitions as f64,
            filtered_seconds: filtered / repetitions as f64,
            repetitions,
        });
    }
    Ok(results)
}

/// Plain-text table of benchmark results: size, plain time, filtered
/// time, ratio.
pub fn render_bench_table(results: &[BenchResult]) -> String {
    let mut out = Vec::new();
    writeln!(
        out,
        "{:>10} {:>12} {:>14} {:>7}",
        "size/MB", "time(plain)/s", "time(filtered)/s", "ratio"
    )
    .unwrap();
    for r in results {
        writeln!(
            out,
            "{:>10.2} {:>12.3} {:>14.3} {:>6.0}%",
            r.input_size as f64 / (1024.0 * 1024.0),
            r.plain_seconds,
            r.filtered_seconds,
            r.ratio() * 100.0
        )
        .unwrap();
    }
    String::from_utf8(out).unwrap()
}

/// Coefficient of determination of the least-squares line through the
/// points.
pub fn linear_fit_r2(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy * sxy) / (sxx * syy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize_xml;

    #[test]
    fn generation_is_deterministic() {
        let spec = CorpusSpec::new(4096, 7);
        assert_eq!(generate(&spec), generate(&spec));
        let other = CorpusSpec::new(4096, 8);
        assert_ne!(generate(&spec), generate(&other));
    }

    #[test]
    fn generated_size_is_close_to_target() {
        for size in [1024, 10_000, 100_000] {
            let doc = generate(&CorpusSpec::new(size, 42));
            assert!(doc.len() >= size, "undershoot: {} < {size}", doc.len());
            assert!(
                doc.len() <= size + size / 10,
                "overshoot: {} > {size} +10%",
                doc.len()
            );
        }
    }

    #[test]
    fn generated_documents_parse_and_respect_depth() {
        for seed in 0..5 {
            let doc = generate(&CorpusSpec::new(8192, seed));
            let events = events_from_xml(&doc).expect("generated document must be well-formed");
            let mut depth = 0usize;
            let mut max_depth = 0usize;
            for event in &events {
                match event {
                    DocEvent::StartElement { .. } => {
                        depth += 1;
                        max_depth = max_depth.max(depth);
                    }
                    DocEvent::EndElement { .. } => depth -= 1,
                    _ => {}
                }
            }
            assert!(max_depth <= 10, "depth {max_depth} exceeds bound");
        }
    }

    #[test]
    fn preserving_mutations_keep_the_blob() {
        let doc = generate(&CorpusSpec::new(4096, 99));
        let blob = normalize_xml(&doc).unwrap();
        for mutation in Mutation::EQUIVALENCE_PRESERVING {
            let mutated = mutate(&doc, mutation).unwrap();
            assert_ne!(mutated, doc, "{} produced identical bytes", mutation.name());
            let mutated_blob = normalize_xml(&mutated).unwrap();
            assert_eq!(
                mutated_blob.as_bytes(),
                blob.as_bytes(),
                "{} changed the blob",
                mutation.name()
            );
        }
    }

    #[test]
    fn breaking_mutations_change_the_blob() {
        let doc = generate(&CorpusSpec::new(4096, 99));
        let blob = normalize_xml(&doc).unwrap();
        for mutation in Mutation::EQUIVALENCE_BREAKING {
            let mutated = mutate(&doc, mutation).unwrap();
            let mutated_blob = normalize_xml(&mutated).unwrap();
            assert_ne!(
                mutated_blob.as_bytes(),
                blob.as_bytes(),
                "{} left the blob unchanged",
                mutation.name()
            );
        }
    }

    #[test]
    fn not_applicable_is_reported() {
        assert!(matches!(
            mutate(b"<a/>", Mutation::QuoteSwap),
            Err(Error::NotApplicable(_))
        ));
        assert!(matches!(
            mutate(b"<a/>", Mutation::PrefixRename),
            Err(Error::NotApplicable(_))
        ));
        assert!(matches!(
            mutate(b"<a/>", Mutation::TextEdit),
            Err(Error::NotApplicable(_))
        ));
        assert!(matches!(
            mutate(b"<a b='1'/>", Mutation::AttrPermute),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn bench_produces_monotone_sizes() {
        let results = bench_identity(&[2048, 8192], 3, 5).unwrap();
        assert_eq!(results.len(), 2);
        assert!(results[0].input_size < results[1].input_size);
        assert!(results.iter().all(|r| r.plain_seconds > 0.0));
        let table = render_bench_table(&results);
        assert!(table.contains("ratio"));
    }

    #[test]
    fn r2_of_a_line_is_one() {
        let pts: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        assert!((linear_fit_r2(&pts) - 1.0).abs() < 1e-12);
        assert_eq!(linear_fit_r2(&[(1.0, 1.0)]), 0.0);
    }
}
