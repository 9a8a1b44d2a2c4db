//! Pass-through event filter that normalizes, digests and verifies as a
//! side effect of parsing.
//!
//! A [`FilterSession`] forwards every event unchanged to a downstream
//! consumer, so it can be dropped into an existing pipeline in place of
//! the bare parser. While events flow, it feeds the normalizer and digest
//! engines incrementally; after `EndDocument` it can be queried for the
//! whole-document digest and for a verification report identical to the
//! batch verifier's.
//!
//! Memory use is bounded by the largest attribute block plus fixed digest
//! state, with two exceptions: a `following::*[1]` capture buffers that
//! subtree's digest state (or its blob bytes for pgp), and attaching a
//! signer keeps the whole-document blob bytes for external verification
//! (a whole-document pgp PI may appear at the very end of the input).

use std::io::Write;

use crate::digest::{DigestAlgorithm, DigestContext};
use crate::error::{Error, Result};
use crate::esis::{records_for_event, EsisRecord};
use crate::event::{DocEvent, EventSink};
use crate::normalize::Normalizer;
use crate::signature::{
    malformed_check, parse_signature_pi, pre_check, SignatureCheck, SignaturePi, SignatureStatus,
    SignatureTarget, Signer, VerificationReport,
};

/// Digest fan-out for the whole-document blob; spools the bytes only when
/// a signer may need them.
struct WholeSink {
    contexts: Vec<DigestContext>,
    spool: Option<Vec<u8>>,
}

impl WholeSink {
    fn new(spool: bool) -> Self {
        WholeSink {
            contexts: DigestAlgorithm::ALL
                .iter()
                .map(|a| DigestContext::new(*a))
                .collect(),
            spool: spool.then(Vec::new),
        }
    }
}

impl Write for WholeSink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        for ctx in &mut self.contexts {
            ctx.update(buf);
        }
        if let Some(spool) = &mut self.spool {
            spool.extend_from_slice(buf);
        }
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

enum CaptureSink {
    Digest(DigestContext),
    Bytes(Vec<u8>),
}

impl Write for CaptureSink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        match self {
            CaptureSink::Digest(ctx) => ctx.update(buf),
            CaptureSink::Bytes(bytes) => bytes.extend_from_slice(buf),
        }
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// An in-flight `following::*[1]` subtree normalization.
struct Capture {
    entry_index: usize,
    pi: SignaturePi,
    normalizer: Normalizer<CaptureSink>,
}

/// A whole-document signature awaiting the end of the document.
struct PendingWhole {
    entry_index: usize,
    pi: SignaturePi,
}

/// A `following::*[1]` signature awaiting its element.
struct PendingFollowing {
    entry_index: usize,
    pi: SignaturePi,
}

/// The pass-through filter. See the module docs.
pub struct FilterSession<'s, S: EventSink> {
    downstream: S,
    signer: Option<&'s dyn Signer>,
    whole: Option<Normalizer<WholeSink>>,
    whole_pending: Vec<PendingWhole>,
    following_pending: Vec<PendingFollowing>,
    captures: Vec<Capture>,
    entries: Vec<Option<SignatureCheck>>,
    digests: Option<Vec<(DigestAlgorithm, String)>>,
    report: Option<VerificationReport>,
    record_buf: Vec<EsisRecord>,
}

/// Wraps a downstream event consumer in a normalizing, verifying filter.
pub fn wrap<S: EventSink>(downstream: S, signer: Option<&dyn Signer>) -> FilterSession<'_, S> {
    FilterSession {
        downstream,
        signer,
        whole: Some(Normalizer::new(WholeSink::new(signer.is_some()))),
        whole_pending: Vec::new(),
        following_pending: Vec::new(),
        captures: Vec::new(),
        entries: Vec::new(),
        digests: None,
        report: None,
        record_buf: Vec::new(),
    }
}

impl<'s, S: EventSink> FilterSession<'s, S> {
    /// The wrapped downstream consumer.
    pub fn downstream(&self) -> &S {
        &self.downstream
    }

    pub fn into_downstream(self) -> S {
        self.downstream
    }

    /// Runs a complete parsed source through the filter.
    pub fn run<I>(&mut self, events: I) -> Result<()>
    where
        I: IntoIterator<Item = Result<DocEvent>>,
    {
        for event in events {
            self.handle_event(&event?)?;
        }
        Ok(())
    }

    /// Per-signature outcomes; available once `EndDocument` has passed
    /// through, immutable afterwards.
    pub fn report(&self) -> Result<&VerificationReport> {
        self.report.as_ref().ok_or(Error::NotFinished)
    }

    /// Whole-document blob digest, for callers that want a digest without
    /// any signature PIs in the input.
    pub fn document_digest(&self, algorithm: DigestAlgorithm) -> Result<String> {
        let digests = self.digests.as_ref().ok_or(Error::NotFinished)?;
        Ok(digests
            .iter()
            .find(|(a, _)| *a == algorithm)
            .expect("all registry algorithms are computed")
            .1
            .clone())
    }

    fn handle_signature_pi(&mut self, data: &str) {
        let entry_index = self.entries.len();
        self.entries.push(None);
        let pi = match parse_signature_pi(data) {
            Ok(pi) => pi,
            Err(e) => {
                self.entries[entry_index] = Some(malformed_check(&e));
                return;
            }
        };
        // Cases that need no blob resolve immediately; the rest register
        // for resolution when their bytes are complete.
        if let Some(early) = pre_check(&pi, self.signer.is_some()) {
            self.entries[entry_index] = Some(early);
            return;
        }
        match pi.target {
            SignatureTarget::WholeDocument => {
                self.whole_pending.push(PendingWhole { entry_index, pi });
            }
            SignatureTarget::FollowingElement => {
                self.following_pending
                    .push(PendingFollowing { entry_index, pi });
            }
        }
    }

    fn open_pending_captures(&mut self) {
        for PendingFollowing { entry_index, pi } in self.following_pending.drain(..) {
            let sink = if pi.algorithm == "pgp" {
                CaptureSink::Bytes(Vec::new())
            } else {
                let algorithm = pi
                    .algorithm
                    .parse::<DigestAlgorithm>()
                    .expect("unsupported algorithms were resolved early");
                CaptureSink::Digest(DigestContext::new(algorithm))
            };
            self.captures.push(Capture {
                entry_index,
                pi,
                normalizer: Normalizer::new(sink),
            });
        }
    }

    fn close_finished_captures(&mut self) -> Result<()> {
        while let Some(last) = self.captures.last() {
            if last.normalizer.depth() != 0 {
                break;
            }
            let capture = self.captures.pop().expect("just observed");
            let sink = capture.normalizer.finish()?;
            let check = match sink {
                CaptureSink::Digest(ctx) => {
                    let computed = ctx.finish();
                    let ok = computed.eq_ignore_ascii_case(capture.pi.content.trim());
                    SignatureCheck {
                        target: Some(capture.pi.target),
                        algorithm: Some(capture.pi.algorithm.clone()),
                        status: if ok {
                            SignatureStatus::Verified
                        } else {
                            SignatureStatus::Failed
                        },
                        diagnostic: if ok {
                            String::new()
                        } else {
                            format!("digest mismatch: computed {computed}")
                        },
                    }
                }
                CaptureSink::Bytes(bytes) => {
                    let signer = self.signer.expect("pgp captures require a signer");
                    match signer.verify(&bytes, &capture.pi.content) {
                        Ok((true, diag)) => SignatureCheck {
                            target: Some(capture.pi.target),
                            algorithm: Some(capture.pi.algorithm.clone()),
                            status: SignatureStatus::Verified,
                            diagnostic: diag,
                        },
                        Ok((false, diag)) => SignatureCheck {
                            target: Some(capture.pi.target),
                            algorithm: Some(capture.pi.algorithm.clone()),
                            status: SignatureStatus::Failed,
                            diagnostic: diag,
                        },
                        Err(e) => SignatureCheck {
                            target: Some(capture.pi.target),
                            algorithm: Some(capture.pi.algorithm.clone()),
                            status: SignatureStatus::Failed,
                            diagnostic: e.to_string(),
                        },
                    }
                }
            };
            self.entries[capture.entry_index] = Some(check);
        }
        Ok(())
    }

    fn finish_document(&mut self) -> Result<()> {
        let whole = self
            .whole
            .take()
            .ok_or_else(|| Error::Nesting("event after end of document".to_string()))?;
        let sink = whole.finish()?;
        let digests: Vec<(DigestAlgorithm, String)> = sink
            .contexts
            .into_iter()
            .map(|ctx| (ctx.algorithm(), ctx.finish()))
            .collect();
        for PendingWhole { entry_index, pi } in self.whole_pending.drain(..) {
            let check = if pi.algorithm == "pgp" {
                let signer = self.signer.expect("pgp entries without a signer resolve early");
                let blob = sink
                    .spool
                    .as_deref()
                    .expect("spool is kept whenever a signer is attached");
                match signer.verify(blob, &pi.content) {
                    Ok((true, diag)) => SignatureCheck {
                        target: Some(pi.target),
                        algorithm: Some(pi.algorithm.clone()),
                        status: SignatureStatus::Verified,
                        diagnostic: diag,
                    },
                    Ok((false, diag)) => SignatureCheck {
                        target: Some(pi.target),
                        algorithm: Some(pi.algorithm.clone()),
                        status: SignatureStatus::Failed,
                        diagnostic: diag,
                    },
                    Err(e) => SignatureCheck {
                        target: Some(pi.target),
                        algorithm: Some(pi.algorithm.clone()),
                        status: SignatureStatus::Failed,
                        diagnostic: e.to_string(),
                    },
                }
            } else {
                let algorithm = pi
                    .algorithm
                    .parse::<DigestAlgorithm>()
                    .expect("unsupported algorithms were resolved early");
                let computed = &digests
                    .iter()
                    .find(|(a, _)| *a == algorithm)
                    .expect("all registry algorithms are computed")
                    .1;
                let ok = computed.eq_ignore_ascii_case(pi.content.trim());
                SignatureCheck {
                    target: Some(pi.target),
                    algorithm: Some(pi.algorithm.clone()),
                    status: if ok {
                        SignatureStatus::Verified
                    } else {
                        SignatureStatus::Failed
                    },
                    diagnostic: if ok {
                        String::new()
                    } else {
                        format!("digest mismatch: computed {computed}")
                    },
                }
            };
            self.entries[entry_index] = Some(check);
        }
        // a following::*[1] PI with no element after it
        for PendingFollowing { entry_index, pi } in self.following_pending.drain(..) {
            self.entries[entry_index] = Some(SignatureCheck {
                target: Some(pi.target),
                algorithm: Some(pi.algorithm),
                status: SignatureStatus::Malformed,
                diagnostic: Error::NoTargetElement.to_string(),
            });
        }
        self.digests = Some(digests);
        self.report = Some(VerificationReport {
            entries: self
                .entries
                .drain(..)
                .map(|e| e.expect("every entry resolves by end of document"))
                .collect(),
        });
        Ok(())
    }
}

impl<'s, S: EventSink> EventSink for FilterSession<'s, S> {
    fn handle_event(&mut self, event: &DocEvent) -> Result<()> {
        // transparency first: downstream sees exactly the incoming event
        self.downstream.handle_event(event)?;
        if self.report.is_some() {
            return Err(Error::Nesting("event after end of document".to_string()));
        }

        if let DocEvent::ProcessingInstruction { target, data } = event {
            if target == "signature" {
                self.handle_signature_pi(data);
            }
        }
        if matches!(event, DocEvent::StartElement { .. }) && !self.following_pending.is_empty() {
            self.open_pending_captures();
        }

        self.record_buf.clear();
        records_for_event(event, &mut self.record_buf);
        let whole = self
            .whole
            .as_mut()
            .ok_or_else(|| Error::Nesting("event after end of document".to_string()))?;
        for record in &self.record_buf {
            whole.push(record)?;
            for capture in &mut self.captures {
                capture.normalizer.push(record)?;
            }
        }

        if matches!(event, DocEvent::EndElement { .. }) && !self.captures.is_empty() {
            self.close_finished_captures()?;
        }
        if matches!(event, DocEvent::EndDocument) {
            self.finish_document()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::digest;
    use crate::event::EventCollector;
    use crate::normalize_xml;
    use crate::parse::events_from_xml;
    use crate::signature::{sign_document, verify_document, PiPlacement};

    fn run_filter(xml: &[u8]) -> (Vec<DocEvent>, VerificationReport, String) {
        let mut session = wrap(EventCollector::default(), None);
        for event in crate::EventReader::new(xml).unwrap() {
            session.handle_event(&event.unwrap()).unwrap();
        }
        let report = session.report().unwrap().clone();
        let sha1 = session.document_digest(DigestAlgorithm::Sha1).unwrap();
        (session.into_downstream().events, report, sha1)
    }

    #[test]
    fn transparency_and_empty_report() {
        let xml = b"<d><e a='1'>x</e></d>";
        let direct = events_from_xml(xml).unwrap();
        let (forwarded, report, sha1) = run_filter(xml);
        assert_eq!(forwarded, direct);
        assert!(report.entries.is_empty());
        assert_eq!(sha1, digest(normalize_xml(xml).unwrap(), DigestAlgorithm::Sha1));
    }

    #[test]
    fn report_before_end_is_an_error() {
        let mut session = wrap(EventCollector::default(), None);
        session.handle_event(&DocEvent::StartDocument).unwrap();
        assert!(matches!(session.report(), Err(Error::NotFinished)));
        assert!(matches!(
            session.document_digest(DigestAlgorithm::Md5),
            Err(Error::NotFinished)
        ));
    }

    #[test]
    fn filter_report_matches_batch_verifier() {
        let doc = b"<doc><p class='foo'>Hello</p><p> there\nchum</p></doc>";
        for placement in [PiPlacement::AtStart, PiPlacement::AtEnd] {
            for algorithm in ["md5", "sha1", "sha256"] {
                let signed =
                    sign_document(doc, algorithm, None, placement, Default::default()).unwrap();
                let batch = verify_document(&signed, None).unwrap();
                let (_, filtered, _) = run_filter(&signed);
                assert_eq!(filtered, batch);
                assert!(filtered.all_verified());
            }
        }
    }

    #[test]
    fn filter_handles_following_element_targets() {
        let signed = sign_document(
            b"<d><e a='1'><f>deep</f>text</e><g/></d>",
            "sha256",
            None,
            PiPlacement::AtStart,
            SignatureTarget::FollowingElement,
        )
        .unwrap();
        let batch = verify_document(&signed, None).unwrap();
        let (_, filtered, _) = run_filter(&signed);
        assert_eq!(filtered, batch);
        assert!(filtered.all_verified(), "{filtered:?}");
    }

    #[test]
    fn nested_following_captures() {
        // two PIs whose targets nest: the outer signs <e>…</e>, the inner
        // (placed inside e, before f) signs <f/>
        let doc = b"<d>\
            <?signature algorithm='sha1' content='SIGA' target='following::*[1]'?>\
            <e><?signature algorithm='md5' content='SIGB' target='following::*[1]'?><f>x</f></e>\
            </d>";
        let batch = verify_document(doc, None).unwrap();
        let (_, filtered, _) = run_filter(doc);
        assert_eq!(filtered, batch);
        // both fail (placeholder digests) but with the right structure
        assert_eq!(filtered.entries.len(), 2);
        assert!(filtered
            .entries
            .iter()
            .all(|e| e.status == SignatureStatus::Failed));
    }

    #[test]
    fn malformed_unsupported_and_missing_element_cases_match_batch() {
        let doc = b"<d>\
            <?signature algorithm='sha512' content='00'?>\
            <?signature nonsense?>\
            x<?signature algorithm='sha1' content='00' target='following::*[1]'?>\
            </d>";
        let batch = verify_document(doc, None).unwrap();
        let (_, filtered, _) = run_filter(doc);
        assert_eq!(filtered, batch);
        let statuses: Vec<_> = filtered.entries.iter().map(|e| e.status).collect();
        assert_eq!(
            statuses,
            vec![
                SignatureStatus::UnsupportedAlgorithm,
                SignatureStatus::Malformed,
                SignatureStatus::Malformed,
            ]
        );
    }

    #[test]
    fn two_sessions_agree() {
        let signed = sign_document(
            b"<d><e>one</e></d>",
            "sha1",
            None,
            PiPlacement::AtEnd,
            Default::default(),
        )
        .unwrap();
        let (_, first, d1) = run_filter(&signed);
        let (_, second, d2) = run_filter(&signed);
        assert_eq!(first, second);
        assert_eq!(d1, d2);
    }
}
