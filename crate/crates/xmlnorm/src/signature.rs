//! `<?signature ...?>` processing instructions: parsing, embedding,
//! digesting and verification.
//!
//! The PI data is a sequence of key-value pairs with quoted values:
//!
//! ```text
//! <?signature algorithm='sha1' content='da39a3…' target='/'?>
//! <?signature armor='-----BEGIN PGP SIGNATURE-----
//! ...
//! -----END PGP SIGNATURE-----'?>
//! ```
//!
//! `algorithm` names a digest or `pgp`; `content` carries the hex digest
//! or the ASCII-armored signature (`armor` is accepted as an alias that
//! implies `pgp`); `target` is one of the literal strings `/` or
//! `following::*[1]` and defaults to the whole document. The signed bytes
//! are always the normalized blob of the target, which by construction
//! excludes every signature PI — so a document can carry its own
//! signature without circularity.

use std::path::PathBuf;
use std::process::Command;
use std::str::FromStr;

use crate::digest::{digest, DigestAlgorithm};
use crate::error::{Error, Result};
use crate::esis::{events_to_records, EsisRecord};
use crate::event::DocEvent;
use crate::normalize::{normalize, NormalizeOptions, NormalizeScope, NormalizedBlob};
use crate::parse::events_from_xml;
use crate::writer::{write_events, WriterConfig};

/// What a signature covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignatureTarget {
    #[default]
    WholeDocument,
    /// The element immediately following the PI in document order.
    FollowingElement,
}

impl SignatureTarget {
    /// The literal `target` value for this scope.
    pub fn as_literal(&self) -> &'static str {
        match self {
            SignatureTarget::WholeDocument => "/",
            SignatureTarget::FollowingElement => "following::*[1]",
        }
    }

    /// Accepts exactly the two permitted literals; these look like XPath
    /// but nothing else is.
    pub fn from_literal(s: &str) -> Option<Self> {
        match s {
            "/" => Some(SignatureTarget::WholeDocument),
            "following::*[1]" => Some(SignatureTarget::FollowingElement),
            _ => None,
        }
    }
}

impl std::fmt::Display for SignatureTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_literal())
    }
}

/// Parsed form of a signature PI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignaturePi {
    pub algorithm: String,
    pub content: String,
    pub target: SignatureTarget,
    /// Unrecognized keys, preserved in order but otherwise ignored.
    pub extra: Vec<(String, String)>,
}

/// Parses signature-PI data (the text after the `signature` target).
pub fn parse_signature_pi(data: &str) -> Result<SignaturePi> {
    let pairs = parse_key_values(data)?;
    let mut algorithm: Option<String> = None;
    let mut content: Option<String> = None;
    let mut armored = false;
    let mut target: Option<String> = None;
    let mut extra = Vec::new();
    for (key, value) in pairs {
        match key.as_str() {
            "algorithm" => set_once(&mut algorithm, "algorithm", value)?,
            "content" => set_once(&mut content, "content", value)?,
            "armor" => {
                set_once(&mut content, "content", value)?;
                armored = true;
            }
            "target" => set_once(&mut target, "target", value)?,
            _ => extra.push((key, value)),
        }
    }
    let content = content.ok_or_else(|| Error::MalformedPi("missing `content` key".into()))?;
    let algorithm = match algorithm {
        Some(a) => a,
        None if armored => "pgp".to_string(),
        None => return Err(Error::MalformedPi("missing `algorithm` key".into())),
    };
    let target = match target {
        None => SignatureTarget::WholeDocument,
        Some(literal) => SignatureTarget::from_literal(&literal).ok_or_else(|| {
            Error::MalformedPi(format!("target `{literal}` is not a permitted literal"))
        })?,
    };
    Ok(SignaturePi {
        algorithm,
        content,
        target,
        extra,
    })
}

fn set_once(slot: &mut Option<String>, key: &str, value: String) -> Result<()> {
    if slot.is_some() {
        return Err(Error::MalformedPi(format!("duplicate `{key}` key")));
    }
    *slot = Some(value);
    Ok(())
}

/// Key-value scanner: `key='value'` or `key="value"`, whitespace
/// separated; values may span lines.
fn parse_key_values(data: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut rest = data;
    loop {
        rest = rest.trim_start();
        if rest.is_empty() {
            return Ok(pairs);
        }
        let eq = rest
            .find('=')
            .ok_or_else(|| Error::MalformedPi(format!("expected `key=`, found `{rest}`")))?;
        let key = rest[..eq].trim_end();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::MalformedPi(format!("invalid key `{key}`")));
        }
        let after_eq = rest[eq + 1..].trim_start();
        let quote = match after_eq.chars().next() {
            Some(q @ ('\'' | '"')) => q,
            _ => {
                return Err(Error::MalformedPi(format!(
                    "value for `{key}` is not quoted"
                )))
            }
        };
        let value_and_rest = &after_eq[1..];
        let end = value_and_rest.find(quote).ok_or_else(|| {
            Error::MalformedPi(format!("unterminated quoted value for `{key}`"))
        })?;
        pairs.push((key.to_string(), value_and_rest[..end].to_string()));
        rest = &value_and_rest[end + 1..];
    }
}

impl SignaturePi {
    /// Renders the PI data. Hash algorithms use `algorithm=`/`content=`;
    /// pgp uses the `armor=` form. The quote character is whichever one
    /// the value does not contain.
    pub fn render_data(&self) -> Result<String> {
        let mut out = String::new();
        if self.algorithm == "pgp" {
            out.push_str(&render_pair("armor", &self.content)?);
        } else {
            out.push_str(&render_pair("algorithm", &self.algorithm)?);
            out.push(' ');
            out.push_str(&render_pair("content", &self.content)?);
        }
        if self.target == SignatureTarget::FollowingElement {
            out.push(' ');
            out.push_str(&render_pair("target", self.target.as_literal())?);
        }
        Ok(out)
    }
}

fn render_pair(key: &str, value: &str) -> Result<String> {
    let quote = if !value.contains('\'') {
        '\''
    } else if !value.contains('"') {
        '"'
    } else {
        return Err(Error::MalformedPi(format!(
            "value for `{key}` contains both quote characters"
        )));
    };
    Ok(format!("{key}={quote}{value}{quote}"))
}

/// Capability interface for external signing tools.
pub trait Signer {
    /// Produces an ASCII-armored detached signature over `bytes`.
    fn sign(&self, bytes: &[u8]) -> Result<String>;
    /// Checks `armored` against `bytes`; `Ok((false, why))` is a clean
    /// "did not verify", `Err` an invocation failure.
    fn verify(&self, bytes: &[u8], armored: &str) -> Result<(bool, String)>;
}

/// Detached-armored signing via an external PGP executable
/// (`gpg --detach-sign --armor` / `gpg --verify file.sig file.norm`).
pub struct GpgSigner {
    program: String,
    home_dir: Option<PathBuf>,
}

impl GpgSigner {
    pub fn new(program: impl Into<String>) -> Self {
        GpgSigner {
            program: program.into(),
            home_dir: None,
        }
    }

    /// Uses a dedicated GnuPG home (keyring) directory.
    pub fn with_home(mut self, home: impl Into<PathBuf>) -> Self {
        self.home_dir = Some(home.into());
        self
    }

    fn command(&self) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.arg("--batch").arg("--yes");
        if let Some(home) = &self.home_dir {
            cmd.arg("--homedir").arg(home);
        }
        cmd
    }
}

impl Signer for GpgSigner {
    fn sign(&self, bytes: &[u8]) -> Result<String> {
        let dir = tempfile::tempdir()?;
        let norm = dir.path().join("file.norm");
        let sig = dir.path().join("file.sig");
        std::fs::write(&norm, bytes)?;
        let output = self
            .command()
            .arg("--armor")
            .arg("--detach-sign")
            .arg("--output")
            .arg(&sig)
            .arg(&norm)
            .output()
            .map_err(|e| Error::Signer(format!("cannot run `{}`: {e}", self.program)))?;
        if !output.status.success() {
            return Err(Error::Signer(format!(
                "`{}` exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Ok(std::fs::read_to_string(&sig)?)
    }

    fn verify(&self, bytes: &[u8], armored: &str) -> Result<(bool, String)> {
        let dir = tempfile::tempdir()?;
        let norm = dir.path().join("file.norm");
        let sig = dir.path().join("file.sig");
        std::fs::write(&norm, bytes)?;
        std::fs::write(&sig, armored)?;
        let output = self
            .command()
            .arg("--verify")
            .arg(&sig)
            .arg(&norm)
            .output()
            .map_err(|e| Error::Signer(format!("cannot run `{}`: {e}", self.program)))?;
        let diagnostic = String::from_utf8_lossy(&output.stderr).trim().to_string();
        Ok((output.status.success(), diagnostic))
    }
}

/// Outcome for one signature PI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignatureStatus {
    Verified,
    Failed,
    UnsupportedAlgorithm,
    Malformed,
    NoSigner,
}

impl std::fmt::Display for SignatureStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SignatureStatus::Verified => "verified",
            SignatureStatus::Failed => "failed",
            SignatureStatus::UnsupportedAlgorithm => "unsupported_algorithm",
            SignatureStatus::Malformed => "malformed",
            SignatureStatus::NoSigner => "no_signer",
        })
    }
}

/// One report entry; `target`/`algorithm` are absent when the PI itself
/// could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureCheck {
    pub target: Option<SignatureTarget>,
    pub algorithm: Option<String>,
    pub status: SignatureStatus,
    pub diagnostic: String,
}

/// Per-signature outcomes, one entry per signature PI in document order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerificationReport {
    pub entries: Vec<SignatureCheck>,
}

impl VerificationReport {
    /// True when every entry verified (vacuously true with no entries).
    pub fn all_verified(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.status == SignatureStatus::Verified)
    }
}

/// Checks that can be made without the blob: a pgp signature with no
/// signer attached, or an algorithm outside the registry. Applied before
/// the target's blob is computed so the batch and streaming verifiers
/// agree even when a PI has several defects at once.
pub(crate) fn pre_check(pi: &SignaturePi, signer_present: bool) -> Option<SignatureCheck> {
    let base = |status, diagnostic: String| SignatureCheck {
        target: Some(pi.target),
        algorithm: Some(pi.algorithm.clone()),
        status,
        diagnostic,
    };
    if pi.algorithm == "pgp" {
        if !signer_present {
            return Some(base(
                SignatureStatus::NoSigner,
                "no signer configured for pgp verification".into(),
            ));
        }
        return None;
    }
    match DigestAlgorithm::from_str(&pi.algorithm) {
        Ok(_) => None,
        Err(_) => Some(base(
            SignatureStatus::UnsupportedAlgorithm,
            format!("algorithm `{}` is not in the registry", pi.algorithm),
        )),
    }
}

/// Resolves one parsed signature PI against the blob it covers.
pub(crate) fn check_signature(
    pi: &SignaturePi,
    blob: &NormalizedBlob,
    signer: Option<&dyn Signer>,
) -> SignatureCheck {
    let base = |status, diagnostic: String| SignatureCheck {
        target: Some(pi.target),
        algorithm: Some(pi.algorithm.clone()),
        status,
        diagnostic,
    };
    if pi.algorithm == "pgp" {
        return match signer {
            None => base(
                SignatureStatus::NoSigner,
                "no signer configured for pgp verification".into(),
            ),
            Some(signer) => match signer.verify(blob.as_bytes(), &pi.content) {
                Ok((true, diag)) => base(SignatureStatus::Verified, diag),
                Ok((false, diag)) => base(SignatureStatus::Failed, diag),
                Err(e) => base(SignatureStatus::Failed, e.to_string()),
            },
        };
    }
    match DigestAlgorithm::from_str(&pi.algorithm) {
        Err(_) => base(
            SignatureStatus::UnsupportedAlgorithm,
            format!("algorithm `{}` is not in the registry", pi.algorithm),
        ),
        Ok(algorithm) => {
            let computed = digest(blob, algorithm);
            if computed.eq_ignore_ascii_case(pi.content.trim()) {
                base(SignatureStatus::Verified, String::new())
            } else {
                base(
                    SignatureStatus::Failed,
                    format!("digest mismatch: computed {computed}"),
                )
            }
        }
    }
}

pub(crate) fn malformed_check(error: &Error) -> SignatureCheck {
    SignatureCheck {
        target: None,
        algorithm: None,
        status: SignatureStatus::Malformed,
        diagnostic: error.to_string(),
    }
}

/// Computes the blob a signature PI at record index `pi_index` covers.
pub(crate) fn blob_for_target(
    records: &[EsisRecord],
    pi_index: usize,
    target: SignatureTarget,
) -> Result<NormalizedBlob> {
    match target {
        SignatureTarget::WholeDocument => normalize(records, &NormalizeOptions::default()),
        SignatureTarget::FollowingElement => normalize(
            &records[pi_index + 1..],
            &NormalizeOptions {
                scope: NormalizeScope::SubtreeOfNextElement,
            },
        ),
    }
}

/// Batch verification: parses the document, locates every signature PI and
/// reports each one's status. Verification failures are reported, never
/// thrown; only parse errors abort.
pub fn verify_document(xml: &[u8], signer: Option<&dyn Signer>) -> Result<VerificationReport> {
    let events = events_from_xml(xml)?;
    let records = events_to_records(&events);
    let mut whole: Option<NormalizedBlob> = None;
    let mut entries = Vec::new();
    for (index, record) in records.iter().enumerate() {
        let EsisRecord::Pi { target, data } = record else {
            continue;
        };
        if target != "signature" {
            continue;
        }
        let pi = match parse_signature_pi(data) {
            Ok(pi) => pi,
            Err(e) => {
                entries.push(malformed_check(&e));
                continue;
            }
        };
        if let Some(early) = pre_check(&pi, signer.is_some()) {
            entries.push(early);
            continue;
        }
        let blob = match pi.target {
            SignatureTarget::WholeDocument => {
                if whole.is_none() {
                    whole = Some(normalize(&records, &NormalizeOptions::default())?);
                }
                whole.clone().unwrap()
            }
            SignatureTarget::FollowingElement => {
                match blob_for_target(&records, index, pi.target) {
                    Ok(blob) => blob,
                    Err(e @ Error::NoTargetElement) => {
                        entries.push(SignatureCheck {
                            target: Some(pi.target),
                            algorithm: Some(pi.algorithm.clone()),
                            status: SignatureStatus::Malformed,
                            diagnostic: e.to_string(),
                        });
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        entries.push(check_signature(&pi, &blob, signer));
    }
    Ok(VerificationReport { entries })
}

/// Where the PI is embedded relative to the root element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PiPlacement {
    /// Immediately after the root start tag.
    AtStart,
    /// Immediately before the root end tag.
    #[default]
    AtEnd,
}

/// Signs a document: computes the digest or external signature of the
/// target's normalized blob (independent of any signature PI, existing or
/// inserted) and re-serializes the document with the PI embedded.
pub fn sign_document(
    xml: &[u8],
    algorithm: &str,
    signer: Option<&dyn Signer>,
    placement: PiPlacement,
    target: SignatureTarget,
) -> Result<Vec<u8>> {
    let events = events_from_xml(xml)?;
    let records = events_to_records(&events);

    let blob = match target {
        SignatureTarget::WholeDocument => normalize(&records, &NormalizeOptions::default())?,
        SignatureTarget::FollowingElement => match placement {
            PiPlacement::AtEnd => return Err(Error::NoTargetElement),
            PiPlacement::AtStart => {
                let root = records
                    .iter()
                    .position(EsisRecord::is_elem_start)
                    .ok_or(Error::NoTargetElement)?;
                normalize(
                    &records[root + 1..],
                    &NormalizeOptions {
                        scope: NormalizeScope::SubtreeOfNextElement,
                    },
                )?
            }
        },
    };

    let content = if algorithm == "pgp" {
        let signer =
            signer.ok_or_else(|| Error::Signer("no signer configured for pgp".to_string()))?;
        signer.sign(blob.as_bytes())?
    } else {
        let algorithm = DigestAlgorithm::from_str(algorithm)?;
        digest(&blob, algorithm)
    };

    let pi = SignaturePi {
        algorithm: algorithm.to_string(),
        content: content.trim_end().to_string(),
        target,
        extra: Vec::new(),
    };
    let pi_event = DocEvent::ProcessingInstruction {
        target: "signature".to_string(),
        data: pi.render_data()?,
    };

    let insert_at = match placement {
        PiPlacement::AtStart => {
            events
                .iter()
                .position(|e| matches!(e, DocEvent::StartElement { .. }))
                .ok_or(Error::NoTargetElement)?
                + 1
        }
        PiPlacement::AtEnd => events
            .iter()
            .rposition(|e| matches!(e, DocEvent::EndElement { .. }))
            .ok_or(Error::NoTargetElement)?,
    };
    let mut signed = events;
    signed.insert(insert_at, pi_event);
    write_events(&signed, WriterConfig::default())
}
