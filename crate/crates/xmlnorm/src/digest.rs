//! Cryptographic digests over normalized blobs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use md5::Md5;
use sha1::Sha1;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The registered digest algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DigestAlgorithm {
    Md5,
    Sha1,
    Sha256,
}

impl DigestAlgorithm {
    pub const ALL: [DigestAlgorithm; 3] = [
        DigestAlgorithm::Md5,
        DigestAlgorithm::Sha1,
        DigestAlgorithm::Sha256,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DigestAlgorithm::Md5 => "md5",
            DigestAlgorithm::Sha1 => "sha1",
            DigestAlgorithm::Sha256 => "sha256",
        }
    }
}

impl fmt::Display for DigestAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DigestAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md5" => Ok(DigestAlgorithm::Md5),
            "sha1" => Ok(DigestAlgorithm::Sha1),
            "sha256" => Ok(DigestAlgorithm::Sha256),
            other => Err(Error::UnsupportedAlgorithm(other.to_string())),
        }
    }
}

/// Computes the lowercase hex digest of `bytes`.
pub fn digest(bytes: impl AsRef<[u8]>, algorithm: DigestAlgorithm) -> String {
    let mut ctx = DigestContext::new(algorithm);
    ctx.update(bytes.as_ref());
    ctx.finish()
}

/// Incremental digest state. Implements [`Write`] so it can sit directly
/// under a [`Normalizer`](crate::Normalizer) and hash the blob as it is
/// emitted, without buffering the document.
pub enum DigestContext {
    Md5(Md5),
    Sha1(Sha1),
    Sha256(Sha256),
}

impl DigestContext {
    pub fn new(algorithm: DigestAlgorithm) -> Self {
        match algorithm {
            DigestAlgorithm::Md5 => DigestContext::Md5(Md5::new()),
            DigestAlgorithm::Sha1 => DigestContext::Sha1(Sha1::new()),
            DigestAlgorithm::Sha256 => DigestContext::Sha256(Sha256::new()),
        }
    }

    pub fn algorithm(&self) -> DigestAlgorithm {
        match self {
            DigestContext::Md5(_) => DigestAlgorithm::Md5,
            DigestContext::Sha1(_) => DigestAlgorithm::Sha1,
            DigestContext::Sha256(_) => DigestAlgorithm::Sha256,
        }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        match self {
            DigestContext::Md5(d) => d.update(bytes),
            DigestContext::Sha1(d) => d.update(bytes),
            DigestContext::Sha256(d) => d.update(bytes),
        }
    }

    /// Lowercase hex of the final digest.
    pub fn finish(self) -> String {
        fn hex(bytes: &[u8]) -> String {
            bytes.iter().map(|b| format!("{b:02x}")).collect()
        }
        match self {
            DigestContext::Md5(d) => hex(&d.finalize()),
            DigestContext::Sha1(d) => hex(&d.finalize()),
            DigestContext::Sha256(d) => hex(&d.finalize()),
        }
    }
}

impl Write for DigestContext {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_constants() {
        // published digests of the empty input
        assert_eq!(
            digest(b"", DigestAlgorithm::Sha1),
            "da39a3ee5e6b4b0d3255bfef95601890afd80709"
        );
        assert_eq!(
            digest(b"", DigestAlgorithm::Md5),
            "d41d8cd98f00b204e9800998ecf8427e"
        );
        assert_eq!(
            digest(b"", DigestAlgorithm::Sha256),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn minimal_blob_matches_external_tools() {
        // frozen from `md5sum`/`sha1sum` over the same eight bytes
        let blob = b"(a\r\n)a\r\n";
        assert_eq!(
            digest(blob, DigestAlgorithm::Md5),
            "b5021d8435bff9d2542abc12f48da0ba"
        );
        assert_eq!(
            digest(blob, DigestAlgorithm::Sha1),
            "25a747af7a0c8990abca32a4a6fa2a521d4031d8"
        );
    }

    #[test]
    fn incremental_equals_one_shot() {
        let mut ctx = DigestContext::new(DigestAlgorithm::Sha256);
        ctx.update(b"(a\r");
        ctx.update(b"\n)a\r\n");
        assert_eq!(ctx.finish(), digest(b"(a\r\n)a\r\n", DigestAlgorithm::Sha256));
    }

    #[test]
    fn unknown_algorithm_is_rejected() {
        assert!(matches!(
            "sha512".parse::<DigestAlgorithm>(),
            Err(Error::UnsupportedAlgorithm(_))
        ));
    }
}
