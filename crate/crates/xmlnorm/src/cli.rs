//! Batch command-line front end.
//!
//! One subcommand per invocation; input from a file argument or standard
//! input. Blob output is raw bytes with no trailing addition, and
//! diagnostics never mix into standard output. Exit codes: 0 for success
//! (or all signatures verified), 1 when at least one signature did not
//! verify, 2 for usage, parse or I/O errors.

use std::io::{Read, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Result;
use crate::signature::{GpgSigner, PiPlacement, SignatureTarget, Signer, VerificationReport};

/// Environment variable naming the default external signer executable.
pub const SIGNER_ENV: &str = "XMLNORM_SIGNER";

#[derive(Parser)]
#[command(name = "xmlnorm", version, about = "Normalize, digest, sign and verify XML")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    Start,
    End,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    /// The whole document.
    Document,
    /// The element immediately following the signature PI.
    Following,
}

#[derive(Subcommand)]
enum Command {
    /// Write the unnormalized ESIS textual form (diagnostic)
    Esis { input: Option<PathBuf> },
    /// Write the normalized blob bytes (suitable for `file.norm`)
    Norm { input: Option<PathBuf> },
    /// Write the lowercase hex digest of the normalized blob
    Digest {
        input: Option<PathBuf>,
        #[arg(long, default_value = "sha1")]
        algorithm: String,
    },
    /// Embed a signature PI into the document
    Sign {
        input: Option<PathBuf>,
        /// md5, sha1, sha256 or pgp
        #[arg(long, default_value = "sha1")]
        algorithm: String,
        #[arg(long, value_enum, default_value = "end")]
        placement: PlacementArg,
        #[arg(long, value_enum, default_value = "document")]
        target: TargetArg,
        /// External PGP executable; defaults to $XMLNORM_SIGNER
        #[arg(long)]
        signer_command: Option<String>,
    },
    /// Check every signature PI and report one line per signature
    Verify {
        input: Option<PathBuf>,
        /// External PGP executable; defaults to $XMLNORM_SIGNER
        #[arg(long)]
        signer_command: Option<String>,
    },
    /// Reconstruct equivalent XML from a normalized blob
    Denorm { input: Option<PathBuf> },
}

fn read_input(path: &Option<PathBuf>) -> std::io::Result<Vec<u8>> {
    match path {
        Some(p) if p.as_os_str() != "-" => std::fs::read(p),
        _ => {
            let mut bytes = Vec::new();
            std::io::stdin().lock().read_to_end(&mut bytes)?;
            Ok(bytes)
        }
    }
}

fn resolve_signer(cli_flag: &Option<String>) -> Option<GpgSigner> {
    cli_flag
        .clone()
        .or_else(|| std::env::var(SIGNER_ENV).ok())
        .map(GpgSigner::new)
}

fn write_report(report: &VerificationReport, out: &mut impl Write) -> std::io::Result<()> {
    for (i, entry) in report.entries.iter().enumerate() {
        let target = entry
            .target
            .map(|t| t.as_literal())
            .unwrap_or("?");
        let algorithm = entry.algorithm.as_deref().unwrap_or("?");
        write!(out, "#{} target={target} algorithm={algorithm} status={}", i + 1, entry.status)?;
        if !entry.diagnostic.is_empty() {
            write!(out, " -- {}", entry.diagnostic.replace('\n', " / "))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn run_command(cli: &Cli, stdout: &mut impl Write) -> Result<i32> {
    match &cli.command {
        Command::Esis { input } => {
            let xml = read_input(input)?;
            let text = crate::unnormalized_esis(&xml)?;
            stdout.write_all(text.as_bytes())?;
            Ok(0)
        }
        Command::Norm { input } => {
            let xml = read_input(input)?;
            let blob = crate::normalize_xml(&xml)?;
            stdout.write_all(blob.as_bytes())?;
            Ok(0)
        }
        Command::Digest { input, algorithm } => {
            let xml = read_input(input)?;
            let algorithm = algorithm.parse::<crate::DigestAlgorithm>()?;
            let blob = crate::normalize_xml(&xml)?;
            writeln!(stdout, "{}", crate::digest(&blob, algorithm))?;
            Ok(0)
        }
        Command::Sign {
            input,
            algorithm,
            placement,
            target,
            signer_command,
        } => {
            let xml = read_input(input)?;
            let signer = resolve_signer(signer_command);
            let signed = crate::sign_document(
                &xml,
                algorithm,
                signer.as_ref().map(|s| s as &dyn Signer),
                match placement {
                    PlacementArg::Start => PiPlacement::AtStart,
                    PlacementArg::End => PiPlacement::AtEnd,
                },
                match target {
                    TargetArg::Document => SignatureTarget::WholeDocument,
                    TargetArg::Following => SignatureTarget::FollowingElement,
                },
            )?;
            stdout.write_all(&signed)?;
            Ok(0)
        }
        Command::Verify {
            input,
            signer_command,
        } => {
            let xml = read_input(input)?;
            let signer = resolve_signer(signer_command);
            let report =
                crate::verify_document(&xml, signer.as_ref().map(|s| s as &dyn Signer))?;
            write_report(&report, stdout)?;
            if report.entries.is_empty() {
                eprintln!("xmlnorm: no signatures found");
            }
            Ok(if report.all_verified() { 0 } else { 1 })
        }
        Command::Denorm { input } => {
            let blob = read_input(input)?;
            let xml = crate::denormalize(&blob)?;
            stdout.write_all(xml.as_bytes())?;
            Ok(0)
        }
    }
}

/// Runs a parsed invocation, returning the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    match run_command(cli, &mut out) {
        Ok(code) => {
            if out.flush().is_err() {
                return 2;
            }
            code
        }
        Err(e) => {
            let _ = out.flush();
            eprintln!("xmlnorm: {e}");
            2
        }
    }
}
