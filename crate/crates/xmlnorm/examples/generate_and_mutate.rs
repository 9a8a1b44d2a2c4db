//! Generate a random document and walk it through every mutation kind.
//!
//! Seven mutations are equivalence-preserving — the normalized blob stays
//! byte-identical however the surface syntax changes — and four are
//! breaking: any real change to names, values or content moves the blob.
//!
//! Run with: `cargo run --example generate_and_mutate [-- size-bytes seed]`

use xmlnorm::{generate, mutate, normalize_xml, CorpusSpec, Mutation};

fn main() -> xmlnorm::Result<()> {
    let mut args = std::env::args().skip(1);
    let size: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2048);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let doc = generate(&CorpusSpec::new(size, seed));
    println!("generated {} bytes (seed {seed}):", doc.len());
    println!("{}...\n", String::from_utf8_lossy(&doc[..doc.len().min(240)]));

    let blob = normalize_xml(&doc)?;
    println!("blob: {} bytes\n", blob.len());

    for mutation in Mutation::EQUIVALENCE_PRESERVING
        .iter()
        .chain(Mutation::EQUIVALENCE_BREAKING.iter())
    {
        let mutated = mutate(&doc, *mutation)?;
        let mutated_blob = normalize_xml(&mutated)?;
        let same = mutated_blob == blob;
        println!(
            "{:<24} document {:>+6} bytes   blob {}",
            mutation.name(),
            mutated.len() as isize - doc.len() as isize,
            if same { "unchanged" } else { "CHANGED" },
        );
        assert_eq!(same, mutation.preserves_equivalence());
    }
    Ok(())
}
