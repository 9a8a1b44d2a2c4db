//! Identity-transform benchmark: bare pipeline vs. normalizing filter.
//!
//! Parses randomly generated documents and immediately reserializes them,
//! once through the bare parser/serializer pair and once with the
//! digesting filter wrapped around the serializer. The table mirrors the
//! usual presentation: input size, both wall times, and the ratio.
//!
//! Run with: `cargo run --release --example bench_identity [-- mb...]`

fn main() -> xmlnorm::Result<()> {
    let sizes: Vec<usize> = {
        let args: Vec<usize> = std::env::args()
            .skip(1)
            .filter_map(|a| a.parse().ok())
            .collect();
        if args.is_empty() {
            vec![1, 4, 16]
        } else {
            args
        }
    }
    .into_iter()
    .map(|mb| mb * 1024 * 1024)
    .collect();

    eprintln!("generating and timing (3 repetitions per size)...");
    let results = xmlnorm::bench_identity(&sizes, 3, 1)?;
    print!("{}", xmlnorm::corpus::render_bench_table(&results));

    let points: Vec<(f64, f64)> = results
        .iter()
        .map(|r| (r.input_size as f64, r.filtered_seconds))
        .collect();
    println!(
        "\nfiltered time vs size: linear fit R^2 = {:.4}",
        xmlnorm::corpus::linear_fit_r2(&points)
    );
    Ok(())
}
