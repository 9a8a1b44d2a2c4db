use clap::Parser;

fn main() {
    let cli = xmlnorm::cli::Cli::parse();
    std::process::exit(xmlnorm::cli::run(&cli));
}
