use clap::Parser;

fn main() {
    let cli = modelift::cli::Cli::parse();
    std::process::exit(modelift::cli::run(cli));
}
