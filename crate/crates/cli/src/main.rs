use clap::Parser;

fn main() {
    let cli = qdyn_cli::Cli::parse();
    std::process::exit(qdyn_cli::run(&cli));
}
