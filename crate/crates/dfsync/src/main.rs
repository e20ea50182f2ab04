use clap::Parser;

fn main() {
    let cli = dfsync::cli::Cli::parse();
    std::process::exit(dfsync::cli::run(cli));
}
