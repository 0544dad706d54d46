use clap::Parser;
use passnet::cli;

fn main() {
    let args = cli::Cli::parse();
    std::process::exit(cli::run(args));
}
