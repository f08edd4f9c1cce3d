use clap::Parser;
use spoofbench::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
