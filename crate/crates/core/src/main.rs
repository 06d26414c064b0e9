use clap::Parser;
use smart_exam::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
