use clap::Parser;

use pmclass::cli::{run, Cli};

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("pmclass: {e}");
        std::process::exit(e.exit_code());
    }
}
