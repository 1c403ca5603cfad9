use clap::Parser;

use outagewatch::cli::{self, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(cli::exit_code(&e));
    }
}
