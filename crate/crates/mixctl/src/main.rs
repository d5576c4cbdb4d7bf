use clap::Parser;
use mixctl::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("mixctl: {e}");
        std::process::exit(e.exit_code());
    }
}
