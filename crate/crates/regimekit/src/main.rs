use clap::Parser;
use regimekit::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error {e}");
        std::process::exit(e.exit_code());
    }
}
