use clap::Parser;

fn main() {
    if let Err(e) = neurath_cli::run(neurath_cli::Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
