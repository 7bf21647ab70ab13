use clap::Parser;

fn main() {
    let cli = aecz_cli::Cli::parse();
    if let Err(e) = aecz_cli::run(cli) {
        eprintln!("aecz: {e}");
        std::process::exit(e.exit_code());
    }
}
