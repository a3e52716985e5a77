use clap::Parser;

fn main() {
    let cli = gridbid::cli::Cli::parse();
    if let Err(e) = gridbid::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
