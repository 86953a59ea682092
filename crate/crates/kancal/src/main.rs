use clap::Parser;

fn main() {
    let args = kancal::cli::Cli::parse();
    if let Err(e) = kancal::cli::execute(args) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
