use clap::Parser;
use tie_core::Error;

fn main() {
    let cli = tie_cli::Cli::parse();
    if let Err(e) = tie_cli::run(cli) {
        eprintln!("error: {e}");
        let code = match e {
            Error::Config(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}
