use clap::Parser;

fn main() {
    let cli = nib::cli::Cli::parse();
    if let Err(e) = nib::cli::execute(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
