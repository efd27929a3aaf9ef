use clap::Parser;

fn main() {
    let cli = fdbss::cli::Cli::parse();
    if let Err(err) = fdbss::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
