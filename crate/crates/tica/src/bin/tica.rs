use clap::Parser;

fn main() {
    let cli = tica::cli::Cli::parse();
    if let Err(err) = tica::cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
