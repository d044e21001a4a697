use clap::Parser;

fn main() {
    let cli = spitzkit_cli::Cli::parse();
    if let Err(e) = spitzkit_cli::run(cli) {
        eprintln!("{}", e.to_line());
        std::process::exit(e.exit_code());
    }
}
