use clap::Parser;

fn main() {
    let cli = adamlab_cli::Cli::parse();
    if let Err(e) = adamlab_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
