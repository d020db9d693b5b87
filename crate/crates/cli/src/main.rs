use clap::Parser;

fn main() {
    let cli = hybrid_field_cli::Cli::parse();
    if let Err(e) = hybrid_field_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
