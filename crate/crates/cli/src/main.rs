use clap::Parser;

fn main() {
    let cli = zsas_cli::args::Cli::parse();
    std::process::exit(zsas_cli::run_cli(&cli));
}
