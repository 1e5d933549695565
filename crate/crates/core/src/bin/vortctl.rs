use clap::Parser;

fn main() {
    let cli = vortctl::cli::Cli::parse();
    std::process::exit(vortctl::cli::execute(cli));
}
