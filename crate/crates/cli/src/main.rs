use clap::Parser;

fn main() {
    let cli = dummynet_cli::Cli::parse();
    std::process::exit(dummynet_cli::run(&cli));
}
