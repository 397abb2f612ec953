use clap::Parser;

fn main() {
    let cli = geoloc::commands::Cli::parse();
    if let Err(err) = geoloc::commands::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(geoloc::exit_code(&err));
    }
}
