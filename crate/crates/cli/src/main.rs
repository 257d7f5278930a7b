use clap::Parser;

fn main() {
    let args: Vec<_> = std::env::args_os().collect();
    // Peek at -v before full parsing so config errors are logged too.
    let verbose = ctf3d_cli::Cli::try_parse_from(&args)
        .map(|c| c.verbose)
        .unwrap_or(0);
    env_logger::Builder::new()
        .filter_level(ctf3d_cli::log_level(verbose))
        .parse_default_env()
        .init();
    std::process::exit(ctf3d_cli::main_entry(args));
}
