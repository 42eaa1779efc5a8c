use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = papred::cli::run(papred::cli::Cli::parse()) {
        eprintln!("papred: {e}");
        std::process::exit(1);
    }
}
