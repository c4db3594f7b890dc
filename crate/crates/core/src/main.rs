use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = sspd::cli::Cli::parse();
    if let Err(e) = sspd::cli::run(cli) {
        eprintln!("{}", sspd::cli::error_line(&e));
        std::process::exit(match e {
            sspd::SspdError::Usage(_) | sspd::SspdError::Config(_) => 2,
            _ => 1,
        });
    }
}
