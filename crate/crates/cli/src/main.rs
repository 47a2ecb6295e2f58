use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("ATTRIQ_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match attriq::args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.render().to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            eprintln!("{}", attriq::error::CliError::usage(first));
            eprintln!("{detail}");
            std::process::exit(2);
        }
    };
    let stdout = std::io::stdout();
    if let Err(e) = attriq::run(cli, &mut stdout.lock()) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
