use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use condgan_cli::error::{EXIT_OK, EXIT_USAGE};
use condgan_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_OK as u8);
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprint!("{msg}");
            if !msg.contains("Usage:") {
                let mut cmd = Cli::command();
                cmd.build();
                let name = std::env::args().nth(1).and_then(|a| cmd.find_subcommand_mut(&a).map(|s| s.render_usage()));
                eprintln!("\n{}", name.unwrap_or_else(|| Cli::command().render_usage()));
            }
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: --threads must be a positive number");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
